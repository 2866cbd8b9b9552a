"""Periodic separable 2-D DWT over a fixed wavelet menu, plus quad-tree assembly.

Conventions
-----------
* Boundary: periodic extension, so every level halves the subband exactly.
* Orientation: lowpass along rows + highpass along columns is the
  horizontal detail ``H``; highpass along rows + lowpass along columns is
  ``V``; highpass both ways is ``D``.
* Level 1 is the finest decomposition level. In a :class:`QuadForest` the
  scale index runs the other way: ``t = 1`` is the coarsest detail subband.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Dict, List, Tuple

import numpy as np

from .ingest import ChannelPlane

MENU = ("haar", "db2", "sym3", "coif1", "bior1.3", "rbior1.3", "dmey")
ORIENTATIONS = ("H", "V", "D")
BOUNDARY_RULE = "periodic"
ORIENTATION_CONVENTION = "row-lowpass+column-highpass=H; row-highpass+column-lowpass=V"


class UnknownWaveletError(KeyError):
    pass


@dataclass(frozen=True)
class FilterBank:
    """Two-channel filter bank.

    ``analysis_*`` are correlation kernels: ``a[i] = sum_k f[k] x[2i + k - s]``
    with ``s = len(f) // 2 - 1``. ``synthesis_*`` are the interpolation
    kernels of the inverse. For orthogonal families synthesis equals the
    analysis kernel (equivalently, the time-reverse of the convolution-form
    analysis filter).
    """

    name: str
    analysis_lowpass: np.ndarray
    analysis_highpass: np.ndarray
    synthesis_lowpass: np.ndarray
    synthesis_highpass: np.ndarray
    orthogonal: bool

    @property
    def length(self) -> int:
        return len(self.analysis_lowpass)

    @property
    def tolerance(self) -> float:
        return 1e-8 if self.orthogonal and self.name != "dmey" else 1e-6


@lru_cache(maxsize=1)
def _filter_table():
    with resources.files("hmtart").joinpath("data/filters.json").open() as fh:
        return json.load(fh)


def filter_bank(name: str) -> FilterBank:
    table = _filter_table()
    if name not in table:
        raise UnknownWaveletError(f"unknown wavelet {name!r}; choose from {', '.join(MENU)}")
    e = table[name]
    arr = lambda key: np.array(e[key], dtype=np.float64)  # noqa: E731
    return FilterBank(
        name=name,
        analysis_lowpass=arr("dec_lo")[::-1].copy(),
        analysis_highpass=arr("dec_hi")[::-1].copy(),
        synthesis_lowpass=arr("rec_lo"),
        synthesis_highpass=arr("rec_hi"),
        orthogonal=bool(e["orthogonal"]),
    )


def _analyze_axis(x: np.ndarray, fb: FilterBank, axis: int):
    """One periodic analysis step along ``axis``; returns (lowpass, highpass)."""
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    L = fb.length
    base = 2 * np.arange(n // 2) - (L // 2 - 1)
    lo = np.zeros(x.shape[:-1] + (n // 2,))
    hi = np.zeros_like(lo)
    for k in range(L):
        xs = x[..., (base + k) % n]
        lo += fb.analysis_lowpass[k] * xs
        hi += fb.analysis_highpass[k] * xs
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _synthesize_axis(lo: np.ndarray, hi: np.ndarray, fb: FilterBank, axis: int):
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    half = lo.shape[-1]
    n = 2 * half
    L = fb.length
    base = 2 * np.arange(half) + 1 - L // 2
    out = np.zeros(lo.shape[:-1] + (n,))
    for k in range(L):
        # indices (base + k) % n are distinct for fixed k, so fancy += is safe
        out[..., (base + k) % n] += fb.synthesis_lowpass[k] * lo + fb.synthesis_highpass[k] * hi
    return np.moveaxis(out, -1, axis)


def dwt2(x: np.ndarray, fb: FilterBank):
    """Single-level 2-D transform; returns (approx, (H, V, D))."""
    row_lo, row_hi = _analyze_axis(x, fb, axis=1)
    a, h = _analyze_axis(row_lo, fb, axis=0)
    v, d = _analyze_axis(row_hi, fb, axis=0)
    return a, (h, v, d)


def idwt2(a: np.ndarray, details, fb: FilterBank) -> np.ndarray:
    h, v, d = details
    row_lo = _synthesize_axis(a, h, fb, axis=0)
    row_hi = _synthesize_axis(v, d, fb, axis=0)
    return _synthesize_axis(row_lo, row_hi, fb, axis=1)


@dataclass
class WaveletPyramid:
    levels: int
    details: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]  # index j-1 -> level j (finest first)
    approximation: np.ndarray
    wavelet_name: str
    source_dims: Tuple[int, int]

    def detail(self, level: int, orientation: str) -> np.ndarray:
        return self.details[level - 1][ORIENTATIONS.index(orientation)]


def decompose(plane, fb: FilterBank, J: int = 9) -> WaveletPyramid:
    values = plane.values if isinstance(plane, ChannelPlane) else np.asarray(plane, dtype=float)
    rows, cols = values.shape
    step = 2 ** J
    if J < 1 or rows % step or cols % step:
        raise ValueError(f"plane {rows}x{cols} is not divisible by 2^{J}")
    details = []
    a = values.astype(np.float64)
    for _ in range(J):
        a, d = dwt2(a, fb)
        details.append(d)
    return WaveletPyramid(J, details, a, fb.name, (rows, cols))


def reconstruct(pyr: WaveletPyramid, fb: FilterBank) -> ChannelPlane:
    a = pyr.approximation
    for j in range(pyr.levels, 0, -1):
        h, v, d = pyr.details[j - 1]
        if not (a.shape == h.shape == v.shape == d.shape):
            raise ValueError(f"subband shape mismatch at level {j}")
        a = idwt2(a, (h, v, d), fb)
    if a.shape != tuple(pyr.source_dims):
        raise ValueError("reconstruction does not match source dimensions")
    return ChannelPlane(a)


@dataclass
class QuadForest:
    """Detail coefficients of one orientation, coarsest scale first.

    ``scales[t-1]`` is the coefficient grid at internal time ``t``. Node
    ``(t, r, c)`` has children ``(t+1, 2r+dr, 2c+dc)`` for ``dr, dc`` in {0, 1}.
    """

    orientation: str
    scales: List[np.ndarray]
    meta: Dict[str, object] = field(default_factory=dict)

    @property
    def J(self) -> int:
        return len(self.scales)

    @property
    def root_shape(self) -> Tuple[int, int]:
        return self.scales[0].shape

    @property
    def n_roots(self) -> int:
        return self.scales[0].size

    @property
    def n_nodes(self) -> int:
        return sum(s.size for s in self.scales)

    def shape(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(s.shape for s in self.scales)

    def children(self, t: int, r: int, c: int):
        if t >= self.J:
            return []
        return [(t + 1, 2 * r + dr, 2 * c + dc) for dr in (0, 1) for dc in (0, 1)]

    def parent(self, t: int, r: int, c: int):
        if t <= 1:
            return None
        return (t - 1, r // 2, c // 2)

    def validate(self) -> None:
        for t in range(1, self.J):
            r, c = self.scales[t - 1].shape
            if self.scales[t].shape != (2 * r, 2 * c):
                raise ValueError(f"scale {t + 1} is not the 2x refinement of scale {t}")


def forest_from_scales(scales, orientation="H") -> QuadForest:
    forest = QuadForest(orientation, [np.asarray(s, dtype=np.float64) for s in scales])
    forest.validate()
    return forest


def build_forest(pyr: WaveletPyramid, orientation: str) -> QuadForest:
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    scales = [pyr.detail(pyr.levels + 1 - t, orientation).copy() for t in range(1, pyr.levels + 1)]
    return QuadForest(orientation, scales, {"wavelet": pyr.wavelet_name})


def dump_pyramid(pyr: WaveletPyramid, directory) -> str:
    """Write every subband as little-endian float64 raw grids plus ``index.json``."""
    os.makedirs(directory, exist_ok=True)
    entries = []

    def put(arr, fname, level, orientation):
        np.ascontiguousarray(arr, dtype="<f8").tofile(os.path.join(directory, fname))
        entries.append({"file": fname, "level": level, "orientation": orientation,
                        "rows": int(arr.shape[0]), "cols": int(arr.shape[1]), "dtype": "<f8"})

    for j in range(1, pyr.levels + 1):
        for o in ORIENTATIONS:
            put(pyr.detail(j, o), f"level{j}_{o}.f64", j, o)
    put(pyr.approximation, f"level{pyr.levels}_A.f64", pyr.levels, "A")
    index = {"wavelet": pyr.wavelet_name, "levels": pyr.levels,
             "source_dims": list(pyr.source_dims), "boundary": BOUNDARY_RULE,
             "orientation_convention": ORIENTATION_CONVENTION, "subbands": entries}
    path = os.path.join(directory, "index.json")
    with open(path, "w") as fh:
        json.dump(index, fh, indent=2)
    return path


def load_pyramid_dump(directory) -> WaveletPyramid:
    with open(os.path.join(directory, "index.json")) as fh:
        index = json.load(fh)
    grids = {}
    for e in index["subbands"]:
        arr = np.fromfile(os.path.join(directory, e["file"]), dtype=e["dtype"])
        grids[(e["level"], e["orientation"])] = arr.reshape(e["rows"], e["cols"])
    J = index["levels"]
    details = [tuple(grids[(j, o)] for o in ORIENTATIONS) for j in range(1, J + 1)]
    return WaveletPyramid(J, details, grids[(J, "A")], index["wavelet"], tuple(index["source_dims"]))
