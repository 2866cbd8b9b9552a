"""Image decoding, channel splitting and geometry normalization."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

CHANNELS = ("R", "G", "B")
SUPPORTED_FORMATS = {"PNG", "JPEG", "TIFF", "MPO"}


class ImageLoadError(ValueError):
    """Raised when an image file cannot be decoded into RGB pixels."""


class GeometryError(ValueError):
    """Raised when a plane is too small for the requested geometry."""


@dataclass(frozen=True)
class RgbImage:
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("zero-area image")
        if p.dtype != np.uint8:
            if np.any(p < 0) or np.any(p > 255):
                raise ValueError("intensities outside [0, 255]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ChannelPlane:
    values: np.ndarray  # (height, width) float64
    channel_tag: str = "R"

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("channel plane must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("channel plane contains non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    origins: Tuple[Tuple[int, int], ...]
    overlap_flag: bool


def load_image(path) -> RgbImage:
    """Decode a PNG, JPEG or TIFF file to 8-bit RGB at full resolution."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageLoadError(f"{path}: no such file")
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in SUPPORTED_FORMATS:
                raise ImageLoadError(f"{path}: unsupported format {fmt}")
            im.load()
            if im.width == 0 or im.height == 0:
                raise ImageLoadError(f"{path}: zero-area image")
            if im.mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                # high bit-depth grayscale: rescale to 8 bits
                arr = np.asarray(im, dtype=np.float64)
                hi = 65535.0 if im.mode.startswith("I;16") else max(arr.max(), 1.0)
                arr = np.round(arr / hi * 255.0).clip(0, 255).astype(np.uint8)
                pixels = np.repeat(arr[:, :, None], 3, axis=2)
            else:
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except ImageLoadError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageLoadError(f"{path}: cannot decode image ({exc})") from exc
    return RgbImage(np.ascontiguousarray(pixels))


def save_image(img: RgbImage, path) -> None:
    Image.fromarray(np.asarray(img.pixels, dtype=np.uint8), mode="RGB").save(path)


def split_channels(img: RgbImage) -> Tuple[ChannelPlane, ChannelPlane, ChannelPlane]:
    px = np.asarray(img.pixels, dtype=np.float64)
    return tuple(ChannelPlane(px[:, :, i].copy(), tag) for i, tag in enumerate(CHANNELS))


def merge_channels(planes) -> RgbImage:
    """Inverse of split_channels for planes holding integral values."""
    stack = np.stack([p.values for p in planes], axis=2)
    return RgbImage(np.round(stack).astype(np.uint8))


def dyadic_crop_box(height: int, width: int, levels: int) -> Tuple[int, int, int, int]:
    """Return (row0, col0, crop_h, crop_w) of the centered dyadic crop."""
    step = 2 ** levels
    if height < step or width < step:
        raise GeometryError(
            f"plane {height}x{width} is smaller than 2^{levels} = {step}")
    ch, cw = height - height % step, width - width % step
    return (height - ch) // 2, (width - cw) // 2, ch, cw


def crop_to_dyadic(plane: ChannelPlane, levels: int) -> ChannelPlane:
    r0, c0, ch, cw = dyadic_crop_box(plane.height, plane.width, levels)
    if (ch, cw) == (plane.height, plane.width):
        return plane
    return ChannelPlane(plane.values[r0:r0 + ch, c0:c0 + cw].copy(), plane.channel_tag)


def _axis_origins(dim: int, size: int) -> List[int]:
    origins = list(range(0, dim - size + 1, size))
    if origins[-1] + size < dim:
        origins.append(dim - size)
    return origins


def plan_patches(plane: ChannelPlane, patch_size: int) -> PatchGrid:
    """Tile the plane with square patches, clamping the last row/column to the edge."""
    if patch_size < 1:
        raise GeometryError("patch size must be positive")
    if plane.height < patch_size or plane.width < patch_size:
        raise GeometryError(
            f"plane {plane.height}x{plane.width} is smaller than patch size {patch_size}")
    rows = _axis_origins(plane.height, patch_size)
    cols = _axis_origins(plane.width, patch_size)
    overlap = plane.height % patch_size != 0 or plane.width % patch_size != 0
    origins = tuple((r, c) for r in rows for c in cols)
    return PatchGrid(patch_size, origins, overlap)


def extract_patch(plane: ChannelPlane, origin, size: int) -> ChannelPlane:
    r, c = origin
    return ChannelPlane(plane.values[r:r + size, c:c + size].copy(), plane.channel_tag)


def load_manifest(path):
    """Read a JSON dataset manifest: a list of {id, path, role} entries.

    Relative paths are resolved against the manifest's directory.
    """
    with open(path) as fh:
        data = json.load(fh)
    entries = data["images"] if isinstance(data, dict) else data
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for e in entries:
        missing = {"id", "path"} - set(e)
        if missing:
            raise ValueError(f"manifest entry {e!r} lacks {sorted(missing)}")
        role = e.get("role")
        if role is not None and role not in ("candidate-A", "candidate-B"):
            raise ValueError(f"manifest entry {e['id']!r}: unknown role {role!r}")
        p = e["path"] if os.path.isabs(e["path"]) else os.path.join(base, e["path"])
        out.append({"id": str(e["id"]), "path": p, "role": role})
    return out
