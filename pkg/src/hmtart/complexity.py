"""Entropy-based complexity measures computed from HMT posteriors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .hmt import HmtModel, Posteriors
from .wavelet import MENU, ORIENTATIONS


@dataclass
class LocalComplexityMap:
    values: List[np.ndarray]   # values[t-1]: per-node entropy in bits at internal time t
    K: int

    @property
    def J(self) -> int:
        return len(self.values)


@dataclass
class ComplexitySummary:
    orientational: Dict[str, float]
    global_complexity: float
    per_scale_curve: List[float]
    self_org_span: int
    model_entropy: Dict[str, float] = field(default_factory=dict)
    degenerate: Dict[str, bool] = field(default_factory=dict)
    optimal: bool = False

    def to_dict(self) -> dict:
        return {
            "orientational": {o: self.orientational[o] for o in ORIENTATIONS},
            "global": self.global_complexity,
            "per_scale_curve": list(self.per_scale_curve),
            "self_org_span": self.self_org_span,
            "model_entropy": {o: self.model_entropy[o] for o in ORIENTATIONS if o in self.model_entropy},
            "degenerate": {o: self.degenerate.get(o, False) for o in ORIENTATIONS},
            "optimal": self.optimal,
        }


def _plogp(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)


def entropy_bits(p: np.ndarray, axis=-1) -> np.ndarray:
    """Vectorized Shannon entropy (bits) along ``axis``; no validation."""
    return np.maximum(-_plogp(p).sum(axis=axis), 0.0)


def shannon_entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"not a probability vector: {p}")
    return float(entropy_bits(p))


def local_complexity(post: Posteriors) -> LocalComplexityMap:
    values = []
    for t, g in enumerate(post.gamma, 1):
        h = entropy_bits(g)
        if t in post.degenerate_scales:
            h = np.zeros_like(h)
        values.append(h)
    return LocalComplexityMap(values, post.K)


def scale_curve(maps: Sequence[LocalComplexityMap]) -> List[float]:
    """Per-scale mean of local entropy, pooled over all orientation maps."""
    if not maps:
        raise ValueError("no maps")
    J = maps[0].J
    if any(m.J != J for m in maps):
        raise ValueError("orientation maps have different numbers of scales")
    curve = []
    for t in range(J):
        total = sum(float(m.values[t].sum()) for m in maps)
        count = sum(m.values[t].size for m in maps)
        curve.append(total / count)
    return curve


def self_org_span(curve: Sequence[float], eps: float = 1e-9) -> int:
    """Number of steps in the longest strictly increasing run of ``curve``."""
    if len(curve) == 0:
        raise ValueError("empty curve")
    best = run = 0
    for a, b in zip(curve[:-1], curve[1:]):
        run = run + 1 if b > a + eps else 0
        best = max(best, run)
    return best


def conditional_entropies(post: Posteriors) -> List[np.ndarray]:
    """Per-node H(S_v | S_parent(v), W) in bits (H(S_v | W) at roots).

    Summing over all nodes gives the joint posterior entropy of the hidden
    tree by the chain rule on the conditional Markov tree.
    """
    out = [entropy_bits(post.gamma[0])]
    for t in range(2, post.J + 1):
        x = post.xi[t - 1]
        pair = entropy_bits(x.reshape(x.shape[:-2] + (-1,)))
        parent = np.repeat(np.repeat(entropy_bits(post.gamma[t - 2]), 2, axis=0), 2, axis=1)
        out.append(np.maximum(pair - parent, 0.0))
    for t in post.degenerate_scales:
        out[t - 1] = np.zeros_like(out[t - 1])
    return out


def orientational_complexity(post: Posteriors, degenerate: bool = False) -> float:
    """Joint posterior entropy of the hidden tree, in bits per node."""
    if degenerate:
        return 0.0
    total = sum(float(h.sum()) for h in conditional_entropies(post))
    return total / post.n_nodes


def model_tree_entropy(model: HmtModel, root_shape=(1, 1)) -> float:
    """Prior entropy of the hidden tree under the model, in bits per node."""
    n_roots = int(np.prod(root_shape))
    marginal = model.pi
    total = n_roots * float(entropy_bits(marginal))
    count = n_roots
    for t in range(2, model.J + 1):
        A = model.A(t)
        nodes = n_roots * 4 ** (t - 1)
        total += nodes * float(marginal @ entropy_bits(A))
        count += nodes
        marginal = marginal @ A
    return total / count


def summarize(posts: Mapping[str, Posteriors], models: Optional[Mapping[str, HmtModel]] = None,
              degenerate: Optional[Mapping[str, bool]] = None, eps: float = 1e-9,
              provenance: Optional[Mapping[str, object]] = None) -> ComplexitySummary:
    """Combine the H, V and D posteriors of one image/channel/wavelet.

    ``provenance`` optionally maps orientation -> an identifying tuple; all
    three must agree apart from orientation.
    """
    if set(posts) != set(ORIENTATIONS):
        raise ValueError("need posteriors for H, V and D")
    if provenance is not None and len({provenance[o] for o in ORIENTATIONS}) != 1:
        raise ValueError(f"mismatched provenance: {dict(provenance)}")
    degenerate = degenerate or {}
    orient = {o: orientational_complexity(posts[o], degenerate.get(o, False)) for o in ORIENTATIONS}
    maps = []
    for o in ORIENTATIONS:
        m = local_complexity(posts[o])
        if degenerate.get(o, False):
            m = LocalComplexityMap([np.zeros_like(v) for v in m.values], m.K)
        maps.append(m)
    curve = scale_curve(maps)
    ment = {}
    if models is not None:
        for o in ORIENTATIONS:
            ment[o] = 0.0 if degenerate.get(o, False) else model_tree_entropy(
                models[o], posts[o].gamma[0].shape[:2])
    return ComplexitySummary(orient, global_from_orientational(orient), curve,
                             self_org_span(curve, eps), ment, {o: bool(degenerate.get(o, False)) for o in ORIENTATIONS})


def global_from_orientational(orient: Mapping[str, float]) -> float:
    return (orient["H"] + orient["V"] + orient["D"]) / 3.0


def select_optimal_wavelet(results: Mapping[str, float]) -> str:
    """Argmax of global complexity; ties go to the earlier menu entry."""
    if not results:
        raise ValueError("no wavelet results to choose from")
    order = [w for w in MENU if w in results] + sorted(w for w in results if w not in MENU)
    best = order[0]
    for w in order[1:]:
        if results[w] > results[best]:
            best = w
    return best
