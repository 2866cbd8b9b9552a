"""Hidden Markov Tree over a wavelet quad-tree forest.

Parameters are tied within each scale: every node at internal time ``t``
shares the variances ``var[t-1]`` and every parent->child edge into ``t``
shares ``A(t)``. All roots share ``pi``.

The E-step is the conditional form of the upward-downward recursion:

* upward: ``b_v ∝ e_v * prod_c m_c`` with ``m_c(i) = sum_j A[i, j] b_c(j)``,
  normalized per node, log scale factors accumulated for the likelihood;
* downward: ``P(S_u=i, S_c=j | W) = gamma_u(i) A[i, j] b_c(j) / m_c(i)``.

Every stored quantity is a normalized distribution (or a ratio of such),
so nothing underflows however deep or wide the forest is.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .wavelet import QuadForest

LOG_2PI = float(np.log(2.0 * np.pi))
ZERO_TOL = 1e-9
ABS_VAR_FLOOR = 1e-12
REL_VAR_FLOOR = 1e-8
BRUTE_FORCE_LIMIT = 10 ** 7


class DegenerateForestError(ValueError):
    """Every scale of the forest is numerically zero."""


@dataclass
class HmtModel:
    pi: np.ndarray                  # (K,)
    trans: np.ndarray               # (J-1, K, K); trans[t-2] = A(t), rows = parent state
    var: np.ndarray                 # (J, K); var[t-1, k]
    orientation: str = "H"
    floor: Optional[np.ndarray] = None      # (J,) variance floor per scale
    degenerate_scales: Tuple[int, ...] = ()  # 1-based internal times
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.pi)

    @property
    def J(self) -> int:
        return self.var.shape[0]

    def A(self, t: int) -> np.ndarray:
        return self.trans[t - 2]

    def copy(self) -> "HmtModel":
        return HmtModel(self.pi.copy(), self.trans.copy(), self.var.copy(), self.orientation,
                        None if self.floor is None else self.floor.copy(),
                        tuple(self.degenerate_scales), dict(self.meta))

    def permuted(self, perm: Sequence[int]) -> "HmtModel":
        """Relabel states so that new state ``k`` is old state ``perm[k]``."""
        p = np.asarray(perm)
        m = self.copy()
        m.pi = self.pi[p]
        m.trans = self.trans[:, p][:, :, p]
        m.var = self.var[:, p]
        return m

    def check(self, atol: float = 1e-12) -> None:
        if abs(self.pi.sum() - 1.0) > atol or np.any(self.pi < 0):
            raise ValueError("root distribution is not a probability vector")
        if self.trans.size and (np.any(np.abs(self.trans.sum(-1) - 1.0) > atol) or np.any(self.trans < 0)):
            raise ValueError("transition matrices are not row-stochastic")
        if np.any(self.var <= 0):
            raise ValueError("variances must be positive")

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "J": self.J,
            "orientation": self.orientation,
            "root_dist": self.pi.tolist(),
            "transitions": {str(t): self.A(t).tolist() for t in range(2, self.J + 1)},
            "variances": self.var.tolist(),
            "variance_floor": None if self.floor is None else self.floor.tolist(),
            "degenerate_scales": list(self.degenerate_scales),
            **{k: v for k, v in self.meta.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmtModel":
        J, K = d["J"], d["K"]
        trans = np.array([d["transitions"][str(t)] for t in range(2, J + 1)], dtype=float).reshape(J - 1, K, K)
        floor = d.get("variance_floor")
        known = {"K", "J", "orientation", "root_dist", "transitions", "variances",
                 "variance_floor", "degenerate_scales"}
        return cls(np.array(d["root_dist"], dtype=float), trans, np.array(d["variances"], dtype=float),
                   d.get("orientation", "H"), None if floor is None else np.array(floor, dtype=float),
                   tuple(d.get("degenerate_scales", ())), {k: v for k, v in d.items() if k not in known})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HmtModel":
        return cls.from_dict(json.loads(text))


@dataclass
class Posteriors:
    gamma: List[np.ndarray]            # gamma[t-1]: (rows_t, cols_t, K)
    xi: List[Optional[np.ndarray]]     # xi[t-1]: (rows_t, cols_t, K, K) for t >= 2; xi[0] is None
    log_likelihood: float
    degenerate_scales: Tuple[int, ...] = ()

    @property
    def J(self) -> int:
        return len(self.gamma)

    @property
    def K(self) -> int:
        return self.gamma[0].shape[-1]

    @property
    def n_nodes(self) -> int:
        return sum(g.shape[0] * g.shape[1] for g in self.gamma)


@dataclass
class EMConfig:
    max_iter: int = 200
    rel_tol: float = 1e-6
    seed: int = 0
    restarts: int = 1


@dataclass
class FitDiagnostics:
    iterations: int
    loglik_trace: List[float]
    converged: bool
    degenerate_subbands: List[int]
    degenerate_forest: bool = False

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "loglik_trace": list(self.loglik_trace),
                "converged": self.converged, "degenerate_subbands": list(self.degenerate_subbands),
                "degenerate_forest": self.degenerate_forest}


def degenerate_scales(forest: QuadForest, tol: float = ZERO_TOL) -> Tuple[int, ...]:
    return tuple(t for t, w in enumerate(forest.scales, 1) if not np.any(np.abs(w) >= tol))


def empirical_variances(forest: QuadForest) -> np.ndarray:
    """Zero-mean second moment of each scale."""
    return np.array([float(np.mean(np.square(w))) for w in forest.scales])


def variance_floor(emp_var: np.ndarray) -> np.ndarray:
    return np.maximum(ABS_VAR_FLOOR, REL_VAR_FLOOR * emp_var)


def default_transition(K: int) -> np.ndarray:
    """Diagonally dominant start: 0.7 on the diagonal for K=2, 0.5 + 0.5/K otherwise."""
    diag = 0.7 if K == 2 else 0.5 + 0.5 / K
    A = np.full((K, K), (1.0 - diag) / (K - 1))
    np.fill_diagonal(A, diag)
    return A


def variance_ladder(K: int) -> np.ndarray:
    return 0.2 * np.power(10.0, np.arange(K) / (K - 1))


def init_params(forest: QuadForest, K: int, seed: int = 0, jitter: float = 0.0) -> HmtModel:
    """Deterministic starting point: uniform roots, sticky transitions,
    variances on a geometric ladder from 0.2x to 2x the scale's second moment.

    ``jitter > 0`` perturbs the ladder multiplicatively with a generator
    seeded by ``seed`` (used for restarts).
    """
    if K < 2:
        raise ValueError("need at least two hidden states")
    degen = degenerate_scales(forest)
    if len(degen) == forest.J:
        raise DegenerateForestError("all scales of the forest are numerically zero")
    emp = empirical_variances(forest)
    floor = variance_floor(emp)
    ladder = variance_ladder(K)
    factors = np.tile(ladder, (forest.J, 1))
    if jitter > 0:
        rng = np.random.default_rng(seed)
        factors = factors * np.exp(jitter * rng.standard_normal(factors.shape))
        factors.sort(axis=1)
    var = np.maximum(emp[:, None] * factors, floor[:, None])
    trans = np.tile(default_transition(K), (forest.J - 1, 1, 1))
    return HmtModel(np.full(K, 1.0 / K), trans, var, forest.orientation, floor, degen,
                    {"seed": int(seed)})


def _log_emissions(forest: QuadForest, model: HmtModel) -> List[np.ndarray]:
    """State-first log densities, ``(K, rows, cols)`` per scale."""
    out = []
    degen = set(model.degenerate_scales)
    for t, w in enumerate(forest.scales, 1):
        if t in degen:
            out.append(np.zeros((model.K,) + w.shape))
            continue
        v = model.var[t - 1][:, None, None]
        out.append(-0.5 * ((LOG_2PI + np.log(v)) + np.square(w)[None] / v))
    return out


def _sum_children(x: np.ndarray) -> np.ndarray:
    """Sum each 2x2 block of the trailing grid axes."""
    *lead, r, c = x.shape
    return x.reshape(*lead, r // 2, 2, c // 2, 2).sum(axis=(-3, -1))


def _expand_parent(x: np.ndarray) -> np.ndarray:
    """Copy every parent value onto its 2x2 children (trailing grid axes)."""
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


def _check_inputs(forest: QuadForest, model: HmtModel) -> None:
    if forest.J != model.J:
        raise ValueError(f"forest has {forest.J} scales, model has {model.J}")
    forest.validate()
    for w in forest.scales:
        if not np.all(np.isfinite(w)):
            raise ValueError("forest contains non-finite coefficients")


def _upward(forest: QuadForest, model: HmtModel):
    loge = _log_emissions(forest, model)
    J = forest.J
    b = [None] * J
    m = [None] * J
    total_log_scale = 0.0
    from_children = None
    with np.errstate(divide="ignore"):
        for t in range(J, 0, -1):
            le = loge[t - 1] if from_children is None else loge[t - 1] + from_children
            mx = le.max(axis=0)
            bt = np.exp(le - mx)
            s = bt.sum(axis=0)
            bt /= s
            b[t - 1] = bt
            total_log_scale += float(np.sum(mx) + np.sum(np.log(s)))
            if t > 1:
                mt = np.tensordot(model.A(t), bt, axes=(1, 0))
                m[t - 1] = mt
                from_children = _sum_children(np.log(mt))
    root = np.tensordot(model.pi, b[0], axes=(0, 0))
    loglik = total_log_scale + float(np.sum(np.log(root)))
    return b, m, loglik


def log_likelihood(forest: QuadForest, model: HmtModel) -> float:
    _check_inputs(forest, model)
    return _upward(forest, model)[2]


def _estep(forest: QuadForest, model: HmtModel):
    """Upward-downward in state-first layout; returns (gamma, xi, loglik)."""
    b, m, loglik = _upward(forest, model)
    g0 = b[0] * model.pi[:, None, None]
    gamma = [g0 / g0.sum(axis=0)]
    xi = [None]
    for t in range(2, forest.J + 1):
        gp = _expand_parent(gamma[-1])
        mt = m[t - 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mt > 0, gp / mt, 0.0)
        x = ratio[:, None] * model.A(t)[:, :, None, None] * b[t - 1][None, :]
        xi.append(x)
        gamma.append(x.sum(axis=0))
    return gamma, xi, loglik


def _as_posteriors(gamma, xi, loglik, model) -> Posteriors:
    return Posteriors([np.moveaxis(g, 0, -1) for g in gamma],
                      [None] + [np.moveaxis(x, (0, 1), (-2, -1)) for x in xi[1:]],
                      loglik, tuple(model.degenerate_scales))


def upward_downward(forest: QuadForest, model: HmtModel) -> Posteriors:
    _check_inputs(forest, model)
    return _as_posteriors(*_estep(forest, model), model)


def _m_step(forest: QuadForest, gamma, xi, model: HmtModel) -> HmtModel:
    K = model.K
    new = model.copy()
    new.pi = gamma[0].reshape(K, -1).mean(axis=1)
    new.pi /= new.pi.sum()
    for t in range(2, forest.J + 1):
        counts = xi[t - 1].reshape(K, K, -1).sum(axis=2)
        rows = counts.sum(axis=1, keepdims=True)
        new.trans[t - 2] = np.where(rows > 0, counts / np.where(rows > 0, rows, 1.0), model.A(t))
    degen = set(model.degenerate_scales)
    for t, w in enumerate(forest.scales, 1):
        if t in degen:
            new.var[t - 1] = model.floor[t - 1]
            continue
        g = gamma[t - 1].reshape(K, -1)
        occ = g.sum(axis=1)
        num = g @ np.square(w).reshape(-1)
        est = np.where(occ > 0, num / np.where(occ > 0, occ, 1.0), model.var[t - 1])
        new.var[t - 1] = np.maximum(est, model.floor[t - 1])
    return new


def order_states(model: HmtModel) -> HmtModel:
    """Sort states by variance at the finest non-degenerate scale (state 0 = yin)."""
    live = [t for t in range(model.J, 0, -1) if t not in set(model.degenerate_scales)]
    t = live[0] if live else model.J
    perm = np.argsort(model.var[t - 1], kind="stable")
    return model.permuted(perm)


def degenerate_model(forest: QuadForest, K: int) -> HmtModel:
    floor = np.full(forest.J, ABS_VAR_FLOOR)
    return HmtModel(np.full(K, 1.0 / K), np.tile(default_transition(K), (forest.J - 1, 1, 1)),
                    np.tile(floor[:, None], (1, K)), forest.orientation, floor,
                    tuple(range(1, forest.J + 1)), {"degenerate": True})


def _run_em(forest, model, config):
    gamma, xi, loglik = _estep(forest, model)
    trace = [loglik]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        model = _m_step(forest, gamma, xi, model)
        gamma, xi, loglik = _estep(forest, model)
        trace.append(loglik)
        prev = trace[-2]
        if abs(trace[-1] - prev) <= config.rel_tol * max(abs(prev), 1e-300):
            converged = True
            break
    return model, trace, it, converged


def em_fit(forest: QuadForest, K: int = 2, config: Optional[EMConfig] = None):
    """Fit a tied HMT by EM. Returns ``(model, diagnostics)``.

    A forest with no non-zero scale is not fitted: a sentinel model is
    returned with ``diagnostics.degenerate_forest`` set.
    """
    config = config or EMConfig()
    if not 2 <= K <= 5:
        raise ValueError("K must be between 2 and 5")
    forest.validate()
    for w in forest.scales:
        if not np.all(np.isfinite(w)):
            raise ValueError("forest contains non-finite coefficients")
    degen = degenerate_scales(forest)
    if len(degen) == forest.J:
        return degenerate_model(forest, K), FitDiagnostics(0, [], False, list(degen), True)
    best = None
    for r in range(max(1, config.restarts)):
        init = init_params(forest, K, seed=config.seed + r, jitter=0.0 if r == 0 else 0.5)
        model, trace, it, conv = _run_em(forest, init, config)
        if best is None or trace[-1] > best[1][-1]:
            best = (model, trace, it, conv)
    model, trace, it, conv = best
    model = order_states(model)
    model.meta["seed"] = int(config.seed)
    return model, FitDiagnostics(it, trace, conv, list(degen))


def simulate(model: HmtModel, forest_shape=(1, 1), seed: int = 0) -> QuadForest:
    """Draw hidden states top-down and Gaussian coefficients given the states.

    ``forest_shape`` is either the root grid shape or an existing forest
    whose shape is copied. The drawn states are kept in ``meta["states"]``.
    """
    rng = np.random.default_rng(seed)
    root_shape = forest_shape.root_shape if isinstance(forest_shape, QuadForest) else tuple(forest_shape)
    K = model.K
    states = [(rng.random(root_shape)[..., None] > np.cumsum(model.pi)[:-1]).sum(-1)]
    for t in range(2, model.J + 1):
        parent = _expand_parent(states[-1])
        cdf = np.cumsum(model.A(t), axis=1)[:, :-1][parent]
        u = rng.random(parent.shape)
        states.append((u[..., None] > cdf).sum(-1))
    scales = []
    for t, s in enumerate(states, 1):
        sd = np.sqrt(model.var[t - 1])[s]
        scales.append(sd * rng.standard_normal(s.shape))
    return QuadForest(model.orientation, scales, {"states": states})


def _flat_tree(forest: QuadForest):
    """Flatten nodes in scale order; return (parents, scale index per node, coefficients)."""
    parents, scale_of, values, offsets = [], [], [], []
    offset = 0
    for t, w in enumerate(forest.scales, 1):
        offsets.append(offset)
        rows, cols = w.shape
        for r in range(rows):
            for c in range(cols):
                scale_of.append(t)
                values.append(w[r, c])
                if t == 1:
                    parents.append(-1)
                else:
                    pcols = forest.scales[t - 2].shape[1]
                    parents.append(offsets[t - 2] + (r // 2) * pcols + c // 2)
        offset += rows * cols
    return parents, scale_of, np.array(values)


def brute_force_posteriors(forest: QuadForest, model: HmtModel, return_joint: bool = False):
    """Exact posteriors by enumerating every joint state assignment.

    Independent of the recursions above: builds the full joint over all
    ``K**n`` assignments as an n-dimensional array.
    """
    _check_inputs(forest, model)
    parents, scale_of, values = _flat_tree(forest)
    n, K = len(values), model.K
    if K ** n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{K}^{n} assignments exceed the enumeration limit {BRUTE_FORCE_LIMIT}")
    degen = set(model.degenerate_scales)
    logj = np.zeros((K,) * n)

    def along(axes, table):
        shape = [1] * n
        for a, size in zip(axes, table.shape):
            shape[a] = size
        return table.reshape(shape)

    with np.errstate(divide="ignore"):
        for v in range(n):
            t = scale_of[v]
            if t in degen:
                le = np.zeros(K)
            else:
                var = model.var[t - 1]
                le = -0.5 * (LOG_2PI + np.log(var) + values[v] ** 2 / var)
            if parents[v] < 0:
                logj = logj + along([v], np.log(model.pi) + le)
            else:
                logj = logj + along([parents[v], v], np.log(model.A(t)) + le[None, :])
    mx = logj.max()
    joint = np.exp(logj - mx)
    z = joint.sum()
    joint /= z
    loglik = float(mx + np.log(z))
    all_axes = set(range(n))
    xis = {}
    gammas = [None] * n
    for v in range(n):
        u = parents[v]
        if u >= 0:
            x = joint.sum(axis=tuple(sorted(all_axes - {u, v})))
            xis[v] = x if u < v else x.T
            gammas[v] = xis[v].sum(axis=0)
            gammas[u] = xis[v].sum(axis=1)
    for v in range(n):
        if gammas[v] is None:
            gammas[v] = joint.sum(axis=tuple(sorted(all_axes - {v})))
    # back to per-scale grids
    gamma, xi = [], [None]
    idx = 0
    for t, w in enumerate(forest.scales, 1):
        g = np.zeros(w.shape + (K,))
        x = np.zeros(w.shape + (K, K)) if t > 1 else None
        for r, c in itertools.product(range(w.shape[0]), range(w.shape[1])):
            g[r, c] = gammas[idx]
            if t > 1:
                x[r, c] = xis[idx]
            idx += 1
        gamma.append(g)
        if t > 1:
            xi.append(x)
    post = Posteriors(gamma, xi, loglik, tuple(model.degenerate_scales))
    if return_joint:
        return post, joint
    return post
