import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmtart.hmt import (LOG_2PI, DegenerateForestError, EMConfig, HmtModel, brute_force_posteriors,
                        em_fit, init_params, log_likelihood, simulate, upward_downward)
from hmtart.wavelet import forest_from_scales


def random_model(rng, J, K):
    return HmtModel(rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K), size=(J - 1, K)),
                    rng.uniform(0.1, 5.0, (J, K)))


def random_forest(rng, J, roots=1, sd=2.0):
    return forest_from_scales([rng.normal(0, sd, (roots * 2 ** t, roots * 2 ** t)) for t in range(J)])


def test_init_ladder_and_transitions():
    # finest and coarse scales both have empirical second moment 4
    forest = forest_from_scales([np.array([[2.0]]), np.full((2, 2), 2.0)])
    m = init_params(forest, 2, seed=3)
    assert np.allclose(m.var, [[0.8, 8.0], [0.8, 8.0]])
    assert np.allclose(m.A(2), [[0.7, 0.3], [0.3, 0.7]])
    assert np.allclose(m.pi, [0.5, 0.5])
    m3 = init_params(forest, 3)
    assert np.allclose(np.diag(m3.A(2)), 0.5 + 0.5 / 3)
    assert np.allclose(m3.A(2).sum(1), 1.0)


def test_init_deterministic(rng):
    forest = random_forest(rng, 4)
    a, b = init_params(forest, 3, seed=5), init_params(forest, 3, seed=5)
    assert a.to_json() == b.to_json()


def test_init_all_degenerate_raises():
    forest = forest_from_scales([np.zeros((1, 1)), np.zeros((2, 2))])
    with pytest.raises(DegenerateForestError):
        init_params(forest, 2)


def test_single_node_bayes():
    pi, var, w = np.array([0.3, 0.7]), np.array([[0.5, 4.0]]), 1.3
    model = HmtModel(pi, np.zeros((0, 2, 2)), var)
    post = upward_downward(forest_from_scales([np.array([[w]])]), model)
    dens = pi * np.exp(-w * w / (2 * var[0])) / np.sqrt(2 * np.pi * var[0])
    assert np.allclose(post.gamma[0][0, 0], dens / dens.sum(), atol=1e-14)
    assert post.log_likelihood == pytest.approx(np.log(dens.sum()), abs=1e-12)


def test_equal_variances_give_prior_marginals(rng):
    J, K = 4, 3
    model = random_model(rng, J, K)
    model.var[:] = 2.5
    post = upward_downward(random_forest(rng, J), model)
    marginal = model.pi
    for t in range(1, J + 1):
        if t > 1:
            marginal = marginal @ model.A(t)
        assert np.allclose(post.gamma[t - 1], marginal, atol=1e-12)


@pytest.mark.parametrize("J,K", [(1, 2), (1, 3), (2, 2), (2, 4), (3, 2)])
def test_matches_enumeration(J, K, rng):
    model = random_model(rng, J, K)
    forest = random_forest(rng, J)
    fast, slow = upward_downward(forest, model), brute_force_posteriors(forest, model)
    for a, b in zip(fast.gamma, slow.gamma):
        assert np.abs(a - b).max() < 1e-10
    for a, b in zip(fast.xi[1:], slow.xi[1:]):
        assert np.abs(a - b).max() < 1e-10
    assert abs(fast.log_likelihood - slow.log_likelihood) < 1e-10
    assert abs(log_likelihood(forest, model) - slow.log_likelihood) < 1e-10


def test_enumeration_guard(rng):
    twelve = forest_from_scales([rng.normal(size=(3, 4))])
    with pytest.raises(ValueError, match="enumeration limit"):
        brute_force_posteriors(twelve, random_model(rng, 1, 5))


def test_enumeration_21_nodes_within_guard(rng):
    model = random_model(rng, 3, 2)
    post = brute_force_posteriors(random_forest(rng, 3), model)
    assert post.n_nodes == 21


def test_loglik_closed_form():
    model = HmtModel(np.array([1.0, 0.0]), np.zeros((0, 2, 2)), np.array([[1.0, 3.0]]))
    ll = log_likelihood(forest_from_scales([np.array([[0.0]])]), model)
    assert ll == pytest.approx(-0.5 * LOG_2PI, abs=1e-15)


def test_loglik_additive_over_roots(rng):
    model = random_model(rng, 1, 2)
    a, b = rng.normal(size=2)
    both = log_likelihood(forest_from_scales([np.array([[a, b]])]), model)
    each = sum(log_likelihood(forest_from_scales([np.array([[x]])]), model) for x in (a, b))
    assert both == pytest.approx(each, abs=1e-12)


def test_loglik_additive_multi_root_trees(rng):
    model = random_model(rng, 3, 2)
    forest = random_forest(rng, 3, roots=2)
    total = log_likelihood(forest, model)
    parts = 0.0
    for r in range(2):
        for c in range(2):
            scales = [w[r * 2 ** t:(r + 1) * 2 ** t, c * 2 ** t:(c + 1) * 2 ** t]
                      for t, w in enumerate(forest.scales)]
            parts += log_likelihood(forest_from_scales(scales), model)
    assert total == pytest.approx(parts, abs=1e-9)


@given(st.integers(0, 10_000), st.permutations([0, 1, 2]))
@settings(max_examples=30, deadline=None)
def test_relabel_invariance(seed, perm):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 4, 3)
    forest = random_forest(rng, 4)
    assert abs(log_likelihood(forest, model) - log_likelihood(forest, model.permuted(perm))) < 1e-12 * max(
        1.0, abs(log_likelihood(forest, model)))


def test_deep_forest_does_not_underflow(rng):
    model = random_model(rng, 9, 2)
    forest = random_forest(rng, 9, sd=50.0)
    post = upward_downward(forest, model)
    assert np.isfinite(post.log_likelihood)
    for g in post.gamma:
        assert np.all(np.isfinite(g))


def test_posterior_invariants(rng):
    model = random_model(rng, 6, 3)
    post = upward_downward(random_forest(rng, 6, roots=2), model)
    for g in post.gamma:
        assert np.abs(g.sum(-1) - 1).max() < 1e-10
    for t in range(2, post.J + 1):
        x = post.xi[t - 1]
        assert np.abs(x.sum(axis=(-2, -1)) - 1).max() < 1e-10
        assert np.abs(x.sum(-2) - post.gamma[t - 1]).max() < 1e-10
        parent = np.repeat(np.repeat(post.gamma[t - 2], 2, 0), 2, 1)
        assert np.abs(x.sum(-1) - parent).max() < 1e-10


def test_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        upward_downward(random_forest(rng, 3), random_model(rng, 4, 2))


def test_non_finite_rejected(rng):
    forest = random_forest(rng, 3)
    forest.scales[2][0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        upward_downward(forest, random_model(rng, 3, 2))
    with pytest.raises(ValueError, match="non-finite"):
        em_fit(forest)


def test_max_iter_zero_returns_init(rng):
    forest = random_forest(rng, 4)
    model, diag = em_fit(forest, 2, EMConfig(max_iter=0))
    init = init_params(forest, 2)
    assert diag.iterations == 0
    assert np.array_equal(model.var, init.var)
    assert np.array_equal(model.trans, init.trans)
    assert np.array_equal(model.pi, init.pi)


def test_fit_is_deterministic(rng):
    forest = random_forest(rng, 5)
    a, da = em_fit(forest, 2, EMConfig(seed=4, restarts=2))
    b, db = em_fit(forest, 2, EMConfig(seed=4, restarts=2))
    assert a.to_json() == b.to_json()
    assert da.loglik_trace == db.loglik_trace


@pytest.mark.parametrize("K", [2, 3, 5])
def test_em_monotone_and_states_ordered(K, rng):
    truth = random_model(rng, 5, K)
    forest = simulate(truth, (2, 2), seed=1)
    model, diag = em_fit(forest, K)
    trace = np.array(diag.loglik_trace)
    assert np.all(np.diff(trace) >= -1e-9)
    assert np.all(np.diff(model.var[-1]) >= 0)
    model.check()


def test_invalid_state_count(rng):
    with pytest.raises(ValueError):
        em_fit(random_forest(rng, 3), 6)


def test_degenerate_forest_sentinel():
    forest = forest_from_scales([np.zeros((1, 1)), np.zeros((2, 2)), np.zeros((4, 4))])
    model, diag = em_fit(forest, 2)
    assert diag.degenerate_forest and diag.iterations == 0
    assert diag.degenerate_subbands == [1, 2, 3]
    assert model.meta["degenerate"]


def test_partially_degenerate_forest_is_flagged(rng):
    forest = forest_from_scales([np.zeros((1, 1)), rng.normal(size=(2, 2)), rng.normal(size=(4, 4))])
    model, diag = em_fit(forest, 2)
    assert diag.degenerate_subbands == [1]
    assert np.all(model.var[0] == model.floor[0])
    assert np.all(np.diff(diag.loglik_trace) >= -1e-9)


def test_simulate_deterministic_and_shaped():
    model = HmtModel(np.array([0.4, 0.6]), np.tile([[0.8, 0.2], [0.3, 0.7]], (3, 1, 1)),
                     np.array([[1.0, 9.0]] * 4))
    a, b = simulate(model, (2, 3), seed=9), simulate(model, (2, 3), seed=9)
    assert [w.shape for w in a.scales] == [(2, 3), (4, 6), (8, 12), (16, 24)]
    for x, y in zip(a.scales, b.scales):
        assert np.array_equal(x, y)


def test_simulate_tiny_variances():
    model = HmtModel(np.array([0.5, 0.5]), np.tile(np.eye(2), (2, 1, 1)), np.full((3, 2), 1e-12))
    forest = simulate(model, seed=0)
    assert max(np.abs(w).max() for w in forest.scales) < 1e-4


def test_simulate_law_of_large_numbers():
    var = np.array([[1.0 + t, 20.0 + t] for t in range(9)])
    model = HmtModel(np.array([0.0, 1.0]), np.tile(np.eye(2), (8, 1, 1)), var)
    forest = simulate(model, seed=2)
    assert all(np.all(s == 1) for s in forest.meta["states"])
    fine = forest.scales[-1]
    assert fine.size == 65536
    assert abs(np.mean(fine ** 2) / var[-1, 1] - 1) < 0.05


def test_recovery_on_populated_scales():
    """Scales with at least a thousand nodes are recovered from a single J=9 tree.

    The coarse scales (1, 4, 16 ... nodes) carry too little data for any
    estimator, which is why only the populated part is checked here.
    """
    var = np.array([[0.5 * 4.0 ** (9 - t), 6.0 * 4.0 ** (9 - t)] for t in range(1, 10)]) / 4.0 ** 4
    trans = np.tile([[0.85, 0.15], [0.2, 0.8]], (8, 1, 1))
    truth = HmtModel(np.array([0.5, 0.5]), trans, var)
    forest = simulate(truth, seed=11)
    model, diag = em_fit(forest, 2)
    assert diag.converged
    for t in range(6, 10):
        assert np.all(np.abs(model.var[t - 1] / var[t - 1] - 1) < 0.1)
        assert np.abs(model.A(t) - trans[t - 2]).max() < 0.05


def test_model_json_round_trip(rng):
    forest = random_forest(rng, 4)
    model, _ = em_fit(forest, 3)
    back = HmtModel.from_json(model.to_json())
    assert back.to_json() == model.to_json()
    assert np.array_equal(back.var, model.var) and np.array_equal(back.trans, model.trans)
    d = model.to_dict()
    assert set(d) >= {"K", "J", "root_dist", "transitions", "variances", "variance_floor", "orientation", "seed"}
