import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from posbias.data import build_operators
from posbias.errors import DimensionError, NumericalError
from posbias.knockoff import (
    compute_s,
    construct_knockoffs,
    equivalence_check,
    extended_operators,
    gram_condition_errors,
    kernel_basis,
    knockoff_stats_from_path,
    knockoff_statistics,
    knockoff_threshold,
    reduced_model,
    residual_design,
    run_path,
)
from posbias.paths import gram_stats
from posbias.simulation import SimulationConfig, generate

from conftest import random_dataset


def small_instance(seed, n_items=None, n_ann=None, n_biased=0):
    rng = np.random.default_rng(seed)
    n_items = n_items or int(rng.integers(4, 9))
    n_ann = n_ann or int(rng.integers(5, 15))
    g = np.zeros(n_ann)
    g[:n_biased] = rng.choice([-1.5, 1.5], n_biased)
    ds, _, _ = random_dataset(rng, n_items, n_ann, per_annotator=8, gamma=g, noise=0.7)
    return ds, build_operators(ds)


# --- s vector ----------------------------------------------------------------------------


def test_s_identity_gram():
    np.testing.assert_array_equal(compute_s(np.eye(4)), np.ones(4))
    np.testing.assert_allclose(compute_s(np.eye(4), "sdp"), np.ones(4))


def test_s_small_eigenvalue():
    np.testing.assert_allclose(compute_s(np.diag([0.3, 0.3])), [0.6, 0.6])


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("mode", ["equicorrelated", "sdp"])
def test_s_feasible(seed, mode):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(8, 5))
    sigma = b.T @ b / 4
    s = compute_s(sigma, mode)
    assert np.all(s >= 0) and np.all(s <= 1)
    assert np.linalg.eigvalsh(2 * sigma - np.diag(s))[0] >= -1e-8
    if mode == "sdp":
        assert s.sum() >= compute_s(sigma).sum() * (1 - 1e-6)


def test_sdp_improves_on_heterogeneous_gram():
    sigma = np.diag([0.2, 3.0, 5.0])
    assert compute_s(sigma, "sdp").sum() > compute_s(sigma).sum() + 1.0


@pytest.mark.parametrize("seed", range(4))
def test_sdp_matches_generic_solver(seed):
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(30 + seed)
    b = rng.normal(size=(9, 6)) * rng.uniform(0.3, 2.0, 6)
    sigma = b.T @ b / 6
    d = np.sqrt(np.diag(sigma))
    corr = sigma / np.outer(d, d)
    x = cp.Variable(6)
    prob = cp.Problem(cp.Maximize(cp.sum(x)), [x >= 0, x <= 1, 2 * corr - cp.diag(x) >> 0])
    prob.solve(solver="CLARABEL")
    assert compute_s(corr, "sdp").sum() == pytest.approx(prob.value, rel=1e-5)


def test_s_singular_gram():
    with pytest.raises(NumericalError, match="col\\(grad\\)"):
        compute_s(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_s_unknown_mode():
    with pytest.raises(ValueError):
        compute_s(np.eye(2), "magic")


# --- construction ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def simulated():
    ds, truth = generate(SimulationConfig(n_items=16, n_good=100, n_biased=50, p1=0.2, p2=0.6), seed=9)
    ops = build_operators(ds)
    return ds, ops, construct_knockoffs(ops, rng=1)


def test_simulated_gram_conditions(simulated):
    _, ops, kf = simulated
    errs = gram_condition_errors(ops, kf)
    assert max(errs.values()) <= 1e-6
    assert kf.a_tilde.shape == (ops.n_edges, 150)


def test_column_norms_preserved(simulated):
    _, ops, kf = simulated
    a = ops.annot.toarray()
    np.testing.assert_allclose(np.linalg.norm(kf.a_tilde, axis=0), np.linalg.norm(a, axis=0), rtol=1e-9)


def test_swap_permutes_extended_gram(simulated):
    _, ops, kf = simulated
    a = ops.annot.toarray()
    x = np.hstack([a, kf.a_tilde])
    p = a.shape[1]
    for j in (0, 77, 149):
        perm = np.arange(2 * p)
        perm[j], perm[p + j] = p + j, j
        g = x.T @ x
        np.testing.assert_allclose(x[:, perm].T @ x[:, perm], g[np.ix_(perm, perm)], atol=1e-12)
        np.testing.assert_allclose(g[np.ix_(perm, perm)], g, atol=1e-6)


@pytest.mark.parametrize("normalize", [True, False])
@pytest.mark.parametrize("mode", ["equicorrelated", "sdp"])
def test_construction_modes(normalize, mode):
    _, ops = small_instance(3)
    kf = construct_knockoffs(ops, mode, normalize=normalize, rng=0)
    assert max(gram_condition_errors(ops, kf).values()) <= 1e-6
    assert np.linalg.eigvalsh(2 * kf.sigma - np.diag(kf.s))[0] >= -1e-8
    if not normalize:
        assert np.all((kf.s >= 0) & (kf.s <= 1))
    assert kf.normalized is normalize


def test_construction_dimension_error():
    rng = np.random.default_rng(0)
    ds, _, _ = random_dataset(rng, 6, 10, per_annotator=2)
    with pytest.raises(DimensionError) as exc:
        construct_knockoffs(build_operators(ds))
    assert "20 < 2*10 + 6" in str(exc.value)


def test_residual_design_matches_dense_projector():
    _, ops = small_instance(4)
    g = ops.grad.toarray()
    h = g @ np.linalg.pinv(g)
    a = ops.annot.toarray()
    resid, sigma = residual_design(ops)
    np.testing.assert_allclose(resid, a - h @ a, atol=1e-8)
    np.testing.assert_allclose(sigma, a.T @ (a - h @ a), atol=1e-8)


# --- statistics and thresholds -----------------------------------------------------------


def test_statistic_examples():
    st_ = knockoff_statistics([3.0, 1.0, 2.0, 0.0], [1.0, 3.0, 2.0, 0.0])
    np.testing.assert_array_equal(st_.w, [3.0, -3.0, 0.0, 0.0])


def test_statistic_length_mismatch():
    with pytest.raises(ValueError):
        knockoff_statistics([1.0], [1.0, 2.0])


def test_threshold_example_plain():
    # t = 1 already gives 1/3 <= 0.5, so the smallest qualifying t is 1
    res = knockoff_threshold([5, 4, 3, -1], 0.5, plus=False)
    assert res.threshold == 1.0
    assert res.selected == (0, 1, 2)


def test_threshold_example_plus():
    res = knockoff_threshold([5, 4, 3, -1], 0.5, plus=True)
    assert res.threshold == 3.0
    assert res.selected == (0, 1, 2)


def test_threshold_all_negative():
    res = knockoff_threshold([-1.0, -2.0, 0.0], 0.3)
    assert res.threshold == np.inf and res.selected == ()


def test_threshold_q_zero():
    # plain knockoff at q = 0 keeps positives above every negative magnitude
    assert knockoff_threshold([5, 4, -3, 1], 0.0).selected == (0, 1)
    assert knockoff_threshold([5, 4, -3, 1], 0.0, plus=True).selected == ()


def test_threshold_q_validation():
    with pytest.raises(ValueError):
        knockoff_threshold([1.0], 1.5)


w_vectors = st.lists(st.integers(-6, 6).map(float), min_size=1, max_size=30)


@settings(max_examples=200, deadline=None)
@given(w_vectors, st.floats(0, 1), st.booleans())
def test_threshold_invariants(w, q, plus):
    w = np.array(w)
    res = knockoff_threshold(w, q, plus)
    nonzero = set(np.abs(w[w != 0]).tolist())
    assert res.threshold == np.inf or res.threshold in nonzero
    assert set(res.selected) == set(np.flatnonzero(w >= res.threshold).tolist())
    if np.isfinite(res.threshold):
        offset = 1 if plus else 0
        t = res.threshold
        assert (offset + np.sum(w <= -t)) / max(1, np.sum(w >= t)) <= q
        for smaller in sorted(v for v in nonzero if v < t):
            assert (offset + np.sum(w <= -smaller)) / max(1, np.sum(w >= smaller)) > q


@settings(max_examples=200, deadline=None)
@given(w_vectors, st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone_in_q(w, q1, q2):
    q1, q2 = min(q1, q2), max(q1, q2)
    for plus in (False, True):
        assert set(knockoff_threshold(w, q1, plus).selected) <= set(knockoff_threshold(w, q2, plus).selected)


@settings(max_examples=200, deadline=None)
@given(w_vectors, st.floats(0, 1))
def test_plus_is_more_conservative(w, q):
    assert set(knockoff_threshold(w, q, True).selected) <= set(knockoff_threshold(w, q, False).selected)


# --- reduced model -----------------------------------------------------------------------


def test_reduced_kills_gradient_fields():
    _, ops = small_instance(5)
    y = ops.grad @ np.random.default_rng(0).normal(size=ops.n_items)
    _, y_r, _ = reduced_model(ops, y)
    assert np.max(np.abs(y_r)) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_reduced_projector_identities(seed):
    ds, ops = small_instance(seed, n_biased=2)
    x, y_r, u2 = reduced_model(ops, ds.response)
    resid, sigma = residual_design(ops)
    np.testing.assert_allclose(x.T @ x, sigma, atol=1e-8)
    np.testing.assert_allclose(x.T @ y_r, resid.T @ ds.response, atol=1e-8)
    gamma = np.random.default_rng(seed).normal(size=ops.n_coords)
    assert np.linalg.norm(x @ gamma - u2.T @ (ops.annot @ gamma)) <= 1e-8
    np.testing.assert_allclose(u2.T @ u2, np.eye(u2.shape[1]), atol=1e-10)


def test_reduced_knockoff_identities():
    _, ops = small_instance(6)
    kf = construct_knockoffs(ops, rng=2)
    x, _, u2 = reduced_model(ops, np.zeros(ops.n_edges))
    xt = u2.T @ kf.a_tilde
    np.testing.assert_allclose(xt.T @ xt, kf.sigma, atol=1e-8)
    np.testing.assert_allclose(x.T @ xt, kf.sigma - np.diag(kf.s), atol=1e-8)


def test_kernel_basis_dimension():
    _, ops = small_instance(7)
    u2 = kernel_basis(ops.grad)
    assert u2.shape[1] == ops.n_edges - (ops.n_items - ops.n_components)
    assert np.max(np.abs(ops.grad.T @ u2)) <= 1e-10


@pytest.mark.parametrize("engine", ["iss_exact", "lasso"])
def test_equivalence_null(engine):
    ds, ops = small_instance(8)
    rep = equivalence_check(ops, ds.response, engine=engine, rng=0)
    assert rep.passed, rep.summary()
    assert rep.summary().startswith("PASS max_diff<1e-6")


@pytest.mark.parametrize("engine", ["iss_exact", "lasso"])
def test_equivalence_planted_simulation(engine):
    ds, _ = generate(SimulationConfig(n_items=8, n_good=14, n_biased=6, p1=0.1, p2=0.6), seed=3)
    rep = equivalence_check(build_operators(ds), ds.response, engine=engine, rng=0)
    assert rep.max_diff <= 1e-6


def test_equivalence_engine_restriction():
    ds, ops = small_instance(9)
    with pytest.raises(ValueError):
        equivalence_check(ops, ds.response, engine="lbi")


def test_equivalence_warns_above_guideline():
    rng = np.random.default_rng(1)
    ds, _, _ = random_dataset(rng, 4, 101, per_annotator=6, noise=1.0)
    with pytest.warns(UserWarning, match="guideline"):
        rep = equivalence_check(build_operators(ds), ds.response, rng=0)
    assert rep.passed


# --- antisymmetry ------------------------------------------------------------------------


@pytest.mark.parametrize("engine", ["iss_exact", "lasso"])
def test_swap_flips_one_statistic(engine):
    ds, ops = small_instance(10, n_biased=3)
    kf = construct_knockoffs(ops, rng=0)
    ext = extended_operators(ops, kf)
    w = knockoff_stats_from_path(run_path(gram_stats(ext, ds.response), engine=engine)).w
    p = ops.n_coords
    for j in (0, 4):
        x = ext.annot.copy()
        x[:, [j, p + j]] = x[:, [p + j, j]]
        w_sw = knockoff_stats_from_path(run_path(gram_stats(ext.with_annot(x), ds.response), engine=engine)).w
        expect = w.copy()
        expect[j] = -w[j]
        np.testing.assert_allclose(w_sw, expect, atol=1e-8)


def test_extended_operators_shape():
    _, ops = small_instance(11)
    kf = construct_knockoffs(ops, rng=0)
    ext = extended_operators(ops, kf)
    assert ext.n_coords == 2 * ops.n_coords
    assert not sp.issparse(ext.annot)
