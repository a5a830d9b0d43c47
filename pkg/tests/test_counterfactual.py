import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from intervmed.counterfactual import (DonorPool, DrawKey, PROPENSITY_CLIP, donor_weights,
                                      draw_donors, draw_joint, draw_marginal, fit_propensity,
                                      joint_slot, keyed_uniform, make_pool, propensity_scores,
                                      slot_id)
from intervmed.data import Dataset
from intervmed.sim import DgpSpec, generate, mediator_values

from conftest import make_dataset


def binary_cov_dataset():
    # L=0: 20 rows, 5 treated; L=1: 30 rows, 21 treated
    L = np.r_[np.zeros(20), np.ones(30)]
    A = np.r_[np.ones(5), np.zeros(15), np.ones(21), np.zeros(9)]
    rng = np.random.default_rng(0)
    return Dataset(treatment=A, mediators=rng.normal(size=(50, 1)), outcome=rng.normal(size=50),
                   covariates=L[:, None], mediator_names=("M1",), covariate_names=("L",))


def test_no_covariates_gives_empirical_rate():
    ds = make_dataset(n=60, q=0)
    ps = propensity_scores(ds, fit_propensity(ds))
    np.testing.assert_allclose(ps, ds.treatment.mean(), atol=1e-10)


def test_saturated_fit_equals_cell_proportions():
    ds = binary_cov_dataset()
    ps = propensity_scores(ds, fit_propensity(ds))
    np.testing.assert_allclose(ps[:20], 5 / 20, atol=1e-8)
    np.testing.assert_allclose(ps[20:], 21 / 30, atol=1e-8)


def test_saturated_with_two_binary_covariates():
    rng = np.random.default_rng(3)
    L = rng.integers(0, 2, size=(400, 2)).astype(float)
    cell = L[:, 0] * 2 + L[:, 1]
    A = (rng.random(400) < np.array([0.2, 0.5, 0.6, 0.9])[cell.astype(int)]).astype(float)
    ds = Dataset(treatment=A, mediators=rng.normal(size=(400, 1)), outcome=rng.normal(size=400),
                 covariates=L, mediator_names=("M1",), covariate_names=("L1", "L2"))
    ps = propensity_scores(ds, fit_propensity(ds))
    for c in range(4):
        np.testing.assert_allclose(ps[cell == c], A[cell == c].mean(), atol=1e-8)


def test_uniform_propensity_gives_uniform_weights():
    ds = make_dataset(n=40)
    pool = donor_weights(ds, np.full(40, 0.5))
    for a in (0, 1):
        np.testing.assert_allclose(pool.weights[a], 1 / pool.size(a), atol=1e-15)


def test_two_strata_weights():
    A = np.array([1.0, 1.0, 0.0])
    ds = Dataset(treatment=A, mediators=np.array([[1.0], [2.0], [3.0]]), outcome=np.zeros(3),
                 covariates=None, mediator_names=("M1",))
    pool = donor_weights(ds, np.array([0.8, 0.2, 0.5]))
    np.testing.assert_allclose(pool.weights[1], [0.2, 0.8], atol=1e-12)


@given(st.lists(st.floats(0.0, 1.0), min_size=6, max_size=40))
def test_weights_normalized_and_bounded(ps):
    n = len(ps)
    A = np.array([i % 2 for i in range(n)], dtype=float)
    ds = Dataset(treatment=A, mediators=np.arange(n, dtype=float)[:, None], outcome=np.zeros(n),
                 covariates=None, mediator_names=("M1",))
    pool = donor_weights(ds, np.array(ps))
    lo = PROPENSITY_CLIP[0]
    for a in (0, 1):
        w = pool.weights[a]
        assert abs(w.sum() - 1) < 1e-12 and np.all(w >= 0)
        r = pool.rows[a]
        p_a = np.clip(np.array(ps)[r], *PROPENSITY_CLIP)
        p_a = p_a if a == 1 else 1 - p_a
        norm = np.sum(1 / p_a)
        assert np.all(w <= (1 / lo) / norm + 1e-12)


def test_single_donor_arm():
    A = np.array([1.0, 0, 0, 0])
    M = np.array([[9.0, 8.0], [1, 2], [3, 4], [5, 6]])
    ds = Dataset(treatment=A, mediators=M, outcome=np.zeros(4), covariates=None,
                 mediator_names=("M1", "M2"))
    pool = make_pool(ds)
    for i in range(20):
        np.testing.assert_array_equal(draw_joint(pool, ds, DrawKey(0, i, 3, 77, 1)), [9, 8])


def test_identical_keys_identical_donors():
    ds = make_dataset(n=50)
    pool = make_pool(ds)
    k = DrawKey(2, 7, 11, slot_id("M1"), 0)
    assert draw_marginal(pool, ds, k, "M1", seed=5) == draw_marginal(pool, ds, k, "M1", seed=5)
    k2 = DrawKey(2, 7, 12, slot_id("M1"), 0)
    u = keyed_uniform(5, 2, np.arange(1000), 0, slot_id("M1"), 0)
    assert len(np.unique(u)) == 1000
    assert draw_donors(pool, 5, 2, 7, 11, k.slot, 0) == draw_donors(pool, 5, 2, 7, 11, k.slot, 0)
    assert k != k2


def test_keyed_uniform_broadcast_and_range():
    u = keyed_uniform(1, 0, np.arange(100)[:, None], np.arange(50)[None, :], 3, 1)
    assert u.shape == (100, 50)
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.01


def test_joint_draw_frequencies():
    ds = make_dataset(n=30)
    pool = make_pool(ds)
    donors = draw_donors(pool, 0, 0, np.arange(100_000), 0, joint_slot([slot_id("M1"), slot_id("M2")]), 1)
    counts = np.array([np.sum(donors == r) for r in pool.rows[1]])
    assert counts.sum() == 100_000
    assert chisquare(counts).pvalue > 0.01


def test_weighted_draw_frequencies():
    ds = make_dataset(n=30)
    w = np.linspace(1, 3, 15)
    pool = DonorPool((ds.arm(0), ds.arm(1)), (np.full(15, 1 / 15), w / w.sum()), uniform=False)
    donors = draw_donors(pool, 0, 0, np.arange(100_000), 0, 5, 1)
    counts = np.array([np.sum(donors == r) for r in pool.rows[1]])
    assert chisquare(counts, 100_000 * w / w.sum()).pvalue > 0.01


def test_marginal_draws_break_dependence():
    rng = np.random.default_rng(4)
    x = rng.normal(size=200)
    A = np.r_[np.ones(100), np.zeros(100)]
    ds = Dataset(treatment=A, mediators=np.column_stack([x, x]), outcome=np.zeros(200),
                 covariates=None, mediator_names=("M1", "M2"))
    pool = make_pool(ds)
    ind = np.arange(100_000)
    d1 = draw_donors(pool, 0, 0, ind, 0, slot_id("M1"), 1)
    d2 = draw_donors(pool, 0, 0, ind, 0, slot_id("M2"), 1)
    r = np.corrcoef(x[d1], x[d2])[0, 1]
    assert abs(r) < 0.02
    dj = draw_donors(pool, 0, 0, ind, 0, joint_slot([slot_id("M1"), slot_id("M2")]), 1)
    assert np.corrcoef(ds.mediators[dj, 0], ds.mediators[dj, 1])[0, 1] == pytest.approx(1)


def test_drawn_values_come_from_arm():
    ds = make_dataset(n=40)
    pool = make_pool(ds)
    donors = draw_donors(pool, 3, 1, np.arange(500)[:, None], np.arange(4)[None, :], slot_id("M2"), 0)
    assert set(donors.ravel()) <= set(ds.arm(0))


def _weighted_ks(values, weights, reference):
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cdf = np.cumsum(w) / w.sum()
    ref = np.sort(reference)
    F_ref = np.searchsorted(ref, v, side="right") / ref.size
    F_ref_left = np.searchsorted(ref, v, side="left") / ref.size
    prev = np.r_[0.0, cdf[:-1]]
    return max(np.max(np.abs(cdf - F_ref)), np.max(np.abs(prev - F_ref_left)))


def test_weighted_donors_match_counterfactual_distribution():
    spec = DgpSpec.load("study1_observational")
    ds = generate(spec, n=2000, seed=1)
    pool = make_pool(ds, "observational")
    rng = np.random.default_rng(99)
    N = 400_000
    L = rng.normal(size=(N, spec.n_covariates))
    U = rng.normal(size=(N, spec.n_latent))
    eps = rng.normal(size=(N, spec.p))
    naive = []
    for a in (0, 1):
        truth = mediator_values(spec, a, L, U, eps)
        for j in range(spec.p):
            vals = ds.mediators[pool.rows[a], j]
            assert _weighted_ks(vals, pool.weights[a], truth[:, j]) < 0.05
            naive.append(_weighted_ks(vals, np.ones(vals.size), truth[:, j]))
    # unweighted donors are visibly off for at least one margin
    assert max(naive) > 0.05


def test_unknown_mode():
    with pytest.raises(ValueError):
        make_pool(make_dataset(n=20), "bogus")
