import numpy as np
import pytest
from scipy.special import expit

from intervmed.data import Dataset
from intervmed.errors import RefitInfeasibleError, ValidationError
from intervmed.highdim import (HighDimConfig, SelectionSets, analyze_mediator,
                               indirect_effect_for, refit_terms, run_all, screen)
from intervmed.sim import DgpSpec, generate, oracle

FAST = HighDimConfig(B=0, K=20, folds=5)


def noise_dataset(seed, n=300, p=11, effect=0.8):
    """M1 mediates A -> Y; M2..Mp are independent noise."""
    rng = np.random.default_rng(seed)
    A = (rng.random(n) < 0.5).astype(float)
    M = rng.normal(size=(n, p))
    M[:, 0] += effect * A
    Y = (rng.random(n) < expit(-0.2 + 0.4 * A + 0.6 * M[:, 0])).astype(float)
    return Dataset(treatment=A, mediators=M, outcome=Y, covariates=None,
                   mediator_names=tuple(f"M{j + 1}" for j in range(p)), outcome_type="binary")


def weak_outcome_confounder_spec():
    d = DgpSpec.load("figure1").to_dict()
    d["name"] = "figure1_weak_m2"
    d["outcome"]["mediators"]["M2"] = 0.05
    d["mediators"][2]["parents"] = {"M1": 0.6, "M2": 1.0}
    return DgpSpec.from_dict(d)


def test_selection_sets_exclude_forced_columns():
    ds = generate(DgpSpec.load("figure1"), n=300, seed=0)
    s = screen(ds, "M3", FAST)
    assert "A" not in s.union and "M3" not in s.union
    assert s.union == s.outcome_selected | s.mediator_selected


def test_refit_always_keeps_treatment_and_focal():
    ds = generate(DgpSpec.load("figure1"), n=300, seed=0)
    terms, meds = refit_terms(ds, "M2", SelectionSets("M2", set(), set()), FAST)
    assert terms.column_names[:3] == ("(Intercept)", "A", "M2")
    assert meds == ["M2"]
    assert "L1" in terms.column_names
    terms, _ = refit_terms(ds, "M2", SelectionSets("M2", set(), set()),
                           HighDimConfig(B=0, force_covariates=False))
    assert "L1" not in terms.column_names


def test_constant_focal_mediator_rejected():
    ds = noise_dataset(0)
    M = ds.mediators.copy()
    M[:, 2] = 1.0
    with pytest.raises(ValidationError, match="constant"):
        screen(ds._replace(mediators=M), "M3", FAST)


def test_refit_infeasible():
    rng = np.random.default_rng(0)
    n, p = 12, 30
    A = np.r_[np.ones(6), np.zeros(6)]
    M = rng.normal(size=(n, p))
    Y = M.sum(axis=1) + A
    ds = Dataset(treatment=A, mediators=M, outcome=Y, covariates=None,
                 mediator_names=tuple(f"M{j + 1}" for j in range(p)))
    with pytest.raises(RefitInfeasibleError, match="increase penalty"):
        screen(ds, "M1", HighDimConfig(B=0, folds=3, lambda_ratio=1e-6))


def test_null_focal_mediator_has_no_effect():
    vals = [indirect_effect_for(ds, "M5", SelectionSets("M5", set(), set()), config=FAST).estimate
            for ds in (noise_dataset(s) for s in range(30))]
    assert abs(np.mean(vals)) < 3 * np.std(vals, ddof=1) / np.sqrt(len(vals))


def test_weak_outcome_confounder_caught_by_mediator_screen():
    spec = weak_outcome_confounder_spec()
    only_mediator_screen = 0
    for r in range(20):
        s = screen(generate(spec, n=500, seed=r), "M3", FAST)
        assert "M2" in s.union
        only_mediator_screen += "M2" in s.mediator_selected and "M2" not in s.outcome_selected
    assert only_mediator_screen >= 5


def test_run_all_sorted_and_complete():
    ds = generate(DgpSpec.load("figure1"), n=300, seed=1)
    res = run_all(ds, HighDimConfig(B=100, K=5, K_replicate=3, folds=5, interval="percentile"))
    assert len(res) == 3 and not res.failures
    lows = [r.ci_low for r in res]
    assert lows == sorted(lows)
    for r in res:
        assert r.ci_low <= r.estimate <= r.ci_high
        assert r.refit_size < ds.n


def test_run_all_order_and_worker_invariant():
    ds = generate(DgpSpec.load("figure1"), n=200, seed=2)
    cfg = HighDimConfig(B=0, K=10, folds=5)
    a = run_all(ds, cfg)
    b = run_all(ds, HighDimConfig(B=0, K=10, folds=5, n_jobs=2), mediators=["M3", "M1", "M2"])
    assert [r.record() for r in a] == [r.record() for r in b]


def test_failures_recorded_not_fatal():
    ds = noise_dataset(1, p=4)
    M = ds.mediators.copy()
    M[:, 3] = 0.0
    res = run_all(ds._replace(mediators=M), FAST)
    assert len(res) == 3 and set(res.failures) == {"M4"}


def test_fixed_sets_skip_screening():
    ds = generate(DgpSpec.load("figure1"), n=200, seed=3)
    sets = SelectionSets("M3", {"M1", "M2"}, set())
    a = analyze_mediator(ds, "M3", HighDimConfig(B=0, K=10), sets=sets)
    assert a.sets is sets and a.refit_size == 6


@pytest.mark.slow
def test_figure1_confounders_selected():
    spec = DgpSpec.load("figure1")
    hits = sum({"M1", "M2"} <= screen(generate(spec, n=500, seed=r), "M3", HighDimConfig(B=0)).union
               for r in range(200))
    assert hits >= 160


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="minimum-loss CV (misclassification for binary Y) keeps "
                                       "noise mediators in most runs; see decisions ledger")
def test_pure_noise_union_mostly_empty():
    empty = sum(not screen(noise_dataset(s), "M1", HighDimConfig(B=0)).union for s in range(50))
    assert empty >= 40


@pytest.mark.slow
def test_figure1_focal_effect_matches_oracle_and_ablation_biases():
    spec = DgpSpec.load("figure1")
    truth = oracle(spec, n_oracle=10 ** 6)
    target = truth.as_dict()["IE[M3]"]
    cfg = HighDimConfig(B=0, K=20)
    screened, known, ablated = [], [], []
    for r in range(15):
        ds = generate(spec, n=2000, seed=700 + r)
        screened.append(analyze_mediator(ds, "M3", cfg).estimate)
        known.append(indirect_effect_for(ds, "M3", SelectionSets("M3", {"M1", "M2"}, set()),
                                         config=cfg).estimate)
        ablated.append(indirect_effect_for(ds, "M3", SelectionSets("M3", set(), set()),
                                           config=cfg).estimate)
    se = lambda v: np.std(v, ddof=1) / np.sqrt(len(v))
    tol = lambda v: 3 * np.hypot(se(v), truth.se["IE[M3]"])
    assert abs(np.mean(screened) - target) < tol(screened)
    assert abs(np.mean(known) - target) < tol(known)
    # screening found the true confounders, so it targets the same estimand
    np.testing.assert_allclose(screened, known, atol=1e-12)
    # dropping the confounders biases the estimate
    assert abs(np.mean(ablated) - target) > 5 * tol(ablated)


@pytest.mark.slow
def test_study2_single_replicate_smoke():
    spec = DgpSpec.load("study2")
    truth = oracle(spec, n_oracle=2 * 10 ** 5).as_dict()
    ds = generate(spec, n=1000, seed=1)
    cfg = HighDimConfig(B=0, K=20)
    for nm in ("M1", "M4"):
        r = analyze_mediator(ds, nm, cfg)
        assert np.sign(r.estimate) == np.sign(truth[f"IE[{nm}]"])
        assert r.refit_size < ds.n
    null = analyze_mediator(ds, "M50", cfg)
    assert abs(null.estimate) < 0.05
