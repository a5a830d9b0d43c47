import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit

from intervmed.elasticnet import (PenaltySpec, active_set, cv_select, enet_path, fit_enet,
                                  kkt_residual, lambda_path, make_folds)
from intervmed.errors import CrossValidationError
from intervmed.glm import FittedModel, fit_logistic, fit_ols, get_link


def _standardize(X, pf):
    mean = X.mean(axis=0)
    scale = np.where(pf > 0, X.std(axis=0), 1.0)
    return (X - mean) / scale, mean, scale


def independent_kkt(X, y, family, alpha, lam, pf, coef):
    """Max subgradient violation on the standardized scale, computed from scratch."""
    Z, _, scale = _standardize(X, pf)
    eta = coef[0] + X @ coef[1:]
    mu = eta if family == "linear" else expit(eta)
    grad = Z.T @ (mu - y) / len(y)
    b = coef[1:] * scale
    viol = [abs(np.mean(mu - y))]
    for j in range(X.shape[1]):
        g = grad[j] + lam * (1 - alpha) * pf[j] * b[j]
        if b[j] != 0:
            viol.append(abs(g + lam * alpha * pf[j] * np.sign(b[j])))
        else:
            viol.append(max(0.0, abs(g) - lam * alpha * pf[j]))
    return max(viol)


def oracle_cd(X, y, alpha, lam, pf, rng, sweeps=20000, tol=1e-15):
    """Linear elastic net by coordinate descent in random sweep order."""
    Z, mean, scale = _standardize(X, pf)
    n, d = Z.shape
    yc = y - y.mean()
    b = np.zeros(d)
    r = yc.copy()
    sq = (Z ** 2).mean(axis=0)
    for _ in range(sweeps):
        delta = 0.0
        for j in rng.permutation(d):
            old = b[j]
            rho = Z[:, j] @ r / n + sq[j] * old
            thr = lam * alpha * pf[j]
            new = np.sign(rho) * max(abs(rho) - thr, 0.0) / (sq[j] + lam * (1 - alpha) * pf[j])
            if new != old:
                r -= Z[:, j] * (new - old)
                b[j] = new
                delta = max(delta, (new - old) ** 2)
        if delta < tol:
            break
    beta = b / scale
    return np.concatenate([[y.mean() - mean @ beta], beta])


def random_problem(seed, family=None):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(30, 120))
    d = int(rng.integers(2, 12))
    X = rng.normal(size=(n, d)) * rng.uniform(0.2, 5.0, d) + rng.normal(size=d)
    beta = rng.normal(size=d) * (rng.random(d) < 0.5)
    family = family or ("linear" if seed % 2 else "logistic")
    eta = 0.3 + (X - X.mean(0)) / X.std(0) @ beta
    y = eta + rng.normal(size=n) if family == "linear" else (rng.random(n) < expit(eta)).astype(float)
    pf = np.where(rng.random(d) < 0.2, 0.0, rng.uniform(0.5, 2.0, d))
    alpha = float(rng.choice([1.0, 0.5, 0.1, rng.uniform()]))
    return X, y, family, alpha, pf, rng


def test_kkt_on_random_problems():
    worst = 0.0
    for seed in range(100):
        X, y, family, alpha, pf, rng = random_problem(seed)
        lam_max = max(1e-3, np.max(np.abs(_standardize(X, pf)[0].T @ (y - y.mean())) / len(y)) / max(alpha, 1e-3))
        lam = lam_max * float(rng.uniform(0.01, 0.8))
        spec = PenaltySpec(alpha, lam, tuple(pf))
        m = fit_enet(X, y, family, spec)
        worst = max(worst, independent_kkt(X, y, family, alpha, lam, pf, m.coef))
        assert kkt_residual(X, y, family, spec, m) < 1e-6
    assert worst < 1e-6


def test_lambda_zero_matches_unpenalized():
    for seed in range(10):
        X, y, family, alpha, pf, _ = random_problem(seed)
        m = fit_enet(X, y, family, PenaltySpec(alpha, 0.0))
        D = np.column_stack([np.ones(len(y)), X])
        ref = fit_ols(D, y) if family == "linear" else fit_logistic(D, y)
        np.testing.assert_allclose(m.coef, ref.coef, atol=1e-6, rtol=1e-6)


@pytest.mark.parametrize("family", ["linear", "logistic"])
def test_full_shrinkage(family):
    X, y, *_ = random_problem(3, family)
    m = fit_enet(X, y, family, PenaltySpec(0.5, 1e6))
    assert np.all(m.coef[1:] == 0)
    link = get_link("identity" if family == "linear" else "logit")
    assert m.coef[0] == pytest.approx(link.link(y.mean()), abs=1e-10)
    assert active_set(m) == frozenset()


def test_matches_independent_cd_oracle():
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        X = rng.normal(size=(80, 5)) * [1, 2, 0.5, 3, 1]
        y = X @ [1.0, -0.5, 0.0, 0.2, 0.0] + rng.normal(size=80)
        pf = np.ones(5)
        lam = 0.15
        m = fit_enet(X, y, "linear", PenaltySpec(1.0, lam), kkt_tol=1e-10)
        ref = oracle_cd(X, y, 1.0, lam, pf, rng)
        np.testing.assert_allclose(m.coef, ref, atol=1e-6)
        assert independent_kkt(X, y, "linear", 1.0, lam, pf, ref) < 1e-6


def test_unpenalized_coefficient_never_zero_along_path():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(150, 6))
    y = 0.4 * X[:, 0] + 0.8 * X[:, 1] + rng.normal(size=150)
    lams, b0, coefs = enet_path(X, y, "linear", 0.5, [0, 1, 1, 1, 1, 1])
    assert np.all(coefs[:, 0] != 0)
    assert np.all(np.diff(lams) < 0)
    assert np.all(coefs[0, 1:] == 0)


def test_active_set_monotone_on_orthonormal_design():
    rng = np.random.default_rng(11)
    n, d = 100, 8
    Q, _ = np.linalg.qr(rng.normal(size=(n, d)) - 0)
    Q -= Q.mean(axis=0)
    Q, _ = np.linalg.qr(Q)
    X = Q * np.sqrt(n)
    y = X @ np.linspace(1.0, 0.1, d) + rng.normal(size=n)
    _, _, coefs = enet_path(X, y, "linear", 1.0)
    sizes = (coefs != 0).sum(axis=1)
    assert np.all(np.diff(sizes) >= 0)
    for k in range(1, len(coefs)):
        assert set(np.flatnonzero(coefs[k - 1])) <= set(np.flatnonzero(coefs[k]))


def test_active_set_excludes_forced_columns():
    m = FittedModel(coef=np.array([0.1, 0.3, 0.0, -0.1]), link=get_link("identity"),
                    column_names=("(Intercept)", "A", "M2", "M3"),
                    penalty_factors=np.array([0.0, 1.0, 1.0]))
    assert active_set(m) == {"M3"}


def test_lambda_path_shape():
    path = lambda_path(2.0)
    assert len(path) == 100 and path[0] == 2.0 and path[-1] == pytest.approx(2e-4)
    assert np.allclose(np.diff(np.log(path)), np.log(1e-4) / 99)


@given(st.integers(4, 200), st.integers(2, 10), st.integers(0, 10 ** 6))
def test_folds_balanced_and_seeded(n, k, seed):
    if n < 2 * k and k != n:
        with pytest.raises(CrossValidationError):
            make_folds(n, k, seed)
        return
    f = make_folds(n, k, seed)
    counts = np.bincount(f, minlength=k)
    assert counts.max() - counts.min() <= 1
    np.testing.assert_array_equal(f, make_folds(n, k, seed))


def test_folds_stratified_when_a_class_is_rare():
    y = np.zeros(40)
    y[:3] = 1
    f = make_folds(40, 3, 0, y)
    for j in range(3):
        assert len(set(y[f != j])) == 2


def test_folds_impossible_stratification():
    y = np.zeros(20)
    y[0] = 1
    with pytest.raises(CrossValidationError):
        make_folds(20, 10, 0, y)


def test_loo_cv_matches_brute_force():
    rng = np.random.default_rng(5)
    n = 20
    X = rng.normal(size=(n, 4))
    y = X[:, 0] - 0.5 * X[:, 2] + rng.normal(size=n)
    pf = np.ones(4)
    cv = cv_select(X, y, "linear", 0.7, pf, k=n, seed=0, kkt_tol=1e-12, n_lambda=30)
    brute = np.empty(len(cv.lambdas))
    for li, lam in enumerate(cv.lambdas):
        err = []
        for i in range(n):
            keep = np.arange(n) != i
            m = fit_enet(X[keep], y[keep], "linear", PenaltySpec(0.7, lam), kkt_tol=1e-12)
            err.append((y[i] - m.coef[0] - X[i] @ m.coef[1:]) ** 2)
        brute[li] = np.mean(err)
    np.testing.assert_allclose(cv.mean_loss, brute, atol=1e-8, rtol=0)


def test_cv_selects_minimum_and_larger_lambda_on_ties():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 5))
    y = 2 * X[:, 0] + rng.normal(size=100)
    cv = cv_select(X, y, "linear", 0.5, np.ones(5), k=5, seed=3)
    best = np.flatnonzero(cv.mean_loss == cv.mean_loss.min())[0]
    assert cv.selected == cv.lambdas[best] == cv.lambda_min
    assert np.all(np.diff(cv.lambdas) < 0)
    assert cv.lambda_1se >= cv.lambda_min


def test_cv_deterministic_given_seed():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(90, 6))
    y = (rng.random(90) < expit(X[:, 0])).astype(float)
    a = cv_select(X, y, "logistic", 0.5, np.ones(6), k=5, seed=42, loss="misclassification")
    b = cv_select(X, y, "logistic", 0.5, np.ones(6), k=5, seed=42, loss="misclassification")
    np.testing.assert_array_equal(a.mean_loss, b.mean_loss)
    np.testing.assert_array_equal(a.model.coef, b.model.coef)


def _noise_empty_count(rule):
    empty = 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        X = rng.normal(size=(100, 10))
        y = rng.normal(size=100)
        cv = cv_select(X, y, "linear", 0.5, np.ones(10), k=10, seed=seed, rule=rule)
        empty += not active_set(cv.model)
    return empty


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="minimum-loss rule leaves noise selected in about a third "
                                       "of runs (33/50 empty); see decisions ledger")
def test_pure_noise_selects_nothing_min_rule():
    assert _noise_empty_count("min") >= 45


@pytest.mark.slow
def test_pure_noise_selects_nothing_1se_rule():
    assert _noise_empty_count("1se") >= 45


@pytest.mark.slow
def test_strong_predictor_selected():
    hits = 0
    for seed in range(50):
        rng = np.random.default_rng(2000 + seed)
        X = rng.normal(size=(100, 10))
        y = np.sqrt(10) * X[:, 0] + rng.normal(size=100)
        cv = cv_select(X, y, "linear", 0.5, np.ones(10), k=10, seed=seed)
        hits += "x0" in active_set(cv.model) or cv.model.coef[1] != 0
    assert hits >= 48
