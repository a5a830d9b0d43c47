"""Elastic-net penalized linear and logistic regression.

Cyclic coordinate descent with per-coefficient penalty factors, warm-started
lambda paths and k-fold cross-validation.  The objective on the standardized
scale is::

    loss(b0, b) + lam * sum_j w_j * ((1 - alpha) / 2 * b_j**2 + alpha * |b_j|)

where ``loss`` is half the mean squared error (linear) or the mean negative
log-likelihood (logistic).  Penalized columns are centered and scaled to unit
(population) standard deviation; zero-penalty columns are centered only.
Returned coefficients are on the original scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConvergenceError, CrossValidationError, ValidationError
from .glm import INTERCEPT, LINKS, FittedModel

MAX_SWEEPS = 100_000
KKT_TOL = 1e-7


@dataclass(frozen=True)
class PenaltySpec:
    alpha: float = 0.5
    lam: float = 0.0
    penalty_factors: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.penalty_factors is not None:
            pf = np.asarray(self.penalty_factors, dtype=float)
            if np.any(pf < 0):
                raise ValueError("penalty factors must be non-negative")
            object.__setattr__(self, "penalty_factors", tuple(pf.tolist()))

    def factors(self, d):
        if self.penalty_factors is None:
            return np.ones(d)
        pf = np.asarray(self.penalty_factors, dtype=float)
        if pf.shape[0] != d:
            raise ValueError(f"{pf.shape[0]} penalty factors for {d} predictors")
        return pf


@dataclass(frozen=True, eq=False)
class CvResult:
    lambdas: np.ndarray
    mean_loss: np.ndarray
    se_loss: np.ndarray
    lambda_min: float
    lambda_1se: float
    selected: float
    seed: int
    folds: np.ndarray = field(repr=False)
    model: FittedModel = field(repr=False, default=None)
    loss: str = "mse"


# -- kernels ---------------------------------------------------------------

@njit(cache=True, nogil=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True, nogil=True)
def _gram_sweep(G, c, l1, l2, b, Gb, active_only, active):
    d = b.shape[0]
    dmax = 0.0
    for j in range(d):
        if active_only and not active[j]:
            continue
        denom = G[j, j] + l2[j]
        if denom <= 0.0:
            continue
        bj = b[j]
        z = c[j] - Gb[j] + G[j, j] * bj
        new = _soft(z, l1[j]) / denom
        if new != bj:
            diff = new - bj
            for k in range(d):
                Gb[k] += G[k, j] * diff
            b[j] = new
            dd = denom * diff * diff
            if dd > dmax:
                dmax = dd
        if new != 0.0:
            active[j] = True
    return dmax


@njit(cache=True, nogil=True)
def _cd_gram(G, c, l1, l2, b, Gb, tol, max_sweeps):
    """Covariance-update coordinate descent for the quadratic objective."""
    d = b.shape[0]
    active = np.zeros(d, np.bool_)
    for j in range(d):
        active[j] = b[j] != 0.0
    sweeps = 0
    while sweeps < max_sweeps:
        dmax = _gram_sweep(G, c, l1, l2, b, Gb, False, active)
        sweeps += 1
        if dmax < tol:
            return sweeps
        while sweeps < max_sweeps:
            dmax = _gram_sweep(G, c, l1, l2, b, Gb, True, active)
            sweeps += 1
            if dmax < tol:
                break
    return -1


@njit(cache=True, nogil=True)
def _logistic_dev(y, eta):
    s = 0.0
    for i in range(y.shape[0]):
        e = eta[i]
        if e > 0:
            s += y[i] * e - (e + np.log1p(np.exp(-e)))
        else:
            s += y[i] * e - np.log1p(np.exp(e))
    return -2.0 * s


@njit(cache=True, nogil=True)
def _wls_sweep(X, w, v, r, eta, l1, l2, b, active_only, active):
    n, d = X.shape
    dmax = 0.0
    for j in range(d):
        if active_only and not active[j]:
            continue
        denom = v[j] + l2[j]
        if denom <= 0.0:
            continue
        bj = b[j]
        u = 0.0
        for i in range(n):
            u += X[i, j] * r[i]
        u = u / n + v[j] * bj
        new = _soft(u, l1[j]) / denom
        if new != bj:
            diff = new - bj
            for i in range(n):
                r[i] -= w[i] * X[i, j] * diff
                eta[i] += X[i, j] * diff
            b[j] = new
            dd = denom * diff * diff
            if dd > dmax:
                dmax = dd
        if new != 0.0:
            active[j] = True
    return dmax


@njit(cache=True, nogil=True)
def _cd_logistic(X, y, l1, l2, b, b0, tol, max_outer, max_sweeps):
    """Quadratic-approximation (IRLS) outer loop with weighted CD inside.

    Converged when the first sweep after re-weighting moves nothing by more
    than ``tol``.  Returns (intercept, total sweeps); sweeps < 0 flags
    non-convergence.
    """
    n, d = X.shape
    eta = np.empty(n)
    for i in range(n):
        s = b0
        for j in range(d):
            if b[j] != 0.0:
                s += X[i, j] * b[j]
        eta[i] = s
    w = np.empty(n)
    r = np.empty(n)
    v = np.empty(d)
    active = np.zeros(d, np.bool_)
    for j in range(d):
        active[j] = b[j] != 0.0
    sweeps = 0
    for outer in range(max_outer):
        sw = 0.0
        for i in range(n):
            mu = 1.0 / (1.0 + np.exp(-eta[i]))
            wi = mu * (1.0 - mu)
            if wi < 1e-5:
                wi = 1e-5
            w[i] = wi
            r[i] = y[i] - mu
            sw += wi
        for j in range(d):
            s = 0.0
            for i in range(n):
                s += w[i] * X[i, j] * X[i, j]
            v[j] = s / n
        first = True
        while True:
            dmax = _wls_sweep(X, w, v, r, eta, l1, l2, b, not first, active)
            sweeps += 1
            s = 0.0
            for i in range(n):
                s += r[i]
            d0 = s / sw
            b0 += d0
            for i in range(n):
                r[i] -= w[i] * d0
                eta[i] += d0
            step = max(dmax, d0 * d0 * sw / n)
            if sweeps >= max_sweeps:
                return b0, -1
            if first:
                if step < tol:
                    return b0, sweeps
                first = False
                continue
            if step < tol:
                # confirm with a full sweep before re-weighting
                dmax = _wls_sweep(X, w, v, r, eta, l1, l2, b, False, active)
                sweeps += 1
                if dmax < tol:
                    break
    return b0, -1


@njit(cache=True, nogil=True)
def _kkt_fast(X, y, G, c, logistic, b0, b, lam, alpha, pf, excluded):
    """Max KKT residual; X and y are used for logistic, G and c for linear."""
    d = b.shape[0]
    g = np.empty(d)
    out = 0.0
    if logistic:
        n = X.shape[0]
        r = np.empty(n)
        tot = 0.0
        for i in range(n):
            e = b0
            for j in range(d):
                if b[j] != 0.0:
                    e += X[i, j] * b[j]
            r[i] = y[i] - 1.0 / (1.0 + np.exp(-e))
            tot += r[i]
        out = abs(tot / n)
        for j in range(d):
            s = 0.0
            for i in range(n):
                s += X[i, j] * r[i]
            g[j] = -s / n
    else:
        for j in range(d):
            s = -c[j]
            for k in range(d):
                s += G[j, k] * b[k]
            g[j] = s
    for j in range(d):
        if excluded[j]:
            continue
        gj = g[j] + lam * (1.0 - alpha) * pf[j] * b[j]
        t = lam * alpha * pf[j]
        if b[j] > 0.0:
            res = abs(gj + t)
        elif b[j] < 0.0:
            res = abs(gj - t)
        else:
            res = abs(gj) - t
            if res < 0.0:
                res = 0.0
        if res > out:
            out = res
    return out


# -- standardization and single fits ---------------------------------------

class _Standardized:
    """Centering and scaling of one design; constant penalized columns are dropped."""

    def __init__(self, X, pf):
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(pf > 0, sd, 1.0)
        self.constant = sd <= 1e-12 * np.maximum(1.0, np.abs(self.mean))
        self.scale[self.constant] = 1.0
        self.Xs = np.asfortranarray((X - self.mean) / self.scale)
        if np.any(self.constant):
            self.Xs[:, self.constant] = 0.0

    def to_original(self, b0, b):
        beta = np.where(self.constant, 0.0, b / self.scale)
        return b0 - beta @ self.mean, beta


def _check_family(y, family):
    if family == "logistic":
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("logistic response must be coded 0/1")
        if y.min() == y.max():
            raise ValidationError("logistic response has a single class")
    elif family != "linear":
        raise ValueError(f"unknown family {family!r}")


class _Problem:
    """One (design, response, family, alpha, penalty factors) problem on standardized scale."""

    def __init__(self, X, y, family, alpha, pf):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError("design and response sizes disagree")
        _check_family(y, family)
        self.n, self.d = X.shape
        self.family = family
        self.alpha = float(alpha)
        self.pf = np.asarray(pf, dtype=float)
        self.std = _Standardized(X, self.pf)
        self.y = y
        self.ybar = y.mean()
        if family == "linear":
            Xs = self.std.Xs
            self.G = Xs.T @ Xs / self.n
            self.c = Xs.T @ (y - self.ybar) / self.n
        self.b = np.zeros(self.d)
        self.b0 = self.ybar if family == "linear" else float(np.log(self.ybar / (1 - self.ybar)))
        self.excluded = self.std.constant & (self.pf > 0)
        self._empty1 = np.zeros(0)
        self._empty2 = np.zeros((0, 0))

    def penalties(self, lam):
        l1 = lam * self.alpha * self.pf
        l2 = lam * (1.0 - self.alpha) * self.pf
        l1 = np.where(self.excluded, np.inf, l1)
        return l1, l2

    def gradient(self, b0, b):
        """Gradient of the smooth loss (without penalty) on the standardized scale."""
        if self.family == "linear":
            return self.G @ b - self.c
        eta = b0 + self.std.Xs @ b
        mu = 1.0 / (1.0 + np.exp(-eta))
        return -(self.std.Xs.T @ (self.y - mu)) / self.n

    def kkt(self, lam, b0=None, b=None):
        """Max KKT residual (standardized scale) for the current or given solution."""
        b0 = self.b0 if b0 is None else b0
        b = self.b if b is None else b
        g = self.gradient(b0, b) + lam * (1 - self.alpha) * self.pf * b
        t = lam * self.alpha * self.pf
        nz = b != 0
        res = np.where(nz, np.abs(g + t * np.sign(b)), np.maximum(np.abs(g) - t, 0.0))
        res = np.where(self.excluded, 0.0, res)
        out = float(res.max()) if res.size else 0.0
        if self.family == "logistic":
            eta = b0 + self.std.Xs @ b
            out = max(out, abs(float(np.mean(self.y - 1.0 / (1.0 + np.exp(-eta))))))
        return out

    def kkt_fast(self, lam):
        if self.family == "linear":
            return _kkt_fast(self._empty2, self._empty1, self.G, self.c, False, self.b0, self.b,
                             lam, self.alpha, self.pf, self.excluded)
        return _kkt_fast(self.std.Xs, self.y, self._empty2, self._empty1, True, self.b0, self.b,
                         lam, self.alpha, self.pf, self.excluded)

    def deviance(self, b0=None, b=None):
        b0 = self.b0 if b0 is None else b0
        b = self.b if b is None else b
        eta = b0 + self.std.Xs @ b
        if self.family == "linear":
            r = self.y - eta
            return float(r @ r)
        return float(-2.0 * np.sum(self.y * eta - np.logaddexp(0.0, eta)))

    def null_deviance(self):
        if self.family == "linear":
            r = self.y - self.ybar
            return float(r @ r)
        m = self.ybar
        return float(-2.0 * self.n * (m * np.log(m) + (1 - m) * np.log(1 - m)))

    def solve(self, lam, kkt_tol=KKT_TOL, max_sweeps=MAX_SWEEPS):
        l1, l2 = self.penalties(lam)
        # squared-step tolerance; KKT residuals scale roughly like its square root
        tol = min(kkt_tol * kkt_tol, 1e-10)
        for _ in range(5):
            if self.family == "linear":
                Gb = self.G @ self.b
                sweeps = _cd_gram(self.G, self.c, l1, l2, self.b, Gb, tol, max_sweeps)
            else:
                b0, sweeps = _cd_logistic(self.std.Xs, self.y, l1, l2, self.b, self.b0,
                                          tol, 10_000, max_sweeps)
                self.b0 = b0
            if sweeps < 0:
                raise ConvergenceError(f"coordinate descent did not converge in {max_sweeps} sweeps")
            if self.kkt_fast(lam) < kkt_tol:
                return
            tol *= 1e-2
        res = self.kkt_fast(lam)
        if res >= kkt_tol * 10:
            raise ConvergenceError(f"KKT residual {res:.2e} exceeds tolerance at lambda={lam:.4g}")

    def lambda_max(self):
        """Smallest lambda at which every penalized coefficient is zero."""
        pen = (self.pf > 0) & ~self.excluded
        if not pen.any():
            return 0.0
        saved = self.b.copy(), self.b0
        self.b = np.zeros(self.d)
        self.b0 = self.ybar if self.family == "linear" else float(np.log(self.ybar / (1 - self.ybar)))
        if np.any(self.pf == 0):
            l1 = np.where(self.pf > 0, np.inf, 0.0)
            l2 = np.zeros(self.d)
            if self.family == "linear":
                Gb = self.G @ self.b
                _cd_gram(self.G, self.c, l1, l2, self.b, Gb, 1e-20, MAX_SWEEPS)
            else:
                self.b0 = _cd_logistic(self.std.Xs, self.y, l1, l2, self.b, self.b0,
                                       1e-20, 10_000, MAX_SWEEPS)[0]
        g = self.gradient(self.b0, self.b)
        a = max(self.alpha, 1e-3)
        lam = float(np.max(np.abs(g[pen]) / (a * self.pf[pen])))
        self.b, self.b0 = saved
        return lam

    def model(self, lam, names):
        b0, beta = self.std.to_original(self.b0, self.b)
        coef = np.concatenate([[b0], beta])
        link = LINKS["identity" if self.family == "linear" else "logit"]
        return FittedModel(coef=coef, link=link, column_names=(INTERCEPT,) + tuple(names),
                           family=self.family, alpha=self.alpha, lam=float(lam),
                           penalty_factors=self.pf.copy())


def _names(d, column_names):
    if column_names is None:
        return tuple(f"x{j}" for j in range(d))
    if len(column_names) != d:
        raise ValueError("column_names length does not match the design")
    return tuple(column_names)


def fit_enet(design, response, family="linear", spec: PenaltySpec = PenaltySpec(),
             column_names=None, kkt_tol=KKT_TOL) -> FittedModel:
    """Fit one elastic-net model at a fixed lambda.

    ``design`` excludes the intercept, which is always unpenalized.
    """
    X = np.asarray(design, dtype=float)
    prob = _Problem(X, response, family, spec.alpha, spec.factors(X.shape[1]))
    lam = spec.lam
    lmax = prob.lambda_max()
    if lam > 0 and lmax > lam:
        # warm start down a short path from lambda_max for stability
        for l in np.geomspace(lmax, lam, 8)[:-1]:
            prob.solve(l, kkt_tol)
    prob.solve(lam, kkt_tol)
    return prob.model(lam, _names(X.shape[1], column_names))


def kkt_residual(design, response, family, spec: PenaltySpec, model: FittedModel) -> float:
    """Max KKT residual of ``model`` on the standardized scale."""
    X = np.asarray(design, dtype=float)
    prob = _Problem(X, response, family, spec.alpha, spec.factors(X.shape[1]))
    beta = model.coef[1:] * prob.std.scale
    b0 = model.coef[0] + model.coef[1:] @ prob.std.mean
    return prob.kkt(spec.lam, b0, beta)


def lambda_path(lmax, n_lambda=100, ratio=1e-4):
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(lmax, lmax * ratio, n_lambda)


def enet_path(design, response, family="linear", alpha=0.5, penalty_factors=None,
              lambdas=None, n_lambda=100, ratio=1e-4, kkt_tol=KKT_TOL, early_stop=False):
    """Warm-started fits along a decreasing lambda path.

    Returns ``(lambdas, intercepts, coefs)`` on the original scale with
    ``coefs`` of shape ``(len(lambdas), d)``.  With ``early_stop`` the path
    ends once the fraction of deviance explained exceeds 0.999 or grows by
    less than a relative 1e-5 between neighbouring lambdas (after at least
    five fits), as glmnet does.
    """
    X = np.asarray(design, dtype=float)
    pf = PenaltySpec(alpha, 0.0, penalty_factors).factors(X.shape[1])
    prob = _Problem(X, response, family, alpha, pf)
    if lambdas is None:
        lambdas = lambda_path(prob.lambda_max(), n_lambda, ratio)
    lambdas = np.asarray(lambdas, dtype=float)
    b0s = np.empty(lambdas.shape[0])
    coefs = np.empty((lambdas.shape[0], X.shape[1]))
    null = prob.null_deviance()
    prev = 0.0
    for k, lam in enumerate(lambdas):
        prob.solve(lam, kkt_tol)
        b0s[k], coefs[k] = prob.std.to_original(prob.b0, prob.b)
        if early_stop and null > 0:
            ratio_k = 1.0 - prob.deviance() / null
            if k >= 4 and (ratio_k - prev < 1e-5 * ratio_k or ratio_k > 0.999):
                return lambdas[:k + 1], b0s[:k + 1], coefs[:k + 1]
            prev = ratio_k
    return lambdas, b0s, coefs


def make_folds(n, k, seed, y=None):
    """Seeded random partition into ``k`` folds with sizes differing by at most one.

    When ``y`` is given (binary), every training set must contain both
    classes; otherwise folds are re-drawn stratified by class.
    """
    if k < 2:
        raise CrossValidationError("need at least 2 folds")
    if n < 2 * k and k != n:
        raise CrossValidationError(f"need n >= 2k (n={n}, k={k})")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.int64)
    folds[rng.permutation(n)] = np.arange(n) % k
    if y is None or _training_sets_ok(folds, y, k):
        return folds
    folds = np.empty(n, dtype=np.int64)
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        folds[rng.permutation(idx)] = (offset + np.arange(idx.size)) % k
        offset += idx.size
    if not _training_sets_ok(folds, y, k):
        raise CrossValidationError("cannot form folds whose training sets contain both classes")
    return folds


def _training_sets_ok(folds, y, k):
    for f in range(k):
        train = y[folds != f]
        if train.size == 0 or train.min() == train.max():
            return False
    return True


def _fold_loss(y, b0, coefs, X, family, loss):
    eta = b0[None, :] + X @ coefs.T          # (n_test, L)
    if loss == "mse":
        mu = eta if family == "linear" else 1.0 / (1.0 + np.exp(-eta))
        return ((y[:, None] - mu) ** 2).sum(axis=0)
    if loss == "misclassification":
        return ((eta > 0).astype(float) != y[:, None]).sum(axis=0)
    if loss == "deviance":
        if family == "linear":
            return ((y[:, None] - eta) ** 2).sum(axis=0)
        return -2.0 * (y[:, None] * eta - np.logaddexp(0.0, eta)).sum(axis=0)
    raise ValueError(f"unknown loss {loss!r}")


def cv_select(design, response, family="linear", alpha=0.5, penalty_factors=None, k=10,
              loss=None, seed=0, rule="min", column_names=None, n_lambda=100,
              ratio=1e-4, kkt_tol=KKT_TOL, refit=True, early_stop=True) -> CvResult:
    """Choose lambda by k-fold cross-validation.

    The lambda path (100 log-spaced points from lambda_max down to
    ``ratio * lambda_max``, truncated by the early-stopping rule of
    :func:`enet_path`) is computed on the full data and shared by all
    folds.  The CV loss at each lambda is the mean over all held-out rows.
    ``rule="min"`` picks its minimizer (ties go to the larger lambda);
    ``rule="1se"`` the largest lambda within one standard error of the
    minimum, the standard error being the spread of per-fold mean losses
    over sqrt(k).
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n, d = X.shape
    if loss is None:
        loss = "mse" if family == "linear" else "misclassification"
    if rule not in ("min", "1se"):
        raise ValueError(f"unknown rule {rule!r}")
    pf = PenaltySpec(alpha, 0.0, penalty_factors).factors(d)
    folds = make_folds(n, k, seed, y if family == "logistic" else None)
    lambdas, full_b0, full_coefs = enet_path(X, y, family, alpha, pf, n_lambda=n_lambda,
                                             ratio=ratio, kkt_tol=kkt_tol, early_stop=early_stop)
    losses = np.zeros((k, lambdas.shape[0]))
    counts = np.zeros(k)
    for f in range(k):
        test = folds == f
        try:
            _, b0s, coefs = enet_path(X[~test], y[~test], family, alpha, pf, lambdas,
                                      kkt_tol=kkt_tol)
        except ValidationError as exc:
            raise CrossValidationError(f"fold {f}: {exc}") from None
        losses[f] = _fold_loss(y[test], b0s, coefs, X[test], family, loss)
        counts[f] = test.sum()
    mean = losses.sum(axis=0) / n
    fold_means = losses / counts[:, None]
    se = fold_means.std(axis=0, ddof=1) / np.sqrt(k)
    i_min = int(np.argmin(mean))
    lam_min = float(lambdas[i_min])
    within = np.flatnonzero(mean <= mean[i_min] + se[i_min])
    i_1se = int(within.min())
    i_sel = i_min if rule == "min" else i_1se
    model = None
    if refit:
        coef = np.concatenate([[full_b0[i_sel]], full_coefs[i_sel]])
        link = LINKS["identity" if family == "linear" else "logit"]
        model = FittedModel(coef=coef, link=link,
                            column_names=(INTERCEPT,) + _names(d, column_names), family=family,
                            alpha=float(alpha), lam=float(lambdas[i_sel]), penalty_factors=pf.copy())
    return CvResult(lambdas=lambdas, mean_loss=mean, se_loss=se, lambda_min=lam_min,
                    lambda_1se=float(lambdas[i_1se]), selected=float(lambdas[i_sel]), seed=seed,
                    folds=folds, model=model, loss=loss)


def active_set(model: FittedModel) -> frozenset:
    """Names of penalized non-intercept columns with non-zero coefficients.

    Columns with a zero penalty factor are never reported here; see
    ``model.forced``.
    """
    names = model.column_names[1:]
    coefs = model.coef[1:]
    pf = model.penalty_factors if model.penalty_factors is not None else np.ones(len(names))
    return frozenset(nm for nm, b, w in zip(names, coefs, pf) if b != 0 and w > 0)
