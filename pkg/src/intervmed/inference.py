"""Nonparametric bootstrap with percentile and BCa intervals.

Replicate ``b`` resamples rows with ``numpy.random.default_rng([seed, b])``
and re-runs the whole estimator on the resampled data.  Results depend only
on ``(seed, B, dataset, estimator)``, never on the worker schedule.

Quantiles use the type-6 (Weibull) plotting position, i.e. the
``p (B + 1)``-th order statistic with linear interpolation.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .errors import BootstrapError, IntervMedError

MAX_FAILED_FRACTION = 0.10
JACKKNIFE_GROUPS = 200
# replicate failures that are dropped rather than propagated
_RECOVERABLE = (IntervMedError, np.linalg.LinAlgError, FloatingPointError)


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Bootstrap replicates and confidence bounds for a vector of effects."""

    B: int
    names: tuple
    estimate: np.ndarray
    replicates: np.ndarray = field(repr=False)
    interval: str
    level: float
    lower: np.ndarray
    upper: np.ndarray
    n_failed: int = 0
    failures: tuple = field(default=(), repr=False)
    z0: np.ndarray | None = None
    acceleration: np.ndarray | None = None
    fallback: tuple = ()

    def ci(self, name):
        j = self.names.index(name)
        return float(self.lower[j]), float(self.upper[j])

    def excludes_zero(self, name):
        lo, hi = self.ci(name)
        return lo > 0 or hi < 0

    def as_records(self):
        return [{"effect": nm, "estimate": float(e), "ci_low": float(lo), "ci_high": float(hi)}
                for nm, e, lo, hi in zip(self.names, self.estimate, self.lower, self.upper)]


def _as_vector(value):
    if hasattr(value, "vector"):
        return np.asarray(value.vector(), dtype=float), tuple(value.names())
    v = np.atleast_1d(np.asarray(value, dtype=float))
    return v, tuple(f"theta{j}" for j in range(v.size))


def resample_indices(n, seed, b):
    """Row indices of bootstrap replicate ``b`` (0-based)."""
    return np.random.default_rng([int(seed), int(b)]).integers(0, n, n)


def quantile6(x, q):
    """Type-6 sample quantile(s) of ``x``."""
    return np.quantile(np.asarray(x, dtype=float), q, method="weibull")


def bca_levels(z0, a, alphas):
    """Adjusted percentile levels of the BCa interval."""
    alphas = np.asarray(alphas, dtype=float)
    if z0 == 0 and a == 0:
        return alphas
    z = norm.ppf(alphas)
    return norm.cdf(z0 + (z0 + z) / (1.0 - a * (z0 + z)))


def acceleration(jack):
    """Jackknife acceleration from leave-one-out (or leave-group-out) values."""
    d = np.mean(jack) - np.asarray(jack, dtype=float)
    s2 = np.sum(d * d)
    if s2 == 0:
        return 0.0
    return float(np.sum(d ** 3) / (6.0 * s2 ** 1.5))


def bias_correction(replicates, estimate):
    frac = np.mean(np.asarray(replicates) < estimate)
    return float(norm.ppf(frac))


def jackknife_groups(n, seed, groups=JACKKNIFE_GROUPS):
    """Leave-out blocks: single rows when n <= 2000, else ``groups`` random blocks."""
    if n <= 2000:
        return [np.array([i]) for i in range(n)]
    perm = np.random.default_rng([int(seed), 2 ** 31]).permutation(n)
    return [np.sort(g) for g in np.array_split(perm, groups)]


def _run(estimator, dataset, replicate):
    try:
        return _as_vector(estimator(dataset, replicate=replicate))[0], None
    except _RECOVERABLE as exc:
        return None, f"replicate {replicate}: {type(exc).__name__}: {exc}"


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, items))


def bootstrap(dataset: Dataset, estimator: Callable, B: int = 500, seed: int = 0,
              interval: str = "bca", level: float = 0.95, n_jobs: int = 1,
              estimate=None) -> BootstrapResult:
    """Bootstrap confidence intervals for every component of ``estimator``.

    Parameters
    ----------
    dataset : Dataset
        Observed data.
    estimator : callable
        ``estimator(dataset, replicate=r)`` returning a float, an array or an
        object with ``vector()`` and ``names()`` (e.g. EffectDecomposition).
        The original data use ``replicate=0``, bootstrap sample ``b`` uses
        ``b + 1`` and jackknife block ``j`` uses ``B + 1 + j``.
    B : int
        Number of bootstrap samples (at least 2).
    interval : {"percentile", "bca"}
    estimate : optional
        Precomputed value on the original data.

    Returns
    -------
    BootstrapResult
        Failed replicates are dropped and counted; more than 10% failures
        raise BootstrapError.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if interval not in ("percentile", "bca"):
        raise ValueError(f"unknown interval type {interval!r}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if estimate is None:
        estimate = estimator(dataset, replicate=0)
    theta, names = _as_vector(estimate)
    n = dataset.n

    def one(b):
        try:
            ds = dataset.take(resample_indices(n, seed, b))
        except _RECOVERABLE as exc:
            return None, f"replicate {b + 1}: {type(exc).__name__}: {exc}"
        return _run(estimator, ds, b + 1)

    out = _map(one, range(B), n_jobs)
    failures = [msg for v, msg in out if v is None]
    if len(failures) > MAX_FAILED_FRACTION * B:
        raise BootstrapError(f"{len(failures)} of {B} bootstrap replicates failed; "
                             f"first: {failures[0]}")
    reps = np.array([v for v, _ in out if v is not None])
    if not np.all(np.isfinite(reps)):
        raise BootstrapError("non-finite bootstrap replicate values")

    tail = (1.0 - level) / 2.0
    alphas = np.array([tail, 1.0 - tail])
    lower = np.empty(theta.size)
    upper = np.empty(theta.size)
    z0s = np.zeros(theta.size)
    accs = np.zeros(theta.size)
    fallback = []
    jack = None
    if interval == "bca":
        blocks = jackknife_groups(n, seed)

        def leave_out(j):
            keep = np.setdiff1d(np.arange(n), blocks[j], assume_unique=True)
            try:
                ds = dataset.take(keep)
            except _RECOVERABLE as exc:
                return None, f"jackknife {j}: {exc}"
            return _run(estimator, ds, B + 1 + j)

        jout = _map(leave_out, range(len(blocks)), n_jobs)
        jfail = [msg for v, msg in jout if v is None]
        if len(jfail) > MAX_FAILED_FRACTION * len(blocks):
            raise BootstrapError(f"{len(jfail)} jackknife fits failed; first: {jfail[0]}")
        jack = np.array([v for v, _ in jout if v is not None])
        failures += jfail

    for j in range(theta.size):
        r = reps[:, j]
        levels = alphas
        if interval == "bca":
            frac = np.mean(r < theta[j])
            if np.ptp(r) == 0 or frac in (0.0, 1.0):
                warnings.warn(f"degenerate bootstrap distribution for {names[j]}; "
                              "using the percentile interval", RuntimeWarning, stacklevel=2)
                fallback.append(names[j])
            else:
                z0s[j] = norm.ppf(frac)
                accs[j] = acceleration(jack[:, j])
                levels = bca_levels(z0s[j], accs[j], alphas)
        lower[j], upper[j] = quantile6(r, levels)

    return BootstrapResult(B=B, names=names, estimate=theta, replicates=reps, interval=interval,
                           level=level, lower=lower, upper=upper, n_failed=len(failures),
                           failures=tuple(failures), z0=z0s if interval == "bca" else None,
                           acceleration=accs if interval == "bca" else None,
                           fallback=tuple(fallback))
