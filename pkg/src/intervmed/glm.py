"""Unpenalized GLM fitting (least squares and IRLS logistic) and prediction."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit, logit as _logit

from .errors import ConvergenceError, RankDeficiencyError, SeparationError, ValidationError

INTERCEPT = "(Intercept)"


class Link:
    name = "link"

    def __call__(self, mu):
        return self.link(mu)

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(self.name)


class Identity(Link):
    name = "identity"

    def link(self, mu):
        return np.asarray(mu, dtype=float) * 1.0

    def inverse(self, eta):
        return np.asarray(eta, dtype=float) * 1.0

    def in_domain(self, mu):
        return np.isfinite(mu)


class Log(Link):
    name = "log"

    def link(self, mu):
        return np.log(mu)

    def inverse(self, eta):
        return np.exp(eta)

    def in_domain(self, mu):
        return np.asarray(mu) > 0


class Logit(Link):
    name = "logit"

    def link(self, mu):
        return _logit(mu)

    def inverse(self, eta):
        return expit(eta)

    def in_domain(self, mu):
        mu = np.asarray(mu)
        return (mu > 0) & (mu < 1)


LINKS = {"identity": Identity(), "log": Log(), "logit": Logit()}


def get_link(link) -> Link:
    if isinstance(link, Link):
        return link
    try:
        return LINKS[str(link).lower()]
    except KeyError:
        raise ValueError(f"unknown link {link!r}; choose from {sorted(LINKS)}") from None


@dataclass(frozen=True)
class TermSpec:
    """Ordered model terms; each is a column name or a tuple of names (product).

    The intercept is implicit and always the first design column.  Pairwise
    products are the usual interactions; longer tuples are only needed for
    saturated models.
    """

    terms: tuple

    def __post_init__(self):
        norm = []
        for t in self.terms:
            t = (t,) if isinstance(t, str) else tuple(t)
            if len(t) < 1 or len(set(t)) != len(t):
                raise ValueError(f"bad term {t}")
            norm.append(t)
        keys = [tuple(sorted(t)) for t in norm]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate terms in TermSpec")
        object.__setattr__(self, "terms", tuple(norm))

    @classmethod
    def main_effects(cls, names):
        return cls(tuple((nm,) for nm in names))

    @classmethod
    def parse(cls, text):
        """Parse ``"A + M1 + M2 + M1:M2"`` (commas also separate terms)."""
        parts = [p.strip() for p in re.split(r"[+,]", text) if p.strip()]
        return cls(tuple(tuple(x.strip() for x in p.split(":")) for p in parts))

    @property
    def column_names(self):
        return (INTERCEPT,) + tuple(":".join(t) for t in self.terms)

    @property
    def variables(self):
        seen = []
        for t in self.terms:
            for v in t:
                if v not in seen:
                    seen.append(v)
        return tuple(seen)

    def __len__(self):
        return len(self.terms) + 1

    def __str__(self):
        return " + ".join(":".join(t) for t in self.terms)

    def design(self, context: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        """Build the design matrix from a name -> column mapping."""
        missing = [v for v in self.variables if v not in context]
        if missing:
            raise KeyError(f"design context lacks columns {missing}")
        if n is None:
            if not self.variables:
                raise ValueError("row count needed for an intercept-only design")
            n = np.shape(context[self.variables[0]])[0]
        X = np.empty((n, len(self)))
        X[:, 0] = 1.0
        for j, t in enumerate(self.terms, start=1):
            col = np.broadcast_to(np.asarray(context[t[0]], dtype=float), (n,))
            for extra in t[1:]:
                col = col * np.broadcast_to(np.asarray(context[extra], dtype=float), (n,))
            X[:, j] = col
        return X


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Coefficients plus everything needed to predict on the mean scale."""

    coef: np.ndarray
    link: Link
    column_names: tuple
    terms: TermSpec | None = None
    n_iter: int = 0
    deviance: float = float("nan")
    family: str = "linear"
    alpha: float | None = None
    lam: float | None = None
    penalty_factors: np.ndarray | None = None
    deviance_trace: tuple = field(default=(), repr=False)

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float)
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)
        if len(self.column_names) != coef.shape[0]:
            raise ValueError("coefficient count does not match column names")
        if not np.all(np.isfinite(coef)):
            raise ConvergenceError("non-finite coefficients")

    @property
    def params(self):
        return dict(zip(self.column_names, self.coef.tolist()))

    @property
    def forced(self):
        """Non-intercept columns exempt from shrinkage (zero penalty factor)."""
        if self.penalty_factors is None:
            return ()
        return tuple(nm for nm, w in zip(self.column_names[1:], self.penalty_factors) if w == 0)

    def linear_predictor(self, rows):
        return _as_design(self, rows) @ self.coef


def _as_design(model, rows):
    if isinstance(rows, Mapping):
        if model.terms is None:
            raise ValueError("model was fitted on a bare matrix; pass a design matrix")
        return model.terms.design(rows)
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != model.coef.shape[0]:
        raise ValueError(f"design has {X.shape[1]} columns, model expects {model.coef.shape[0]}")
    return X


def predict(model: FittedModel, rows) -> np.ndarray:
    """Mean-scale prediction ``g^{-1}(X beta)`` for a design matrix or context."""
    return model.link.inverse(model.linear_predictor(rows))


def check_rank(X, names=None, tol=1e-10):
    """Column-pivoted QR rank check; raises naming the dependent columns."""
    X = np.asarray(X, dtype=float)
    k = X.shape[1]
    if names is None:
        names = tuple(f"x{j}" for j in range(k))
    if X.shape[0] <= k:
        raise RankDeficiencyError(f"need n > k, got n={X.shape[0]}, k={k}", ())
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        raise RankDeficiencyError("design matrix is zero", names)
    rank = int(np.sum(d > tol * d[0]))
    if rank < k:
        bad = [names[j] for j in sorted(piv[rank:])]
        raise RankDeficiencyError(f"design is rank deficient; collinear columns: {bad}", bad)


def _names_for(X, terms, column_names):
    if terms is not None:
        return terms.column_names
    if column_names is not None:
        return tuple(column_names)
    return tuple(f"x{j}" for j in range(X.shape[1]))


def fit_ols(design, response, terms: TermSpec | None = None, column_names=None) -> FittedModel:
    """Least squares via column-pivoted QR."""
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    names = _names_for(X, terms, column_names)
    check_rank(X, names)
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    beta = np.empty(X.shape[1])
    beta[piv] = linalg.solve_triangular(R, Q.T @ y)
    # one step of iterative refinement tightens the normal-equation residual
    r = y - X @ beta
    Q2 = Q.T @ r
    delta = np.empty_like(beta)
    delta[piv] = linalg.solve_triangular(R, Q2)
    beta = beta + delta
    resid = y - X @ beta
    return FittedModel(coef=beta, link=LINKS["identity"], column_names=names, terms=terms,
                       n_iter=1, deviance=float(resid @ resid), family="linear")


def logistic_deviance(X, y, beta):
    eta = X @ beta
    return float(-2.0 * np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(design, response, terms: TermSpec | None = None, column_names=None,
                 max_iter=100, tol=1e-8, score_tol=1e-8, separation_bound=15.0) -> FittedModel:
    """Maximum-likelihood logistic regression by IRLS with step-halving.

    Stops when the relative deviance change falls below ``tol`` and the
    score has max-norm below ``score_tol``.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    names = _names_for(X, terms, column_names)
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("logistic response must be coded 0/1")
    if y.min() == y.max():
        raise ValidationError("logistic response has a single class")
    check_rank(X, names)

    beta = np.zeros(X.shape[1])
    dev = logistic_deviance(X, y, beta)
    trace = [dev]
    rel_ok = False
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = expit(eta)
        w = mu * (1.0 - mu)
        score = X.T @ (y - mu)
        if rel_ok and np.max(np.abs(score)) < score_tol:
            return FittedModel(coef=beta, link=LINKS["logit"], column_names=names, terms=terms,
                               n_iter=it - 1, deviance=dev, family="logistic",
                               deviance_trace=tuple(trace))
        H = (X * w[:, None]).T @ X
        try:
            step = linalg.solve(H, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(H, score)[0]
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            new_dev = logistic_deviance(X, y, cand)
            if np.isfinite(new_dev) and new_dev <= dev * (1 + 1e-12) + 1e-12:
                break
            t *= 0.5
        else:
            cand, new_dev = beta, dev
        change = abs(dev - new_dev)
        rel_ok = change / (abs(new_dev) + 0.1) < tol
        beta, dev = cand, new_dev
        trace.append(dev)
        big = np.max(np.abs(beta)) > separation_bound
        if big and (change < 1e-4 or dev < 1e-6 * len(y)):
            raise SeparationError(
                f"logistic fit diverging (max |coef| = {np.max(np.abs(beta)):.1f}): "
                "complete or quasi-complete separation")
    if np.max(np.abs(beta)) > separation_bound:
        raise SeparationError("logistic fit diverging: complete or quasi-complete separation")
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations (deviance {dev:.6g})")


def fit(terms: TermSpec, context: Mapping[str, np.ndarray], response, family="linear"):
    """Fit an unpenalized model from a term spec and a design context."""
    X = terms.design(context, n=len(response))
    if family == "linear":
        return fit_ols(X, response, terms=terms)
    if family == "logistic":
        return fit_logistic(X, response, terms=terms)
    raise ValueError(f"unknown family {family!r}")
