"""Nonparametric sampling of counterfactual mediator values.

Donors are observed individuals whose mediator values are copied.  Each
donor selection is a pure function of a key ``(seed, replicate, individual,
draw, slot, arm)`` hashed with SplitMix64 mixing, so draws are reproducible
under any parallel schedule, and two duplicated-data rows that ask for the
same key receive the same donor.

A *slot* identifies what is being drawn: one mediator (marginal draws) or
the whole mediator vector (joint draws).  Mediator slots are derived from
the mediator's name, which makes results invariant to column order.  The
joint slot is the XOR of the member slots, so with a single mediator a joint
draw and a marginal draw coincide exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .data import Dataset
from .errors import SeparationError
from .glm import TermSpec, fit_logistic, predict

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1

PROPENSITY_CLIP = (0.01, 0.99)
MAX_SATURATED_CELLS = 32


def _mix(z):
    """SplitMix64 finalizer on a uint64 array."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _combine(h, v):
    with np.errstate(over="ignore"):
        return _mix(h ^ (np.asarray(v).astype(np.uint64) + _GAMMA))


def _u64(x):
    return np.uint64(int(x) & _MASK)


def slot_id(name: str) -> int:
    """Stable 64-bit slot identifier for a mediator name."""
    return int.from_bytes(hashlib.blake2b(str(name).encode(), digest_size=8).digest(), "little")


def joint_slot(slots) -> int:
    out = 0
    for s in slots:
        out ^= int(s)
    return out


@dataclass(frozen=True)
class DrawKey:
    replicate: int
    individual: int
    draw: int
    slot: int
    arm: int


def keyed_uniform(seed, replicate, individuals, draws, slot, arm):
    """Uniform(0, 1) variates for every (individual, draw) pair.

    ``individuals`` and ``draws`` broadcast against each other; the result
    has their broadcast shape.
    """
    head = _mix(_u64(seed) + _GAMMA)
    for v in (replicate, slot, arm):
        head = _combine(head, _u64(v))
    ind = np.asarray(individuals, dtype=np.uint64)
    drw = np.asarray(draws, dtype=np.uint64)
    h = _combine(_combine(np.broadcast_to(head, np.broadcast(ind, drw).shape), ind), drw)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True, eq=False)
class DonorPool:
    """Per-arm donor rows and normalized sampling weights."""

    rows: tuple          # (rows of arm 0, rows of arm 1)
    weights: tuple       # matching normalized weights
    uniform: bool = True

    def __post_init__(self):
        cum = []
        for a in (0, 1):
            w = np.asarray(self.weights[a], dtype=float)
            if w.size == 0:
                raise ValueError(f"arm {a} has no donors")
            if np.any(w < 0):
                raise ValueError("donor weights must be non-negative")
            c = np.cumsum(w)
            c /= c[-1]
            cum.append(c)
        object.__setattr__(self, "_cum", tuple(cum))

    @classmethod
    def randomized(cls, dataset: Dataset):
        rows = tuple(dataset.arm(a) for a in (0, 1))
        return cls(rows, tuple(np.full(r.size, 1.0 / r.size) for r in rows), True)

    def size(self, a):
        return self.rows[a].size

    def select(self, u, a):
        """Map uniforms to donor row indices of arm ``a``."""
        rows = self.rows[a]
        if self.uniform:
            pos = np.minimum((u * rows.size).astype(np.intp), rows.size - 1)
        else:
            pos = np.minimum(np.searchsorted(self._cum[a], u, side="right"), rows.size - 1)
        return rows[pos]


def draw_donors(pool: DonorPool, seed, replicate, individuals, draws, slot, arm):
    """Donor row indices for a grid of (individual, draw) keys."""
    return pool.select(keyed_uniform(seed, replicate, individuals, draws, slot, arm), arm)


def draw_joint(pool: DonorPool, dataset: Dataset, key: DrawKey, seed=0):
    """One joint draw: a donor's entire observed mediator vector."""
    donor = int(draw_donors(pool, seed, key.replicate, key.individual, key.draw, key.slot, key.arm))
    return dataset.mediators[donor].copy()


def draw_marginal(pool: DonorPool, dataset: Dataset, key: DrawKey, mediator, seed=0):
    """One marginal draw of a single mediator from its own donor."""
    j = mediator if isinstance(mediator, (int, np.integer)) else dataset.mediator_index(mediator)
    donor = int(draw_donors(pool, seed, key.replicate, key.individual, key.draw, key.slot, key.arm))
    return float(dataset.mediators[donor, j])


def saturated_terms(dataset: Dataset):
    """All-interaction term spec over categorical covariates, or None.

    Applies when every covariate group is categorical (binary numeric columns
    count as two-level factors) and the cross-classification has at most
    ``MAX_SATURATED_CELLS`` cells.  Products that are zero for every row
    (unobserved cells) are dropped.
    """
    if dataset.q == 0:
        return TermSpec(())
    cells = 1
    for _, cols, k in dataset.covariate_groups:
        if k is None:
            return None
        cells *= k
    if cells > MAX_SATURATED_CELLS:
        return None
    groups = [cols for _, cols, _ in dataset.covariate_groups]
    ctx = dataset.context()
    terms = []
    for r in range(1, len(groups) + 1):
        for subset in combinations(groups, r):
            for combo in product(*subset):
                col = np.ones(dataset.n)
                for nm in combo:
                    col = col * ctx[nm]
                if col.any():
                    terms.append(tuple(combo))
    return TermSpec(tuple(terms))


def fit_propensity(dataset: Dataset, terms: TermSpec | None = None):
    """Logistic model for Pr(A = 1 | L).

    Saturated when all covariates are categorical with at most 32 cells
    (fitted probabilities then equal the empirical cell proportions);
    otherwise main effects, or the given ``terms``.  With no covariates the
    model is intercept only.
    """
    if terms is None:
        terms = saturated_terms(dataset)
        if terms is None:
            terms = TermSpec.main_effects(dataset.covariate_names)
    X = terms.design(dataset.context(), n=dataset.n)
    try:
        return fit_logistic(X, dataset.treatment, terms=terms)
    except SeparationError as exc:
        raise SeparationError(f"{exc}; coarsen the covariates") from None


def propensity_scores(dataset: Dataset, model):
    """Clipped fitted Pr(A = 1 | L) for every row."""
    ps = predict(model, model.terms.design(dataset.context(), n=dataset.n))
    return np.clip(ps, *PROPENSITY_CLIP)


def donor_weights(dataset: Dataset, propensity=None) -> DonorPool:
    """Inverse-propensity donor weights, normalized within each arm.

    The weight of individual i in arm a is Pr(A=a|L_i)^-1 divided by the sum
    of the same quantity over arm a.  ``propensity`` may be a fitted model
    (as returned by :func:`fit_propensity`) or an array of Pr(A=1|L).
    """
    if propensity is None:
        return DonorPool.randomized(dataset)
    if isinstance(propensity, np.ndarray):
        ps = np.clip(np.asarray(propensity, dtype=float), *PROPENSITY_CLIP)
    else:
        ps = propensity_scores(dataset, propensity)
    rows, weights = [], []
    for a in (0, 1):
        r = dataset.arm(a)
        inv = 1.0 / (ps[r] if a == 1 else 1.0 - ps[r])
        rows.append(r)
        weights.append(inv / inv.sum())
    return DonorPool(tuple(rows), tuple(weights), uniform=False)


def make_pool(dataset: Dataset, mode="randomized", propensity_terms=None) -> DonorPool:
    if mode == "randomized":
        return DonorPool.randomized(dataset)
    if mode == "observational":
        return donor_weights(dataset, fit_propensity(dataset, propensity_terms))
    raise ValueError(f"unknown mode {mode!r}")
