"""Monte Carlo estimation of interventional direct and indirect effects.

Every individual is expanded into duplicated-data rows, one per
hypothetical assignment ``(a0 | a1, ..., ap)``.  In *joint* rows the
mediator vector is copied from a single donor of arm ``a1``; in *marginal*
rows each mediator ``s`` is copied from its own donor of arm ``a_s``.  The
fitted outcome model is evaluated on each draw, averaged over ``K`` draws
per individual and then over individuals.  All effects are contrasts of
the link-transformed row averages of one shared table, so::

    TE = DE + JIE
    JIE - sum_s IE_s = IE_mutual + IE_remainder

hold to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .counterfactual import DonorPool, draw_donors, joint_slot, make_pool, slot_id
from .data import BINARY, Dataset
from .errors import IntervMedError, LinkDomainError
from .glm import FittedModel, TermSpec, fit, get_link, predict

JOINT = "joint"
MARGINAL = "marginal"

# draws are evaluated in blocks of at most this many (individual, draw) pairs
BLOCK = 200_000


@dataclass(frozen=True)
class HypotheticalAssignment:
    a0: int
    arms: tuple
    mode: str = MARGINAL

    def __post_init__(self):
        arms = tuple(int(a) for a in self.arms)
        object.__setattr__(self, "arms", arms)
        if self.a0 not in (0, 1) or any(a not in (0, 1) for a in arms):
            raise ValueError("hypothetical treatments must be 0 or 1")
        if self.mode not in (JOINT, MARGINAL):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == JOINT and len(set(arms)) > 1:
            raise ValueError("joint rows draw every mediator from one arm")

    @property
    def key(self):
        return (self.mode, self.a0, self.arms)

    def __str__(self):
        tag = "J" if self.mode == JOINT else "M"
        return f"{tag}({self.a0}|{''.join(map(str, self.arms))})"


def _joint(a0, a, p):
    return HypotheticalAssignment(a0, (a,) * p, JOINT)


def _marginal(a0, arms):
    return HypotheticalAssignment(a0, tuple(arms), MARGINAL)


def build_duplicated_rows(p: int, reference: int = 0) -> list[HypotheticalAssignment]:
    """Duplicated-data rows for ``p`` mediators.

    With ``reference=0`` these are the joint rows (0|0..0), (0|1..1),
    (1|1..1) and the marginal rows (0|0..0), (0|e_s) for each s, and
    (0|1..1).  ``reference=1`` holds the outcome slot and the non-focal
    mediators at treatment instead.  Duplicates (p = 1) are removed.
    """
    if p < 1:
        raise ValueError("need at least one mediator")
    if reference not in (0, 1):
        raise ValueError("reference arm must be 0 or 1")
    r, f = reference, 1 - reference
    rows = [_joint(0, 0, p), _joint(r, f, p), _joint(1, 1, p)]
    rows.append(_marginal(r, (r,) * p))
    for s in range(p):
        arms = [r] * p
        arms[s] = f
        rows.append(_marginal(r, arms))
    rows.append(_marginal(r, (f,) * p))
    out, seen = [], set()
    for row in rows:
        if row.key not in seen:
            seen.add(row.key)
            out.append(row)
    return out


@dataclass(frozen=True, eq=False)
class EstimandTable:
    """Monte Carlo estimates of the mean potential outcome for each row."""

    rows: tuple
    estimates: np.ndarray
    per_individual: np.ndarray = field(repr=False)
    K: int
    mediator_names: tuple
    reference: int = 0

    def __post_init__(self):
        object.__setattr__(self, "_index", {r.key: i for i, r in enumerate(self.rows)})

    def __getitem__(self, row):
        key = row.key if isinstance(row, HypotheticalAssignment) else row
        return float(self.estimates[self._index[key]])

    def __contains__(self, row):
        key = row.key if isinstance(row, HypotheticalAssignment) else row
        return key in self._index

    def as_records(self):
        return [{"row": str(r), "mode": r.mode, "a0": r.a0, "arms": list(r.arms),
                 "estimate": float(v)} for r, v in zip(self.rows, self.estimates)]


@dataclass(frozen=True, eq=False)
class EffectDecomposition:
    """Interventional effects on the link scale."""

    link: str
    te: float
    de: float
    jie: float
    ie: dict
    ie_mutual: float
    ie_remainder: float
    reference: int = 0
    table: EstimandTable | None = field(default=None, repr=False)

    def names(self):
        return (["TE", "DE", "JIE"] + [f"IE[{m}]" for m in self.ie]
                + ["IE_mutual", "IE_remainder"])

    def vector(self):
        return np.array([self.te, self.de, self.jie, *self.ie.values(),
                         self.ie_mutual, self.ie_remainder])

    def as_dict(self):
        return dict(zip(self.names(), self.vector().tolist()))

    def identity_residuals(self):
        """(TE - DE - JIE, JIE - sum IE_s - IE_mutual - IE_remainder)."""
        return (self.te - self.de - self.jie,
                self.jie - sum(self.ie.values()) - self.ie_mutual - self.ie_remainder)

    def odds_ratios(self):
        if self.link != "logit":
            raise ValueError("odds ratios need the logit scale")
        return {k: float(np.exp(v)) for k, v in self.as_dict().items()}


def mediator_slots(names: Sequence[str]):
    return np.array([slot_id(nm) for nm in names], dtype=object)


def _draw_block(dataset, outcome_model, pool, rows, K, seed, replicate, slots, ind):
    """Per-individual K-draw averages for one block of individuals."""
    drw = np.arange(K)
    ii = ind[:, None]
    jslot = joint_slot(slots)
    cache = {}

    def donors(slot, arm):
        key = (slot, arm)
        if key not in cache:
            cache[key] = draw_donors(pool, seed, replicate, ii, drw[None, :], slot, arm).reshape(-1)
        return cache[key]

    m = ind.size * K
    ctx = {nm: np.repeat(dataset.covariates[ind, j], K)
           for j, nm in enumerate(dataset.covariate_names)}
    out = np.empty((len(rows), ind.size))
    med = dataset.mediators
    for r, row in enumerate(rows):
        ctx[dataset.treatment_name] = np.full(m, float(row.a0))
        for s, nm in enumerate(dataset.mediator_names):
            if row.mode == JOINT:
                donor = donors(jslot, row.arms[0])
            else:
                donor = donors(int(slots[s]), row.arms[s])
            ctx[nm] = med[donor, s]
        mu = predict(outcome_model, outcome_model.terms.design(ctx, n=m))
        if not np.all(np.isfinite(mu)):
            raise IntervMedError(f"non-finite outcome prediction in row {row}")
        out[r] = mu.reshape(ind.size, K).mean(axis=1)
    return out


def estimate_estimands(dataset: Dataset, outcome_model: FittedModel, pool: DonorPool,
                       rows: Sequence[HypotheticalAssignment], K: int = 100, seed: int = 0,
                       replicate: int = 0, reference: int = 0) -> EstimandTable:
    """Impute and average potential outcomes for every duplicated-data row.

    Draw keys depend on (individual, draw index, slot, arm) only, so rows
    that share an arm for a slot reuse the same donors.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if outcome_model.terms is None:
        raise ValueError("outcome model needs a term spec")
    rows = tuple(rows)
    slots = mediator_slots(dataset.mediator_names)
    per = np.empty((len(rows), dataset.n))
    step = max(1, BLOCK // K)
    for start in range(0, dataset.n, step):
        ind = np.arange(start, min(dataset.n, start + step))
        per[:, ind] = _draw_block(dataset, outcome_model, pool, rows, K, seed, replicate, slots, ind)
    return EstimandTable(rows=rows, estimates=per.mean(axis=1), per_individual=per, K=K,
                         mediator_names=dataset.mediator_names, reference=reference)


def compute_effects(table: EstimandTable, link) -> EffectDecomposition:
    """Assemble the effect decomposition from one estimand table."""
    link = get_link(link)
    names = table.mediator_names
    p = len(names)
    r = table.reference
    f = 1 - r
    sign = 1.0 if r == 0 else -1.0

    def g(row):
        if row not in table:
            raise KeyError(f"estimand table lacks row {row}")
        v = table[row]
        if not link.in_domain(v):
            raise LinkDomainError(f"estimand {v!r} of row {row} is outside the {link.name} link domain")
        return float(link.link(v))

    j00, j11 = g(_joint(0, 0, p)), g(_joint(1, 1, p))
    j_ref1, j_ref0 = g(_joint(r, 1, p)), g(_joint(r, 0, p))
    base = g(_marginal(r, (r,) * p))
    flipped = g(_marginal(r, (f,) * p))
    ie = {}
    for s, nm in enumerate(names):
        arms = [r] * p
        arms[s] = f
        ie[nm] = sign * (g(_marginal(r, arms)) - base)
    te = j11 - j00
    jie = j_ref1 - j_ref0
    de = j11 - j_ref1 if r == 0 else j_ref0 - j00
    mutual = (j_ref1 - g(_marginal(r, (1,) * p))) - (j_ref0 - g(_marginal(r, (0,) * p)))
    # canonical summation order keeps results bit-identical under column permutation
    remainder = sign * (flipped - base) - sum(ie[nm] for nm in sorted(ie))
    return EffectDecomposition(link=link.name, te=te, de=de, jie=jie, ie=ie, ie_mutual=mutual,
                               ie_remainder=remainder, reference=r, table=table)


def default_terms(dataset: Dataset) -> TermSpec:
    """Main effects of A, the mediators and the covariates.

    Mediators enter in sorted-name order so that permuting mediator columns
    leaves the fitted model bit-identical.
    """
    return TermSpec.main_effects((dataset.treatment_name,) + tuple(sorted(dataset.mediator_names))
                                 + dataset.covariate_names)


def outcome_family(dataset: Dataset):
    return "logistic" if dataset.outcome_type == BINARY else "linear"


def default_link(dataset: Dataset):
    return "logit" if dataset.outcome_type == BINARY else "identity"


@dataclass(frozen=True)
class MediationEstimator:
    """Full low-dimensional pipeline as a reusable callable.

    Calling it on a dataset fits the outcome model, builds the donor pool,
    estimates all duplicated-data rows and returns the decomposition.
    """

    terms: TermSpec | str | None = None
    mode: str = "randomized"
    link: str | None = None
    K: int = 100
    seed: int = 0
    reference: int = 0
    propensity_terms: TermSpec | None = None
    K_replicate: int | None = None  # draw count inside bootstrap/jackknife replicates

    def outcome_model(self, dataset: Dataset) -> FittedModel:
        terms = self.terms
        if terms is None:
            terms = default_terms(dataset)
        elif isinstance(terms, str):
            terms = TermSpec.parse(terms)
        return fit(terms, dataset.context(), dataset.outcome, outcome_family(dataset))

    def __call__(self, dataset: Dataset, replicate: int = 0, K: int | None = None):
        model = self.outcome_model(dataset)
        pool = make_pool(dataset, self.mode, self.propensity_terms)
        rows = build_duplicated_rows(dataset.p, self.reference)
        if K is None:
            K = self.K if replicate == 0 or self.K_replicate is None else self.K_replicate
        table = estimate_estimands(dataset, model, pool, rows, K, self.seed, replicate,
                                   self.reference)
        return compute_effects(table, self.link or default_link(dataset))


def estimate_effects(dataset: Dataset, terms=None, mode="randomized", link=None, K=100,
                     seed=0, replicate=0, reference=0) -> EffectDecomposition:
    """Point estimates of all interventional effects for a dataset."""
    est = MediationEstimator(terms=terms, mode=mode, link=link, K=K, seed=seed,
                             reference=reference)
    return est(dataset, replicate)


def permute_mediators_check(dataset: Dataset, permutation, **kwargs) -> EffectDecomposition:
    """Re-run the pipeline with mediator columns reordered.

    Draw keys follow mediator names, so each ``IE[name]`` must equal the
    unpermuted value and all aggregate effects must be unchanged.
    """
    return estimate_effects(dataset.permute_mediators(permutation), **kwargs)
