"""Per-mediator double selection for many mediators.

For each focal mediator ``M_s``:

1. outcome screen: elastic net of Y on (A, all mediators, L) with A and
   ``M_s`` unpenalized; the selected columns form ``M_s(Y)``;
2. mediator screen: elastic net of ``M_s`` on (A, other mediators, L) with
   A unpenalized; the selected columns form ``M_s(M)``;
3. unpenalized refit of Y on A, ``M_s`` and the union of both sets (plus
   every covariate when there are few of them);
4. the indirect effect ``IE_s`` from the two marginal rows (0|0..0) and
   (0|e_s), drawing marginally every mediator kept in the refit.

Penalty strength comes from cross-validation in both screens.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .counterfactual import make_pool, slot_id
from .data import BINARY, Dataset
from .effects import HypotheticalAssignment, MARGINAL, estimate_estimands
from .elasticnet import active_set, cv_select
from .errors import IntervMedError, RefitInfeasibleError, ValidationError
from .glm import TermSpec, fit, get_link
from .inference import bootstrap


@dataclass(frozen=True)
class HighDimConfig:
    """Settings of the per-mediator pipeline."""

    alpha: float = 0.5
    folds: int = 10
    rule: str = "min"
    outcome_loss: str | None = None     # default: misclassification (binary Y) or mse
    mediator_loss: str | None = None    # default: misclassification (binary M_s) or mse
    n_lambda: int = 100
    lambda_ratio: float = 1e-4
    screen_kkt_tol: float = 1e-5        # optimality tolerance of the screening fits
    force_covariates: bool = True       # keep every covariate in the refit ...
    max_forced_covariates: int = 10     # ... when there are at most this many
    mode: str = "randomized"
    link: str | None = None
    K: int = 100
    K_replicate: int | None = None
    B: int = 500
    interval: str = "bca"
    level: float = 0.95
    seed: int = 0
    reference: int = 0
    n_jobs: int = 1
    screen: bool = True

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.folds < 2:
            raise ValueError("need at least 2 CV folds")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.B and self.B < 2:
            raise ValueError("B must be 0 (no intervals) or at least 2")


@dataclass(frozen=True)
class SelectionSets:
    """Screening output for one focal mediator."""

    mediator: str
    outcome_selected: frozenset
    mediator_selected: frozenset
    a_to_m: float = float("nan")   # coefficient of A in the mediator screen
    m_to_y: float = float("nan")   # coefficient of M_s in the outcome screen

    def __post_init__(self):
        for nm in ("outcome_selected", "mediator_selected"):
            object.__setattr__(self, nm, frozenset(getattr(self, nm)))

    @property
    def union(self):
        return self.outcome_selected | self.mediator_selected


@dataclass(frozen=True)
class PerMediatorResult:
    mediator: str
    estimate: float
    ci_low: float
    ci_high: float
    sets: SelectionSets
    refit_size: int
    n_failed: int = 0
    bootstrap: object = field(default=None, repr=False)

    @property
    def excludes_zero(self):
        return self.ci_low > 0 or self.ci_high < 0

    def record(self):
        return {"mediator": self.mediator, "estimate": self.estimate, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "selected": len(self.sets.union),
                "refit_columns": self.refit_size}


class ResultList(list):
    """Per-mediator results plus a ``failures`` mapping (name -> message)."""

    def __init__(self, items=(), failures=None):
        super().__init__(items)
        self.failures = dict(failures or {})

    def by_name(self):
        return {r.mediator: r for r in self}


def _seed(*parts):
    """Deterministic 63-bit seed from integers (order-independent across mediators)."""
    ss = np.random.SeedSequence([int(p) & (2 ** 64 - 1) for p in parts])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def _screen_design(dataset, exclude=None):
    names = [dataset.treatment_name]
    cols = [dataset.treatment[:, None]]
    for j, nm in enumerate(dataset.mediator_names):
        if nm != exclude:
            names.append(nm)
            cols.append(dataset.mediators[:, j:j + 1])
    names += list(dataset.covariate_names)
    cols.append(dataset.covariates)
    return np.hstack(cols), names


def _forced_covariates(dataset, config):
    if config.force_covariates and dataset.q <= config.max_forced_covariates:
        return set(dataset.covariate_names)
    return set()


def screen(dataset: Dataset, s: str, config: HighDimConfig = HighDimConfig(),
           replicate: int = 0) -> SelectionSets:
    """Double-selection screens for focal mediator ``s``."""
    j = dataset.mediator_index(s)
    if np.ptp(dataset.mediators[:, j]) == 0:
        raise ValidationError(f"focal mediator {s} is constant")
    slot = slot_id(s)
    # outcome model: A and M_s unpenalized
    X, names = _screen_design(dataset)
    pf = np.array([0.0 if nm in (dataset.treatment_name, s) else 1.0 for nm in names])
    fam_y = "logistic" if dataset.outcome_type == BINARY else "linear"
    cy = cv_select(X, dataset.outcome, fam_y, config.alpha, pf, k=config.folds,
                   loss=config.outcome_loss, seed=_seed(config.seed, slot, replicate, 1),
                   rule=config.rule, column_names=names, n_lambda=config.n_lambda,
                   ratio=config.lambda_ratio, kkt_tol=config.screen_kkt_tol)
    # mediator model: A unpenalized
    Xm, names_m = _screen_design(dataset, exclude=s)
    pf_m = np.array([0.0 if nm == dataset.treatment_name else 1.0 for nm in names_m])
    fam_m = "logistic" if dataset.mediator_types[j] == BINARY else "linear"
    cm = cv_select(Xm, dataset.mediators[:, j], fam_m, config.alpha, pf_m, k=config.folds,
                   loss=config.mediator_loss, seed=_seed(config.seed, slot, replicate, 2),
                   rule=config.rule, column_names=names_m, n_lambda=config.n_lambda,
                   ratio=config.lambda_ratio, kkt_tol=config.screen_kkt_tol)
    drop = {dataset.treatment_name, s}
    sets = SelectionSets(mediator=s, outcome_selected=active_set(cy.model) - drop,
                         mediator_selected=active_set(cm.model) - drop,
                         a_to_m=cm.model.params[dataset.treatment_name],
                         m_to_y=cy.model.params[s])
    limit = dataset.n - dataset.q - 3
    if len(sets.union) >= limit:
        raise RefitInfeasibleError(f"refit infeasible for {s}: {len(sets.union)} selected "
                                   f"columns with n={dataset.n}; increase penalty")
    return sets


def refit_terms(dataset: Dataset, s: str, sets: SelectionSets, config: HighDimConfig):
    """Refit term spec: A, M_s, selected mediators and covariates (dataset order)."""
    keep = set(sets.union) | _forced_covariates(dataset, config)
    meds = [nm for nm in dataset.mediator_names if nm == s or nm in keep]
    covs = [nm for nm in dataset.covariate_names if nm in keep]
    return TermSpec.main_effects([dataset.treatment_name] + meds + covs), meds


def indirect_effect_for(dataset: Dataset, s: str, sets: SelectionSets, pool=None,
                        K: int | None = None, seed: int | None = None,
                        config: HighDimConfig = HighDimConfig(), replicate: int = 0):
    """Point estimate of ``IE_s`` after screening (no interval).

    Returns a PerMediatorResult whose CI bounds are NaN.
    """
    K = config.K if K is None else K
    seed = config.seed if seed is None else seed
    terms, meds = refit_terms(dataset, s, sets, config)
    if len(terms) >= dataset.n:
        raise RefitInfeasibleError(f"refit for {s} has {len(terms)} columns with n={dataset.n}")
    sub = dataset.subset_mediators(meds)
    family = "logistic" if dataset.outcome_type == BINARY else "linear"
    model = fit(terms, sub.context(), sub.outcome, family)
    if pool is None:
        pool = make_pool(sub, config.mode)
    r, f = config.reference, 1 - config.reference
    base = (r,) * len(meds)
    focal = tuple(f if nm == s else r for nm in meds)
    rows = [HypotheticalAssignment(r, base, MARGINAL), HypotheticalAssignment(r, focal, MARGINAL)]
    table = estimate_estimands(sub, model, pool, rows, K, seed, replicate, config.reference)
    link = get_link(config.link or ("logit" if family == "logistic" else "identity"))
    vals = []
    for row in rows:
        v = table[row]
        if not link.in_domain(v):
            raise IntervMedError(f"estimand {v!r} of row {row} is outside the {link.name} domain")
        vals.append(float(link.link(v)))
    est = (vals[1] - vals[0]) * (1.0 if r == 0 else -1.0)
    return PerMediatorResult(mediator=s, estimate=est, ci_low=math.nan, ci_high=math.nan,
                             sets=sets, refit_size=len(terms))


def _point(dataset, s, config, replicate, K=None, sets=None):
    if sets is None:
        sets = screen(dataset, s, config, replicate)
    return indirect_effect_for(dataset, s, sets, K=K, config=config, replicate=replicate)


def mediator_estimator(s: str, config: HighDimConfig, sets: SelectionSets | None = None):
    """Full per-mediator pipeline as a bootstrap estimator.

    Screening is re-run inside every replicate unless fixed ``sets`` are given.
    """
    def estimator(ds, replicate=0):
        K = None if replicate == 0 or config.K_replicate is None else config.K_replicate
        return _point(ds, s, config, replicate, K, sets).estimate
    return estimator


def analyze_mediator(dataset: Dataset, s: str, config: HighDimConfig = HighDimConfig(),
                     sets: SelectionSets | None = None) -> PerMediatorResult:
    """Screen, estimate and (when ``config.B > 0``) bootstrap one mediator."""
    point = _point(dataset, s, config, 0, sets=sets)
    if not config.B:
        return point
    fixed = None if config.screen else point.sets
    res = bootstrap(dataset, mediator_estimator(s, config, fixed), B=config.B, seed=config.seed,
                    interval=config.interval, level=config.level, estimate=point.estimate)
    return replace(point, ci_low=float(res.lower[0]), ci_high=float(res.upper[0]),
                   n_failed=res.n_failed, bootstrap=res)


def _sort_key(r):
    lo = r.ci_low if not math.isnan(r.ci_low) else r.estimate
    return (lo, r.mediator)


def run_all(dataset: Dataset, config: HighDimConfig = HighDimConfig(), mediators=None) -> ResultList:
    """Analyze every mediator; results sorted by increasing CI lower bound.

    A mediator whose analysis fails is listed in ``result.failures`` and
    skipped.  Each mediator's randomness is keyed by its name, so the output
    does not depend on processing order or worker count.
    """
    names = list(dataset.mediator_names if mediators is None else mediators)

    def job(s):
        try:
            return s, analyze_mediator(dataset, s, config), None
        except IntervMedError as exc:
            return s, None, f"{type(exc).__name__}: {exc}"

    if config.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as ex:
            out = list(ex.map(job, names))
    else:
        out = [job(s) for s in names]
    results = sorted((r for _, r, _ in out if r is not None), key=_sort_key)
    return ResultList(results, {s: msg for s, _, msg in out if msg is not None})
