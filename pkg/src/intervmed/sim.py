"""Data-generating processes with known interventional effects.

A DGP is a linear structural model stored as JSON:

* covariates ``L`` (standard normal, or Bernoulli(1/2) when
  ``covariate_dist`` is ``"bernoulli"``) and latent factors ``U``;
* treatment, either randomized or logistic in ``L``;
* mediators in causal order, each linear in ``A``, ``L``, ``U`` and
  earlier mediators (optionally with treatment-by-parent terms), binary
  mediators being thresholded latent Gaussians;
* an outcome that is linear or logistic in ``A``, the mediators, pairwise
  mediator products and ``L``.  ``U`` never enters the outcome.

The oracle evaluates the effect definitions from the structural equations
directly: counterfactual mediator vectors are simulated under each arm and
paired with the covariates of other, independent individuals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import BINARY, CONTINUOUS, Dataset
from .effects import (EffectDecomposition, EstimandTable, build_duplicated_rows,
                      compute_effects, JOINT)
from .glm import TermSpec

BUILTIN = ("study1", "study1_observational", "study1_linear_nomutual", "study1_mutual",
           "study2", "null", "linear1", "figure1")


@dataclass(frozen=True)
class MediatorEq:
    name: str
    type: str = CONTINUOUS
    intercept: float = 0.0
    treatment: float = 0.0
    covariates: tuple = ()
    latent: tuple = ()
    parents: dict = field(default_factory=dict)
    treatment_x_parents: dict = field(default_factory=dict)
    noise_sd: float = 1.0


@dataclass(frozen=True)
class OutcomeEq:
    family: str = "logistic"
    intercept: float = 0.0
    treatment: float = 0.0
    mediators: dict = field(default_factory=dict)
    interactions: tuple = ()     # (name, name, coef) triples
    covariates: tuple = ()
    noise_sd: float = 1.0


@dataclass(frozen=True)
class DgpSpec:
    """Structural equations of a simulation design."""

    name: str
    n: int
    mediators: tuple
    outcome: OutcomeEq
    n_covariates: int = 0
    n_latent: int = 0
    covariate_dist: str = "normal"
    treatment: dict = field(default_factory=lambda: {"type": "randomized", "prob": 0.5})
    seed: int = 0

    def __post_init__(self):
        names = [m.name for m in self.mediators]
        if len(set(names)) != len(names):
            raise ValueError("duplicate mediator names")
        seen = set()
        for m in self.mediators:
            for par in list(m.parents) + list(m.treatment_x_parents):
                if par not in seen:
                    raise ValueError(f"mediator {m.name} lists {par} as a parent before it is "
                                     "defined; mediators must be in causal order")
            if len(m.covariates) not in (0, self.n_covariates):
                raise ValueError(f"mediator {m.name}: need {self.n_covariates} covariate coefs")
            if len(m.latent) not in (0, self.n_latent):
                raise ValueError(f"mediator {m.name}: need {self.n_latent} latent loadings")
            if m.type not in (CONTINUOUS, BINARY):
                raise ValueError(f"mediator {m.name}: unknown type {m.type!r}")
            seen.add(m.name)
        for nm in self.outcome.mediators:
            if nm not in seen:
                raise ValueError(f"outcome uses unknown mediator {nm}")
        for a, b, _ in self.outcome.interactions:
            if a not in seen or b not in seen or a == b:
                raise ValueError(f"bad interaction {a}:{b}")
        if self.outcome.family not in ("linear", "logistic"):
            raise ValueError(f"unknown outcome family {self.outcome.family!r}")
        if len(self.outcome.covariates) not in (0, self.n_covariates):
            raise ValueError("outcome covariate coefficients do not match n_covariates")
        if self.covariate_dist not in ("normal", "bernoulli"):
            raise ValueError(f"unknown covariate distribution {self.covariate_dist!r}")
        kind = self.treatment.get("type")
        if kind not in ("randomized", "logistic"):
            raise ValueError(f"unknown treatment assignment {kind!r}")
        coefs = [self.outcome.intercept, self.outcome.treatment, *self.outcome.mediators.values(),
                 *[c for *_, c in self.outcome.interactions], *self.outcome.covariates]
        for m in self.mediators:
            coefs += [m.intercept, m.treatment, *m.covariates, *m.latent, *m.parents.values(),
                      *m.treatment_x_parents.values(), m.noise_sd]
        if not np.all(np.isfinite(np.asarray(coefs, dtype=float))):
            raise ValueError("DGP coefficients must be finite")

    @property
    def p(self):
        return len(self.mediators)

    @property
    def mediator_names(self):
        return tuple(m.name for m in self.mediators)

    @property
    def covariate_names(self):
        return tuple(f"L{j + 1}" for j in range(self.n_covariates))

    @property
    def link(self):
        return "logit" if self.outcome.family == "logistic" else "identity"

    @property
    def observational(self):
        return self.treatment["type"] != "randomized"

    def outcome_mediators(self):
        """Mediators that enter the outcome equation."""
        used = {nm for nm, c in self.outcome.mediators.items() if c != 0}
        for a, b, c in self.outcome.interactions:
            if c != 0:
                used.update((a, b))
        return tuple(nm for nm in self.mediator_names if nm in used)

    def outcome_terms(self):
        """Correctly specified outcome terms: A, mediators, products, covariates."""
        terms = [("A",)] + [(nm,) for nm in self.mediator_names]
        terms += [(a, b) for a, b, c in self.outcome.interactions if c != 0]
        terms += [(nm,) for nm in self.covariate_names]
        return TermSpec(tuple(terms))

    def to_dict(self):
        d = asdict(self)
        d["outcome"]["interactions"] = [list(t) for t in self.outcome.interactions]
        for m in d["mediators"]:
            m["covariates"] = list(m["covariates"])
            m["latent"] = list(m["latent"])
        d["outcome"]["covariates"] = list(self.outcome.covariates)
        return d

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return DgpSpec.from_dict(d)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        meds = tuple(MediatorEq(**{**m, "covariates": tuple(m.get("covariates", ())),
                                   "latent": tuple(m.get("latent", ()))})
                     for m in d.pop("mediators"))
        out = dict(d.pop("outcome"))
        out["interactions"] = tuple(tuple(t) for t in out.get("interactions", ()))
        out["covariates"] = tuple(out.get("covariates", ()))
        return cls(mediators=meds, outcome=OutcomeEq(**out), **d)

    @classmethod
    def load(cls, name_or_path):
        """Load a built-in design by name or a JSON file by path."""
        if str(name_or_path) in BUILTIN:
            res = resources.files("intervmed").joinpath("dgps").joinpath(f"{name_or_path}.json")
            text = res.read_text()
        else:
            text = Path(name_or_path).read_text()
        return cls.from_dict(json.loads(text))


def _covariates(spec, rng, n):
    if spec.covariate_dist == "bernoulli":
        return (rng.random((n, spec.n_covariates)) < 0.5).astype(float)
    return rng.standard_normal((n, spec.n_covariates))


def _assign(spec, rng, L):
    n = L.shape[0]
    t = spec.treatment
    if t["type"] == "randomized":
        prob = np.full(n, float(t.get("prob", 0.5)))
    else:
        prob = expit(t.get("intercept", 0.0) + L @ np.asarray(t["covariates"], dtype=float))
    return (rng.random(n) < prob).astype(float)


def mediator_values(spec: DgpSpec, a, L, U, eps):
    """Mediators under treatment ``a`` (scalar or per-row) given exogenous inputs."""
    n = L.shape[0]
    a = np.broadcast_to(np.asarray(a, dtype=float), (n,))
    out = np.empty((n, spec.p))
    col = {}
    for j, m in enumerate(spec.mediators):
        v = m.intercept + m.treatment * a + m.noise_sd * eps[:, j]
        if m.covariates:
            v = v + L @ np.asarray(m.covariates, dtype=float)
        if m.latent:
            v = v + U @ np.asarray(m.latent, dtype=float)
        for par, c in m.parents.items():
            v = v + c * col[par]
        for par, c in m.treatment_x_parents.items():
            v = v + c * a * col[par]
        if m.type == BINARY:
            v = (v > 0).astype(float)
        out[:, j] = v
        col[m.name] = v
    return out


def outcome_mean(spec: DgpSpec, a, med: dict, L):
    """True E[Y | A=a, M, L]; ``med`` maps names to columns."""
    o = spec.outcome
    eta = o.intercept + o.treatment * np.asarray(a, dtype=float)
    for nm, c in o.mediators.items():
        eta = eta + c * med[nm]
    for x, y, c in o.interactions:
        eta = eta + c * med[x] * med[y]
    if o.covariates:
        eta = eta + L @ np.asarray(o.covariates, dtype=float)
    return expit(eta) if o.family == "logistic" else eta


def generate(spec: DgpSpec, n: int | None = None, seed: int | None = None) -> Dataset:
    """Draw one observed dataset; only (A, M, Y, L) are returned."""
    n = spec.n if n is None else int(n)
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    L = _covariates(spec, rng, n)
    U = rng.standard_normal((n, spec.n_latent))
    A = _assign(spec, rng, L)
    eps = rng.standard_normal((n, spec.p))
    M = mediator_values(spec, A, L, U, eps)
    mu = outcome_mean(spec, A, dict(zip(spec.mediator_names, M.T)), L)
    if spec.outcome.family == "logistic":
        Y = (rng.random(n) < mu).astype(float)
    else:
        Y = mu + spec.outcome.noise_sd * rng.standard_normal(n)
    return Dataset(treatment=A, mediators=M, outcome=Y, covariates=L,
                   mediator_names=spec.mediator_names, covariate_names=spec.covariate_names,
                   outcome_type=BINARY if spec.outcome.family == "logistic" else CONTINUOUS,
                   mediator_types=tuple(m.type for m in spec.mediators))


@dataclass(frozen=True, eq=False)
class OracleEffects:
    """True effects from large-sample simulation of the structural model."""

    effects: EffectDecomposition
    se: dict
    n_oracle: int
    seed: int

    def as_dict(self):
        return self.effects.as_dict()

    def to_json(self):
        return {"effects": self.effects.as_dict(), "mc_se": self.se, "n_oracle": self.n_oracle,
                "seed": self.seed, "link": self.effects.link}


def _oracle_block(spec, rows, names, rng, N):
    L = _covariates(spec, rng, N)
    U = rng.standard_normal((N, spec.n_latent))
    eps = rng.standard_normal((N, spec.p))
    arms = {a: mediator_values(spec, a, L, U, eps) for a in (0, 1)}
    idx = {nm: j for j, nm in enumerate(spec.mediator_names)}
    used = spec.outcome_mediators()
    # mediator values come from other individuals: shift 1 for joint draws,
    # shift 2 + k for the k-th mediator's marginal draw
    base = np.arange(N)
    joint_src = (base + 1) % N
    marg_src = {nm: (base + 2 + k) % N for k, nm in enumerate(names)}
    out = np.empty(len(rows))
    done = {}
    for r, row in enumerate(rows):
        # rows differing only in mediators absent from the outcome coincide
        key = (row.mode, row.a0, tuple(row.arms[idx[nm]] for nm in used))
        if key in done:
            out[r] = done[key]
            continue
        med = {}
        for nm in used:
            j = idx[nm]
            if row.mode == JOINT:
                med[nm] = arms[row.arms[0]][joint_src, j]
            else:
                med[nm] = arms[row.arms[j]][marg_src[nm], j]
        out[r] = done[key] = outcome_mean(spec, float(row.a0), med, L).mean()
    return out


def oracle(spec: DgpSpec, n_oracle: int = 10 ** 6, link=None, seed: int = 12345,
           block: int = 100_000, reference: int = 0) -> OracleEffects:
    """Monte Carlo evaluation of the true effect decomposition.

    Every duplicated-data row is evaluated on ``n_oracle`` simulated
    individuals in blocks with keyed seeds ``[seed, block]``.  Effects use
    the pooled row means; standard errors come from the spread of the
    block-level effects.
    """
    link = link or spec.link
    rows = build_duplicated_rows(spec.p, reference)
    names = spec.mediator_names
    nb = max(2, int(np.ceil(n_oracle / block)))
    size = int(np.ceil(n_oracle / nb))
    per = np.empty((nb, len(rows)))
    for b in range(nb):
        per[b] = _oracle_block(spec, rows, names, np.random.default_rng([seed, b]), size)

    def decomp(means):
        table = EstimandTable(rows=tuple(rows), estimates=means, per_individual=means[:, None],
                              K=1, mediator_names=names, reference=reference)
        return compute_effects(table, link)

    eff = decomp(per.mean(axis=0))
    blocks = np.array([decomp(per[b]).vector() for b in range(nb)])
    se = dict(zip(eff.names(), (blocks.std(axis=0, ddof=1) / np.sqrt(nb)).tolist()))
    return OracleEffects(effects=eff, se=se, n_oracle=nb * size, seed=seed)


@dataclass
class SimulationSummary:
    """Bias, spread and coverage of an estimator over simulation replicates."""

    names: tuple
    truth: np.ndarray
    estimates: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    @property
    def R(self):
        return self.estimates.shape[0]

    @property
    def bias(self):
        return self.estimates.mean(axis=0) - self.truth

    @property
    def empirical_se(self):
        return self.estimates.std(axis=0, ddof=1)

    @property
    def coverage(self):
        if self.lower is None:
            return None
        return np.mean((self.lower <= self.truth) & (self.truth <= self.upper), axis=0)

    @property
    def exclusion_rate(self):
        if self.lower is None:
            return None
        return np.mean((self.lower > 0) | (self.upper < 0), axis=0)

    def rows(self):
        out = []
        for j, nm in enumerate(self.names):
            rec = {"effect": nm, "truth": float(self.truth[j]), "mean": float(self.estimates[:, j].mean()),
                   "bias": float(self.bias[j]), "empirical_se": float(self.empirical_se[j])}
            if self.lower is not None:
                rec["coverage"] = float(self.coverage[j])
                rec["ci_excludes_zero"] = float(self.exclusion_rate[j])
            out.append(rec)
        return out


def replicate_study(spec: DgpSpec, estimator, R: int, truth: OracleEffects, n: int | None = None,
                    seed: int = 0, interval=None, B: int = 200, level: float = 0.95,
                    n_jobs: int = 1) -> SimulationSummary:
    """Run ``estimator`` on ``R`` generated datasets.

    Dataset ``r`` is generated with seed ``[seed, r]``.  When ``interval``
    is given each replicate also gets a bootstrap interval.
    """
    from .inference import bootstrap

    est, lo, hi = [], [], []
    for r in range(R):
        ds = generate(spec, n=n, seed=np.random.default_rng([seed, r]).integers(2 ** 63))
        if interval is None:
            est.append(np.asarray(estimator(ds).vector()))
        else:
            res = bootstrap(ds, estimator, B=B, seed=r, interval=interval, level=level,
                            n_jobs=n_jobs)
            est.append(res.estimate)
            lo.append(res.lower)
            hi.append(res.upper)
    names = tuple(truth.effects.names())
    return SimulationSummary(names=names, truth=truth.effects.vector(), estimates=np.array(est),
                             lower=np.array(lo) if lo else None, upper=np.array(hi) if hi else None)
