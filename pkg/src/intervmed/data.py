"""Column-role schema, validation and immutable columnar storage.

A :class:`Dataset` holds a binary treatment, an ``n x p`` mediator block, an
outcome and an ``n x q`` covariate block.  Every array is flagged read-only
at construction, so one instance can be shared by any number of workers.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import SchemaError, ValidationError

BINARY = "binary"
CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class ColumnRole(str, Enum):
    TREATMENT = "treatment"
    MEDIATOR = "mediator"
    OUTCOME = "outcome"
    COVARIATE = "covariate"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: ColumnRole
    type: str | None = None


def _frozen(a, ndim):
    arr = np.array(a, dtype=np.float64, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(arr.shape[0], 0)
    arr.setflags(write=False)
    return arr


def _is_binary(values):
    return bool(np.all((values == 0) | (values == 1)))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated, read-only analysis table.

    Parameters
    ----------
    treatment : array_like, shape (n,)
        Binary treatment coded 0/1.
    mediators : array_like, shape (n, p)
        Mediator block; binary mediators are coded 0/1.
    outcome : array_like, shape (n,)
    covariates : array_like, shape (n, q)
        May have zero columns.
    mediator_names, covariate_names : sequence of str
    outcome_type : {"binary", "continuous"}
        Taken from the schema, never inferred from the values.
    mediator_types : sequence of str, optional
        Defaults to "binary" for 0/1-valued columns, else "continuous".
    covariate_groups : sequence of (source, columns, n_levels), optional
        Groups indicator columns that came from one categorical variable.
        ``n_levels`` is None for a numeric covariate.
    """

    treatment: np.ndarray
    mediators: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    mediator_names: tuple
    covariate_names: tuple = ()
    treatment_name: str = "A"
    outcome_name: str = "Y"
    outcome_type: str = CONTINUOUS
    mediator_types: tuple = None
    covariate_groups: tuple = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "treatment", _frozen(self.treatment, 1))
        set_(self, "outcome", _frozen(self.outcome, 1))
        set_(self, "mediators", _frozen(self.mediators, 2))
        n = self.treatment.shape[0]
        cov = self.covariates
        if cov is None or np.size(cov) == 0:
            cov = np.zeros((n, 0))
        set_(self, "covariates", _frozen(cov, 2))
        set_(self, "mediator_names", tuple(str(s) for s in self.mediator_names))
        set_(self, "covariate_names", tuple(str(s) for s in self.covariate_names))
        self._validate()
        if self.mediator_types is None:
            types = tuple(BINARY if _is_binary(self.mediators[:, j]) else CONTINUOUS
                          for j in range(self.p))
            set_(self, "mediator_types", types)
        else:
            set_(self, "mediator_types", tuple(self.mediator_types))
        if self.covariate_groups is None:
            groups = tuple(
                (name, (name,), 2 if _is_binary(self.covariates[:, j]) else None)
                for j, name in enumerate(self.covariate_names))
            set_(self, "covariate_groups", groups)
        else:
            set_(self, "covariate_groups", tuple(
                (g[0], tuple(g[1]), g[2]) for g in self.covariate_groups))

    def _validate(self):
        n = self.treatment.shape[0]
        if self.mediators.ndim != 2 or self.mediators.shape[0] != n:
            raise ValidationError(f"mediator block has shape {self.mediators.shape}, expected ({n}, p)")
        if self.outcome.shape != (n,):
            raise ValidationError(f"outcome has shape {self.outcome.shape}, expected ({n},)")
        if self.covariates.shape[0] != n:
            raise ValidationError(f"covariate block has {self.covariates.shape[0]} rows, expected {n}")
        if self.mediators.shape[1] < 1:
            raise ValidationError("at least one mediator column is required")
        if len(self.mediator_names) != self.mediators.shape[1]:
            raise ValidationError("mediator_names does not match the mediator block width")
        if len(self.covariate_names) != self.covariates.shape[1]:
            raise ValidationError("covariate_names does not match the covariate block width")
        names = (self.treatment_name, self.outcome_name) + self.mediator_names + self.covariate_names
        if len(set(names)) != len(names):
            raise ValidationError("column names must be unique")
        for label, block in (("treatment", self.treatment), ("outcome", self.outcome),
                             ("mediators", self.mediators), ("covariates", self.covariates)):
            bad = ~np.isfinite(block)
            if bad.any():
                rows = np.unique(np.nonzero(bad)[0]) + 1
                raise ValidationError(f"missing or non-finite {label} values at rows {rows.tolist()}")
        bad = np.nonzero((self.treatment != 0) & (self.treatment != 1))[0]
        if bad.size:
            raise ValidationError(f"treatment not in {{0,1}} at row {bad[0] + 1}")
        for a in (0, 1):
            if not np.any(self.treatment == a):
                raise ValidationError(f"treatment arm A={a} is empty")
        if self.outcome_type not in (BINARY, CONTINUOUS):
            raise ValidationError(f"unknown outcome type {self.outcome_type!r}")
        if self.outcome_type == BINARY:
            bad = np.nonzero((self.outcome != 0) & (self.outcome != 1))[0]
            if bad.size:
                raise ValidationError(f"binary outcome not in {{0,1}} at row {bad[0] + 1}")

    @property
    def n(self):
        return self.treatment.shape[0]

    @property
    def p(self):
        return self.mediators.shape[1]

    @property
    def q(self):
        return self.covariates.shape[1]

    def mediator_index(self, name):
        try:
            return self.mediator_names.index(name)
        except ValueError:
            raise KeyError(f"unknown mediator {name!r}") from None

    def column(self, name):
        """Return one column by name."""
        if name == self.treatment_name:
            return self.treatment
        if name == self.outcome_name:
            return self.outcome
        if name in self.mediator_names:
            return self.mediators[:, self.mediator_names.index(name)]
        if name in self.covariate_names:
            return self.covariates[:, self.covariate_names.index(name)]
        raise KeyError(f"unknown column {name!r}")

    def context(self):
        """Name -> column mapping usable as a design context."""
        ctx = {self.treatment_name: self.treatment, self.outcome_name: self.outcome}
        for j, name in enumerate(self.mediator_names):
            ctx[name] = self.mediators[:, j]
        for j, name in enumerate(self.covariate_names):
            ctx[name] = self.covariates[:, j]
        return ctx

    def arm(self, a):
        """Row indices with observed treatment ``a``."""
        return np.flatnonzero(self.treatment == a)

    def _replace(self, **changes):
        kw = dict(
            treatment=self.treatment, mediators=self.mediators, outcome=self.outcome,
            covariates=self.covariates, mediator_names=self.mediator_names,
            covariate_names=self.covariate_names, treatment_name=self.treatment_name,
            outcome_name=self.outcome_name, outcome_type=self.outcome_type,
            mediator_types=self.mediator_types, covariate_groups=self.covariate_groups)
        kw.update(changes)
        return Dataset(**kw)

    def take(self, rows):
        """New dataset made of the given rows (repeats allowed)."""
        rows = np.asarray(rows, dtype=np.intp)
        return self._replace(treatment=self.treatment[rows], mediators=self.mediators[rows],
                             outcome=self.outcome[rows], covariates=self.covariates[rows])

    def permute_mediators(self, permutation):
        """Reorder mediator columns; ``permutation[j]`` is the old index of new column j."""
        perm = np.asarray(permutation, dtype=np.intp)
        if sorted(perm.tolist()) != list(range(self.p)):
            raise ValueError("not a permutation of the mediator indices")
        return self._replace(mediators=self.mediators[:, perm],
                             mediator_names=tuple(self.mediator_names[j] for j in perm),
                             mediator_types=tuple(self.mediator_types[j] for j in perm))

    def subset_mediators(self, names):
        idx = [self.mediator_index(nm) for nm in names]
        return self._replace(mediators=self.mediators[:, idx], mediator_names=tuple(names),
                             mediator_types=tuple(self.mediator_types[j] for j in idx))

    def to_frame(self):
        cols = {self.treatment_name: self.treatment}
        for j, name in enumerate(self.mediator_names):
            cols[name] = self.mediators[:, j]
        cols[self.outcome_name] = self.outcome
        for j, name in enumerate(self.covariate_names):
            cols[name] = self.covariates[:, j]
        return pd.DataFrame(cols)

    def schema(self):
        """Column-role mapping matching :meth:`to_csv` output."""
        out = {self.treatment_name: ColumnRole.TREATMENT.value}
        for name, kind in zip(self.mediator_names, self.mediator_types):
            out[name] = {"role": ColumnRole.MEDIATOR.value, "type": kind}
        out[self.outcome_name] = {"role": ColumnRole.OUTCOME.value, "type": self.outcome_type}
        for name in self.covariate_names:
            out[name] = ColumnRole.COVARIATE.value
        return out

    def to_csv(self, path):
        """Write with shortest round-trip float formatting (reload is bit-identical)."""
        frame = self.to_frame()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(frame.columns)
            for row in frame.itertuples(index=False):
                writer.writerow([repr(float(v)) for v in row])

    def __repr__(self):
        return (f"Dataset(n={self.n}, p={self.p}, q={self.q}, "
                f"outcome={self.outcome_type}, treatment={self.treatment_name!r})")


def parse_schema(schema) -> list[ColumnSpec]:
    """Normalise a schema (mapping or JSON path) into column specs."""
    if isinstance(schema, (str, os.PathLike)):
        if not os.path.exists(schema):
            raise SchemaError(f"schema file not found: {schema}")
        with open(schema, encoding="utf-8") as fh:
            schema = json.load(fh)
    if not isinstance(schema, Mapping):
        raise SchemaError("schema must map column names to roles")
    specs = []
    for name, entry in schema.items():
        if isinstance(entry, str):
            role, kind = entry, None
        elif isinstance(entry, Mapping) and "role" in entry:
            role, kind = entry["role"], entry.get("type")
        else:
            raise SchemaError(f"bad schema entry for column {name!r}: {entry!r}")
        try:
            role = ColumnRole(str(role).lower())
        except ValueError:
            raise SchemaError(f"unknown role {role!r} for column {name!r}") from None
        specs.append(ColumnSpec(str(name), role, kind))
    counts = {r: sum(s.role is r for s in specs) for r in ColumnRole}
    if counts[ColumnRole.TREATMENT] != 1:
        raise SchemaError(f"schema needs exactly one treatment column, got {counts[ColumnRole.TREATMENT]}")
    if counts[ColumnRole.OUTCOME] != 1:
        raise SchemaError(f"schema needs exactly one outcome column, got {counts[ColumnRole.OUTCOME]}")
    if counts[ColumnRole.MEDIATOR] < 1:
        raise SchemaError("schema needs at least one mediator column")
    return specs


def _expand_categorical(name, values):
    levels = sorted(set(values))
    cols = [f"{name}[{lvl}]" for lvl in levels[1:]]
    block = np.column_stack([(values == lvl).astype(float) for lvl in levels[1:]]) \
        if len(levels) > 1 else np.zeros((len(values), 0))
    return cols, block, len(levels)


def load_csv(path, schema) -> Dataset:
    """Read a CSV file and validate it against a column-role schema.

    Categorical covariates (declared ``"type": "categorical"`` or non-numeric)
    become ``k - 1`` indicator columns; the reference level is the
    lexicographically first one.
    """
    specs = parse_schema(schema)
    if not os.path.exists(path):
        raise SchemaError(f"data file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [s.name for s in specs if s.name not in frame.columns]
    if missing:
        raise SchemaError(f"columns missing from {path}: {missing}")
    frame = frame[[s.name for s in specs]]
    blank = frame.apply(lambda c: c.str.strip().isin(["", "NA", "NaN", "nan"]))
    if blank.to_numpy().any():
        rows = (np.flatnonzero(blank.to_numpy().any(axis=1)) + 1).tolist()
        raise ValidationError(f"missing values at rows {rows}")

    def numeric(spec):
        try:
            return frame[spec.name].astype(float).to_numpy()
        except ValueError:
            raise ValidationError(f"column {spec.name!r} is not numeric") from None

    by_role = {r: [s for s in specs if s.role is r] for r in ColumnRole}
    a_spec = by_role[ColumnRole.TREATMENT][0]
    y_spec = by_role[ColumnRole.OUTCOME][0]
    treatment = numeric(a_spec)
    outcome = numeric(y_spec)
    med_specs = by_role[ColumnRole.MEDIATOR]
    mediators = np.column_stack([numeric(s) for s in med_specs])
    med_types = []
    for s, col in zip(med_specs, mediators.T):
        kind = s.type or (BINARY if _is_binary(col) else CONTINUOUS)
        if kind not in (BINARY, CONTINUOUS):
            raise SchemaError(f"mediator {s.name!r}: unknown type {kind!r}")
        med_types.append(kind)

    cov_names, cov_blocks, groups = [], [], []
    for s in by_role[ColumnRole.COVARIATE]:
        raw = frame[s.name].to_numpy()
        kind = s.type
        if kind is None:
            try:
                raw.astype(float)
                kind = "numeric"
            except ValueError:
                kind = CATEGORICAL
        if kind == CATEGORICAL:
            cols, block, k = _expand_categorical(s.name, raw)
            groups.append((s.name, tuple(cols), k))
        else:
            block = numeric(s).reshape(-1, 1)
            cols = [s.name]
            groups.append((s.name, (s.name,), 2 if _is_binary(block[:, 0]) else None))
        cov_names.extend(cols)
        cov_blocks.append(block)
    covariates = np.hstack(cov_blocks) if cov_blocks else np.zeros((len(frame), 0))

    return Dataset(
        treatment=treatment, mediators=mediators, outcome=outcome, covariates=covariates,
        mediator_names=tuple(s.name for s in med_specs), covariate_names=tuple(cov_names),
        treatment_name=a_spec.name, outcome_name=y_spec.name,
        outcome_type=y_spec.type or CONTINUOUS, mediator_types=tuple(med_types),
        covariate_groups=tuple(groups))


def dichotomize(values: Sequence[float], rule: str = "median") -> np.ndarray:
    """Split at the empirical median: 1 where strictly above it, else 0."""
    if rule != "median":
        raise ValueError(f"unsupported rule {rule!r}")
    x = np.asarray(values, dtype=float)
    if x.size == 0 or np.all(x == x[0]):
        raise ValidationError("cannot dichotomize a constant vector")
    out = (x > np.median(x)).astype(np.int64)
    if out.min() == out.max():
        raise ValidationError("median split leaves one level empty")
    return out
