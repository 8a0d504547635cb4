"""Datasets, model specifications, and parameter containers.

A Dataset holds one binary outcome per respondent together with the mode
flag (1 = face-to-face, 0 = telephone), an opaque interviewer label, and a
fixed-length vector of dummy-coded covariates.  Everything downstream (the
descriptive tables, both estimation engines, the simulation harness) works
on these immutable containers.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Optional

__all__ = [
    "Design",
    "Engine",
    "RespondentRecord",
    "Dataset",
    "ColumnSchema",
    "ModelSpec",
    "ParameterVector",
    "DataError",
    "load_dataset",
    "write_dataset",
    "infer_design",
    "dataset_report",
]

#: cell values treated as missing during ingestion
MISSING_TOKENS = frozenset({"", "NA"})


class DataError(ValueError):
    """Raised for malformed input files or invariant violations."""


class Design(str, enum.Enum):
    NESTED = "nested"
    CROSSED = "crossed"


class Engine(str, enum.Enum):
    LIKELIHOOD = "ml"
    MCMC = "mcmc"


@dataclass(frozen=True)
class RespondentRecord:
    """One interview: binary outcome, mode flag, interviewer, covariates."""

    outcome: int
    mode: int
    interviewer: str
    covariates: tuple = ()

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise DataError(f"outcome must be 0 or 1, got {self.outcome!r}")
        if self.mode not in (0, 1):
            raise DataError(f"mode must be 0 or 1, got {self.mode!r}")


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of respondent records with a declared design.

    Invariants enforced at construction: covariate vectors share one length,
    both modes are present, and under the nested design no interviewer
    appears in both modes.  ``n_dropped`` records how many rows were removed
    for missing values during ingestion; it does not participate in equality
    so that a round trip through CSV compares clean.
    """

    records: tuple
    covariate_names: tuple = ()
    design: Design = Design.NESTED
    n_dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.records:
            raise DataError("dataset has no records")
        s = len(self.covariate_names)
        for r in self.records:
            if len(r.covariates) != s:
                raise DataError(
                    f"record for interviewer {r.interviewer!r} has "
                    f"{len(r.covariates)} covariates, expected {s}"
                )
        modes = {r.mode for r in self.records}
        if modes != {0, 1}:
            missing = "FTF" if 1 not in modes else "TEL"
            raise DataError(f"no records in {missing} mode")
        if self.design is Design.NESTED:
            seen = {}
            for r in self.records:
                prev = seen.setdefault(r.interviewer, r.mode)
                if prev != r.mode:
                    raise DataError(
                        f"interviewer {r.interviewer!r} appears in both modes "
                        "under the nested design"
                    )

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def interviewers(self) -> tuple:
        """Interviewer labels in first-appearance order."""
        out, seen = [], set()
        for r in self.records:
            if r.interviewer not in seen:
                seen.add(r.interviewer)
                out.append(r.interviewer)
        return tuple(out)

    def mode_counts(self):
        n_f = sum(r.mode for r in self.records)
        return {1: n_f, 0: self.n - n_f}


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV columns to roles; covariates lists the raw column names."""

    outcome: str
    mode: str
    interviewer: str
    covariates: tuple = ()


@dataclass(frozen=True)
class ModelSpec:
    """Estimation request: which model, which engine, which settings."""

    design: Design = Design.NESTED
    engine: Engine = Engine.LIKELIHOOD
    include_covariates: bool = True
    fixed_rho: Optional[float] = None
    quadrature_nodes: int = 21
    # per-axis size of the product grid used for interviewers serving both modes
    quadrature_nodes_2d: int = 15
    gradient_tol: float = 1e-6
    max_iterations: int = 500

    def __post_init__(self):
        if self.fixed_rho is not None:
            if self.design is not Design.CROSSED:
                raise DataError("fixed_rho is only valid for the crossed design")
            if not -1.0 < self.fixed_rho < 1.0:
                raise DataError("fixed_rho must lie strictly inside (-1, 1)")
        if self.quadrature_nodes < 1 or self.quadrature_nodes_2d < 1:
            raise DataError("quadrature node counts must be positive")


@dataclass(frozen=True)
class ParameterVector:
    """Model parameters in the unconstrained parameterization.

    Variances are carried as lambda_m = log(sigma^2_m) and the effect
    correlation as zeta = atanh(rho) so that every real-valued vector maps
    to a valid parameter point.  ``zeta`` is None for nested models.
    """

    beta0: float
    beta1: float
    gamma: tuple = ()
    lambda_f: float = 0.0
    lambda_t: float = 0.0
    zeta: Optional[float] = None

    @property
    def var_f(self) -> float:
        return math.exp(self.lambda_f)

    @property
    def var_t(self) -> float:
        return math.exp(self.lambda_t)

    @property
    def rho(self) -> Optional[float]:
        return None if self.zeta is None else math.tanh(self.zeta)

    @property
    def alpha(self) -> float:
        """Half the log variance ratio, log sigma_f - log sigma_t."""
        return 0.5 * (self.lambda_f - self.lambda_t)

    def to_array(self):
        import numpy as np

        vals = [self.beta0, self.beta1, *self.gamma, self.lambda_f, self.lambda_t]
        if self.zeta is not None:
            vals.append(self.zeta)
        return np.asarray(vals, dtype=float)

    @classmethod
    def from_array(cls, theta, n_gamma: int, crossed: bool,
                   fixed_zeta: Optional[float] = None) -> "ParameterVector":
        theta = list(map(float, theta))
        expect = 4 + n_gamma + (1 if crossed and fixed_zeta is None else 0)
        if len(theta) != expect:
            raise DataError(f"expected {expect} parameters, got {len(theta)}")
        zeta = None
        if crossed:
            zeta = fixed_zeta if fixed_zeta is not None else theta[-1]
        lam_t = theta[3 + n_gamma]
        lam_f = theta[2 + n_gamma]
        return cls(
            beta0=theta[0],
            beta1=theta[1],
            gamma=tuple(theta[2:2 + n_gamma]),
            lambda_f=lam_f,
            lambda_t=lam_t,
            zeta=zeta,
        )


def _parse_binary(text, column, line_no):
    if text == "0":
        return 0
    if text == "1":
        return 1
    raise DataError(
        f"line {line_no}: column {column!r} must be 0 or 1, got {text!r}"
    )


def _is_number(text) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_dataset(path, schema: ColumnSchema,
                 design: Optional[Design] = None) -> Dataset:
    """Read a CSV extract, validate it, and dummy-code categorical covariates.

    Rows with any missing cell (empty or ``NA``) in a mapped column are
    dropped; the count of dropped rows is stored on the returned Dataset.
    A covariate column whose values do not all parse as numbers is treated
    as categorical and expanded to L-1 indicators against the first level
    in sorted order.  When ``design`` is omitted it is inferred from the
    interviewer-by-mode pattern.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    col_index = {name: i for i, name in enumerate(header)}
    needed = [schema.outcome, schema.mode, schema.interviewer, *schema.covariates]
    for name in needed:
        if name not in col_index:
            raise DataError(f"{path}: column {name!r} not found in header")

    kept, n_dropped = [], 0
    for line_no, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(
                f"{path}: line {line_no} has {len(row)} fields, header has {len(header)}"
            )
        cells = [row[col_index[name]].strip() for name in needed]
        if any(c in MISSING_TOKENS for c in cells):
            n_dropped += 1
            continue
        kept.append((line_no, cells))
    if not kept:
        raise DataError(f"{path}: no complete rows")

    # decide numeric vs categorical per covariate column from the kept rows
    n_cov = len(schema.covariates)
    categorical = [False] * n_cov
    for s in range(n_cov):
        if any(not _is_number(cells[3 + s]) for _, cells in kept):
            categorical[s] = True

    levels = {}
    for s, name in enumerate(schema.covariates):
        if categorical[s]:
            levels[s] = sorted({cells[3 + s] for _, cells in kept})

    out_names = []
    for s, name in enumerate(schema.covariates):
        if categorical[s]:
            # first sorted level is the reference and gets no column
            out_names.extend(f"{name}={lv}" for lv in levels[s][1:])
        else:
            out_names.append(name)

    records = []
    for line_no, cells in kept:
        y = _parse_binary(cells[0], schema.outcome, line_no)
        m = _parse_binary(cells[1], schema.mode, line_no)
        covs = []
        for s in range(n_cov):
            raw = cells[3 + s]
            if categorical[s]:
                covs.extend(1.0 if raw == lv else 0.0 for lv in levels[s][1:])
            else:
                val = float(raw)
                if not math.isfinite(val):
                    raise DataError(
                        f"{path}: line {line_no}: non-finite value {raw!r} "
                        f"in numeric column {schema.covariates[s]!r}")
                covs.append(val)
        records.append(RespondentRecord(y, m, cells[2], tuple(covs)))

    ds = Dataset(tuple(records), tuple(out_names),
                 design or _infer(records), n_dropped=n_dropped)
    return ds


def write_dataset(dataset: Dataset, path,
                  schema: Optional[ColumnSchema] = None) -> None:
    """Write a Dataset back to CSV; reloading yields an equal Dataset."""
    if schema is None:
        schema = ColumnSchema("outcome", "mode", "interviewer",
                              dataset.covariate_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.outcome, schema.mode, schema.interviewer,
                         *dataset.covariate_names])
        for r in dataset.records:
            writer.writerow([r.outcome, r.mode, r.interviewer,
                             *(repr(c) for c in r.covariates)])


def _infer(records) -> Design:
    seen = {}
    for r in records:
        prev = seen.setdefault(r.interviewer, r.mode)
        if prev != r.mode:
            return Design.CROSSED
    return Design.NESTED


def infer_design(dataset: Dataset) -> Design:
    """Nested iff every interviewer appears under exactly one mode."""
    return _infer(dataset.records)


def dataset_report(dataset: Dataset) -> str:
    counts = dataset.mode_counts()
    by_mode = {0: set(), 1: set()}
    for r in dataset.records:
        by_mode[r.mode].add(r.interviewer)
    lines = [
        f"records: {dataset.n}",
        f"records FTF: {counts[1]}",
        f"records TEL: {counts[0]}",
        f"interviewers: {len(dataset.interviewers)}",
        f"interviewers FTF: {len(by_mode[1])}",
        f"interviewers TEL: {len(by_mode[0])}",
        f"covariates: {len(dataset.covariate_names)}",
        f"design: {dataset.design.value}",
        f"rows dropped for missing values: {dataset.n_dropped}",
    ]
    return "\n".join(lines)
