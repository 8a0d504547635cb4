"""Seeded regeneration of the two simulation studies.

Nested setup: respondents split between modes, each interviewer serving
one mode, effects drawn per interviewer from the mode's variance.  Crossed
setup: interviewers may serve one or both modes and carry a correlated
effect pair.  A scenario bundles truth, population shape, engine, and a
base seed; running it repeats generate-then-fit K times and reduces the
per-replication estimates to bias, coverage rate, SE ratio, and power.

Every replication draws from three independent substreams (assignment,
effects, outcomes) keyed by (base seed, replication, role), so results are
identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from .data import DataError, Dataset, Design, Engine, ModelSpec, RespondentRecord
from .mcmc import McmcBudget, fit_mcmc, posterior_summary
from .ml import alpha_from_variances, fit_ml

__all__ = [
    "Truth",
    "Population",
    "ScenarioConfig",
    "MetricRow",
    "SimulationMetrics",
    "SimulationError",
    "generate_nested",
    "generate_crossed",
    "run_scenario",
    "builtin_scenarios",
]

# substream roles per replication
_ROLE_ASSIGN = 0
_ROLE_EFFECTS = 1
_ROLE_OUTCOMES = 2
_ROLE_FIT = 3

_WORKLOADS = ("even", "random")


class SimulationError(RuntimeError):
    """Raised for infeasible configs or an excessive failure rate."""


@dataclass(frozen=True)
class Truth:
    """Generating parameters; alpha is always derived, never stored."""

    beta1: float
    var_f: float
    var_t: float
    beta0: float = 0.0
    rho: Optional[float] = None

    @property
    def alpha(self) -> float:
        return alpha_from_variances(self.var_f, self.var_t)


@dataclass(frozen=True)
class Population:
    """Respondent count, interviewer counts, and the workload scheme.

    For the nested design ``interviewers_ftf``/``interviewers_tel`` count
    the single-mode interviewers and ``interviewers_both`` must be 0.  The
    crossed design adds interviewers serving both modes.  ``n_tel`` pins
    the telephone respondent total; when omitted, respondents split
    proportionally to the number of active interviewer-mode cells.
    """

    n: int
    interviewers_ftf: int
    interviewers_tel: int
    interviewers_both: int = 0
    n_tel: Optional[int] = None
    workload: str = "even"

    def __post_init__(self):
        if self.workload not in _WORKLOADS:
            raise DataError(
                f"unknown workload scheme {self.workload!r}; "
                f"choose from {_WORKLOADS}")
        if self.n < 2:
            raise DataError("population needs at least 2 respondents")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    design: Design
    truth: Truth
    population: Population
    replications: int = 200
    engine: Engine = Engine.LIKELIHOOD
    base_seed: int = 1
    mcmc_budget: Optional[McmcBudget] = None
    quadrature_nodes: int = 21
    quadrature_nodes_2d: int = 15


@dataclass(frozen=True)
class MetricRow:
    truth: float
    bias: float
    coverage: float
    se_ratio: float
    power: Optional[float]


@dataclass(frozen=True)
class SimulationMetrics:
    scenario: str
    engine: Engine
    rows: dict
    n_replications: int
    n_failed: int
    failures: tuple


def _rng(seed_parts, role):
    return np.random.default_rng(
        np.random.SeedSequence([*seed_parts, role]))


def _seed_parts(seed):
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(v) for v in seed)


def _split(total, cells, scheme, rng):
    if cells < 1:
        raise SimulationError("no interviewer cells for one of the modes")
    if total < 1:
        raise SimulationError("a mode has no respondents under this workload")
    if scheme == "even":
        base = total // cells
        rem = total - base * cells
        return np.array([base + (1 if i < rem else 0) for i in range(cells)])
    draws = rng.integers(0, cells, size=total)
    return np.bincount(draws, minlength=cells)


def generate_nested(truth: Truth, population: Population, seed) -> Dataset:
    """Simulate a nested-design dataset, deterministic in the seed."""
    if population.interviewers_both:
        raise DataError("nested population cannot have both-mode interviewers")
    jf, jt = population.interviewers_ftf, population.interviewers_tel
    if jf < 1 or jt < 1:
        raise SimulationError("both modes need at least one interviewer")
    parts = _seed_parts(seed)
    rng_a = _rng(parts, _ROLE_ASSIGN)
    rng_e = _rng(parts, _ROLE_EFFECTS)
    rng_o = _rng(parts, _ROLE_OUTCOMES)

    n = population.n
    n_t = population.n_tel
    if n_t is None:
        n_t = round(n * jt / (jf + jt))
    n_f = n - n_t
    counts_f = _split(n_f, jf, population.workload, rng_a)
    counts_t = _split(n_t, jt, population.workload, rng_a)

    b_f = rng_e.normal(0.0, math.sqrt(truth.var_f), size=jf)
    b_t = rng_e.normal(0.0, math.sqrt(truth.var_t), size=jt)

    mode = np.concatenate([np.ones(n_f, np.int8), np.zeros(n_t, np.int8)])
    b_rec = np.concatenate([np.repeat(b_f, counts_f), np.repeat(b_t, counts_t)])
    prob = ndtr(truth.beta0 + truth.beta1 * mode + b_rec)
    y = (rng_o.random(n) < prob).astype(int)

    labels = np.concatenate([
        np.repeat([f"F{i + 1:03d}" for i in range(jf)], counts_f),
        np.repeat([f"T{i + 1:03d}" for i in range(jt)], counts_t),
    ])
    records = tuple(
        RespondentRecord(int(y[i]), int(mode[i]), str(labels[i]))
        for i in range(n))
    return Dataset(records, (), Design.NESTED)


def generate_crossed(truth: Truth, population: Population, seed) -> Dataset:
    """Simulate a crossed-design dataset with correlated effect pairs."""
    if truth.rho is None:
        raise DataError("crossed generation requires rho")
    if not -1.0 < truth.rho < 1.0:
        raise DataError("rho must lie strictly inside (-1, 1)")
    jf, jt, jb = (population.interviewers_ftf, population.interviewers_tel,
                  population.interviewers_both)
    if jf + jb < 1 or jt + jb < 1:
        raise SimulationError("both modes need at least one interviewer cell")
    parts = _seed_parts(seed)
    rng_a = _rng(parts, _ROLE_ASSIGN)
    rng_e = _rng(parts, _ROLE_EFFECTS)
    rng_o = _rng(parts, _ROLE_OUTCOMES)

    n = population.n
    cells_f = jf + jb
    cells_t = jt + jb
    n_t = population.n_tel
    if n_t is None:
        n_t = round(n * cells_t / (cells_f + cells_t))
    n_f = n - n_t
    counts_f = _split(n_f, cells_f, population.workload, rng_a)
    counts_t = _split(n_t, cells_t, population.workload, rng_a)

    # one effect pair per interviewer, order: FTF-only, TEL-only, both
    j_all = jf + jt + jb
    z = rng_e.standard_normal((2, j_all))
    sd_f, sd_t = math.sqrt(truth.var_f), math.sqrt(truth.var_t)
    c = math.sqrt(1.0 - truth.rho * truth.rho)
    b_f = sd_f * z[0]
    b_t = sd_t * (truth.rho * z[0] + c * z[1])

    labels = ([f"F{i + 1:03d}" for i in range(jf)]
              + [f"T{i + 1:03d}" for i in range(jt)]
              + [f"B{i + 1:03d}" for i in range(jb)])
    # FTF cells: the FTF-only interviewers then the both-mode ones, and
    # likewise for TEL; indices address the shared effect arrays
    owners_f = list(range(jf)) + list(range(jf + jt, j_all))
    owners_t = list(range(jf, jf + jt)) + list(range(jf + jt, j_all))

    owner_rec = np.concatenate([
        np.repeat(owners_f, counts_f),
        np.repeat(owners_t, counts_t),
    ]).astype(np.intp)
    mode = np.concatenate([np.ones(n_f, np.int8), np.zeros(n_t, np.int8)])
    eff = np.where(mode == 1, b_f[owner_rec], b_t[owner_rec])
    prob = ndtr(truth.beta0 + truth.beta1 * mode + eff)
    y = (rng_o.random(n) < prob).astype(int)

    records = tuple(
        RespondentRecord(int(y[i]), int(mode[i]), labels[owner_rec[i]])
        for i in range(n))
    return Dataset(records, (), Design.CROSSED)


def _generate(config: ScenarioConfig, k: int) -> Dataset:
    seed = (config.base_seed, k)
    if config.design is Design.NESTED:
        return generate_nested(config.truth, config.population, seed)
    return generate_crossed(config.truth, config.population, seed)


def _targets(config: ScenarioConfig):
    names = ["beta1", "sigma2_f", "sigma2_t", "alpha"]
    if config.design is Design.CROSSED:
        names.append("rho")
    return names


_POWER_TARGETS = frozenset({"beta1", "alpha", "rho"})


def _fit_replication(config: ScenarioConfig, dataset: Dataset, k: int) -> dict:
    spec = ModelSpec(design=config.design, engine=config.engine,
                     include_covariates=False,
                     quadrature_nodes=config.quadrature_nodes,
                     quadrature_nodes_2d=config.quadrature_nodes_2d)
    wanted = _targets(config)
    if config.engine is Engine.LIKELIHOOD:
        fit = fit_ml(dataset, spec)
        if not fit.converged:
            raise SimulationError(f"replication {k}: {fit.message or 'no convergence'}")
        if fit.vcov is None:
            raise SimulationError(f"replication {k}: SEs unavailable")
        rows = {row.name: (row.point, row.se, row.lo, row.hi)
                for row in fit.natural_scale}
        return {name: rows[name] for name in wanted}
    budget = config.mcmc_budget or McmcBudget()
    draws = fit_mcmc(dataset, spec, budget=budget,
                     seed=(config.base_seed, k, _ROLE_FIT))
    summ = posterior_summary(draws)
    return {name: (summ.rows[name].mean, summ.rows[name].sd,
                   summ.rows[name].hpd_lo, summ.rows[name].hpd_hi)
            for name in wanted}


def _replicate(config: ScenarioConfig, k: int,
               fitter: Optional[Callable] = None):
    try:
        dataset = _generate(config, k)
        if fitter is None:
            return k, _fit_replication(config, dataset, k), None
        return k, fitter(dataset, config, k), None
    except Exception as exc:  # noqa: BLE001 - failures are data, not crashes
        return k, None, f"replication {k}: {exc}"


def run_scenario(config: ScenarioConfig, jobs: int = 1,
                 fitter: Optional[Callable] = None) -> SimulationMetrics:
    """Run all replications and reduce them to the four metrics.

    ``fitter`` overrides the engine dispatch; it receives
    (dataset, config, k) and must return
    {target: (point, se, lo, hi)}.  Replications that raise are excluded
    from the metrics and reported; more than 20% of them aborts the
    scenario.  Results do not depend on ``jobs``.
    """
    K = config.replications
    if K < 2:
        raise SimulationError("need at least 2 replications")
    ks = list(range(1, K + 1))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replicate, [config] * K, ks,
                                    [fitter] * K,
                                    chunksize=max(1, K // (4 * jobs))))
    else:
        results = [_replicate(config, k, fitter) for k in ks]
    results.sort(key=lambda item: item[0])

    failures = tuple(err for _, _, err in results if err is not None)
    if len(failures) > 0.2 * K:
        raise SimulationError(
            f"{len(failures)} of {K} replications failed; first: {failures[0]}")

    wanted = _targets(config)
    truth_map = {
        "beta1": config.truth.beta1,
        "sigma2_f": config.truth.var_f,
        "sigma2_t": config.truth.var_t,
        "alpha": config.truth.alpha,
    }
    if config.design is Design.CROSSED:
        truth_map["rho"] = config.truth.rho

    ok = [rows for _, rows, err in results if err is None]
    metrics = {}
    for name in wanted:
        truth = truth_map[name]
        pts = np.array([rows[name][0] for rows in ok])
        ses = np.array([rows[name][1] for rows in ok])
        los = np.array([rows[name][2] for rows in ok])
        his = np.array([rows[name][3] for rows in ok])
        bias = float(pts.mean() - truth)
        coverage = float(np.mean((los <= truth) & (truth <= his)))
        spread = float(pts.std(ddof=1))
        se_ratio = float(ses.mean() / spread) if spread > 0 else float("inf")
        power = None
        if name in _POWER_TARGETS:
            power = float(np.mean(~((los <= 0.0) & (0.0 <= his))))
        metrics[name] = MetricRow(truth=truth, bias=bias, coverage=coverage,
                                  se_ratio=se_ratio, power=power)
    return SimulationMetrics(
        scenario=config.name, engine=config.engine, rows=metrics,
        n_replications=K, n_failed=len(failures), failures=failures)


# variance pairs behind the eight built-in scenarios
_ABS_VARS = ((0.14, 0.14), (0.20, 0.14), (0.24, 0.14), (0.50, 0.14))
_HRS_VARS = ((0.03, 0.03), (0.05, 0.03), (0.06, 0.03), (0.09, 0.03))

_ABS_POP = Population(n=2521, interviewers_ftf=31, interviewers_tel=13,
                      n_tel=1212)
_HRS_POP_DESK = Population(n=5000, interviewers_ftf=9, interviewers_tel=20,
                           interviewers_both=63)
_HRS_POP_FULL = Population(n=20868, interviewers_ftf=37, interviewers_tel=82,
                           interviewers_both=263)


def builtin_scenarios(hrs_scale: str = "desk"):
    """The eight named scenario configs (mode effect 0.5 throughout).

    ``hrs_scale`` chooses the crossed-population size: "desk" (n = 5,000,
    92 interviewers, proportional mix) or "full" (n = 20,868, 382
    interviewers).
    """
    if hrs_scale not in ("desk", "full"):
        raise DataError("hrs_scale must be 'desk' or 'full'")
    hrs_pop = _HRS_POP_DESK if hrs_scale == "desk" else _HRS_POP_FULL
    out = []
    for i, (vf, vt) in enumerate(_ABS_VARS, start=1):
        out.append(ScenarioConfig(
            name=f"abs-{i}", design=Design.NESTED,
            truth=Truth(beta1=0.5, var_f=vf, var_t=vt),
            population=_ABS_POP))
    for i, (vf, vt) in enumerate(_HRS_VARS, start=1):
        out.append(ScenarioConfig(
            name=f"hrs-{i}", design=Design.CROSSED,
            truth=Truth(beta1=0.5, var_f=vf, var_t=vt, rho=0.5),
            population=hrs_pop))
    return out
