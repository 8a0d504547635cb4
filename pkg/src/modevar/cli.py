"""Command-line surface: describe, fit, simulate.

Result tables go to stdout; the run manifest (resolved configuration,
seeds, versions, wall time, warnings) goes to stderr.  Given identical
inputs, seed, and flags, stdout is byte-identical across reruns and across
worker counts.
"""

from __future__ import annotations

import argparse
import os
import secrets
import sys
from dataclasses import replace

from . import __version__
from .data import (
    ColumnSchema,
    DataError,
    Design,
    Engine,
    ModelSpec,
    dataset_report,
    load_dataset,
)
from .descriptives import mode_summary
from .mcmc import McmcBudget, fit_mcmc, hpd_interval, posterior_summary
from .ml import fit_ml
from .report import Stopwatch, emit_manifest, render_table
from .simulate import (
    Population,
    ScenarioConfig,
    SimulationError,
    Truth,
    builtin_scenarios,
    run_scenario,
)

# exact accepted key set for scenario config files
_CONFIG_KEYS = {
    "design", "beta0", "beta1", "var_f", "var_t", "rho", "n",
    "interviewers_ftf", "interviewers_tel", "interviewers_both",
    "workload", "K", "engine", "seed",
    "iterations", "burn_in", "thin", "quad_nodes", "quad_nodes_2d",
}
# rows where "interval excludes zero" is a meaningful test
_NO_SIG_ROWS = {"sigma2_f", "sigma2_t", "icc_f", "icc_t"}


def _versions() -> str:
    import numpy
    import scipy

    py = ".".join(map(str, sys.version_info[:3]))
    return (f"modevar {__version__}, python {py}, "
            f"numpy {numpy.__version__}, scipy {scipy.__version__}")


def _resolve_seed(args):
    if args.seed is not None:
        return int(args.seed), False
    return secrets.randbits(31), True


def _add_shared(p):
    p.add_argument("--seed", type=int, default=None,
                   help="base seed; omitted -> a random seed, recorded in the manifest")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel workers (default: available cores)")
    p.add_argument("--tsv", action="store_true", help="emit TSV instead of aligned text")
    p.add_argument("--precise", action="store_true",
                   help="full-precision numbers instead of 3 decimals")
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero on non-convergence warnings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modevar",
        description=("Interviewer-variance mode effects: descriptive tables, "
                     "probit mixed-model fits, and simulation studies."))
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("describe", help="interviewer-level descriptive table")
    d.add_argument("--input", required=True)
    d.add_argument("--variables", required=True,
                   help="comma-separated binary outcome columns")
    d.add_argument("--mode", default="mode")
    d.add_argument("--interviewer", default="interviewer")
    _add_shared(d)

    f = sub.add_parser("fit", help="fit one model to a CSV extract")
    f.add_argument("--input", required=True)
    f.add_argument("--outcome", default="outcome")
    f.add_argument("--mode", default="mode")
    f.add_argument("--interviewer", default="interviewer")
    f.add_argument("--covariates", default="",
                   help="comma-separated covariate columns (optional)")
    f.add_argument("--design", choices=["auto", "nested", "crossed"],
                   default="auto")
    f.add_argument("--engine", choices=["ml", "mcmc"], default="ml")
    f.add_argument("--nodes", type=int, default=21,
                   help="quadrature nodes for single-mode interviewers")
    f.add_argument("--nodes-2d", type=int, default=15,
                   help="per-axis nodes for both-mode interviewers")
    f.add_argument("--fixed-rho", type=float, default=None,
                   help="hold the effect correlation at this value (crossed only)")
    f.add_argument("--iterations", type=int, default=20000)
    f.add_argument("--burn-in", type=int, default=5000)
    f.add_argument("--thin", type=int, default=10)
    f.add_argument("--dump-draws", default=None,
                   help="write retained MCMC draws to this CSV path")
    _add_shared(f)

    s = sub.add_parser("simulate", help="run a simulation scenario")
    s.add_argument("--scenario", default=None,
                   help="built-in scenario name (see --list-scenarios)")
    s.add_argument("--config", default=None,
                   help="key=value scenario file ('#' comments)")
    s.add_argument("--list-scenarios", action="store_true")
    s.add_argument("--hrs-scale", choices=["desk", "full"], default="desk")
    s.add_argument("--engine", choices=["ml", "mcmc"], default=None,
                   help="override the scenario's engine")
    s.add_argument("--k", type=int, default=None, help="override replications")
    s.add_argument("--iterations", type=int, default=None)
    s.add_argument("--burn-in", type=int, default=None)
    s.add_argument("--thin", type=int, default=None)
    _add_shared(s)
    return parser


def _cmd_describe(args) -> int:
    watch = Stopwatch()
    variables = [v for v in args.variables.split(",") if v.strip()]
    if not variables:
        print("error: --variables lists no columns", file=sys.stderr)
        return 2
    headers = ["variable", "mean_ftf", "mean_tel", "between_sd_ftf",
               "between_sd_tel", "avg_within_sd_ftf", "avg_within_sd_tel"]
    rows = []
    dropped = []
    for var in variables:
        schema = ColumnSchema(outcome=var, mode=args.mode,
                              interviewer=args.interviewer)
        ds = load_dataset(args.input, schema)
        ftf, tel = mode_summary(ds)
        rows.append([var, ftf.mean, tel.mean, ftf.between_sd, tel.between_sd,
                     ftf.avg_within_sd, tel.avg_within_sd])
        dropped.append(f"{var}:{ds.n_dropped}")
    sys.stdout.write(render_table(headers, rows, args.tsv, args.precise))
    emit_manifest([
        ("command", "describe"),
        ("input", args.input),
        ("variables", ",".join(variables)),
        ("rows dropped (per variable)", " ".join(dropped)),
        ("versions", _versions()),
        ("wall seconds", f"{watch.seconds():.3f}"),
    ])
    return 0


def _sig_mark(name, lo, hi):
    if name in _NO_SIG_ROWS or lo is None or hi is None:
        return ""
    return "*" if (lo > 0.0 or hi < 0.0) else ""


def _cmd_fit(args) -> int:
    watch = Stopwatch()
    covs = tuple(c for c in args.covariates.split(",") if c.strip())
    schema = ColumnSchema(outcome=args.outcome, mode=args.mode,
                          interviewer=args.interviewer, covariates=covs)
    design = None if args.design == "auto" else Design(args.design)
    ds = load_dataset(args.input, schema, design=design)
    spec = ModelSpec(design=ds.design, engine=Engine(args.engine),
                     include_covariates=bool(covs),
                     fixed_rho=args.fixed_rho,
                     quadrature_nodes=args.nodes,
                     quadrature_nodes_2d=args.nodes_2d)
    seed, seed_auto = _resolve_seed(args)
    headers = ["quantity", "estimate", "se", "ci_low", "ci_high", "sig"]
    warnings = []
    manifest = [
        ("command", "fit"),
        ("engine", spec.engine.value),
        ("design", spec.design.value),
        ("input", args.input),
        ("dataset", dataset_report(ds).replace("\n", "; ")),
        ("fixed_rho", "none" if spec.fixed_rho is None else spec.fixed_rho),
    ]

    if spec.engine is Engine.LIKELIHOOD:
        fit = fit_ml(ds, spec)
        rows = []
        for row in fit.natural_scale:
            mark = "fixed" if row.fixed else _sig_mark(row.name, row.lo, row.hi)
            rows.append([row.name, row.point, row.se, row.lo, row.hi, mark])
        sys.stdout.write(render_table(headers, rows, args.tsv, args.precise))
        sys.stdout.write(f"loglik: {fit.loglik:.6f}\n"
                         if not args.precise else f"loglik: {fit.loglik!r}\n")
        sys.stdout.write(f"converged: {'yes' if fit.converged else 'NO'}\n")
        if fit.message:
            warnings.append(fit.message)
        manifest += [
            ("quadrature nodes", f"{spec.quadrature_nodes}/{spec.quadrature_nodes_2d}"),
            ("optimizer iterations", fit.n_iter),
            ("seed", "unused (deterministic engine)"),
        ]
        failed = not fit.converged
    else:
        budget = McmcBudget(iterations=args.iterations, burn_in=args.burn_in,
                            thin=args.thin)
        draws = fit_mcmc(ds, spec, budget=budget, seed=seed)
        summ = posterior_summary(draws)
        order = [n for n in draws.names if n not in ("rho", "alpha")]
        order += ["alpha"]
        if "rho" in draws.names:
            order += ["rho"]
        rows = []
        for name in order:
            r = summ.rows[name]
            if name == "rho" and spec.fixed_rho is not None:
                rows.append([name, r.mean, None, None, None, "fixed"])
                continue
            rows.append([name, r.mean, r.sd, r.hpd_lo, r.hpd_hi,
                         _sig_mark(name, r.hpd_lo, r.hpd_hi)])
        for icc_name, var_name in (("icc_f", "sigma2_f"), ("icc_t", "sigma2_t")):
            col = draws.column(var_name)
            tr = col / (1.0 + col)
            lo, hi = hpd_interval(tr) if tr.size >= 20 else (tr.min(), tr.max())
            sd = float(tr.std(ddof=1)) if tr.size > 1 else 0.0
            rows.append([icc_name, float(tr.mean()), sd, lo, hi, ""])
        sys.stdout.write(render_table(headers, rows, args.tsv, args.precise))
        diag_rows = [[name, d.ess, d.autocorr[0] if d.autocorr else None,
                      "yes" if d.zero_variance else ""]
                     for name, d in draws.diagnostics.items()]
        sys.stdout.write("\n")
        sys.stdout.write(render_table(
            ["parameter", "ess", "lag1_autocorr", "zero_variance"],
            diag_rows, args.tsv, args.precise))
        warnings.extend(draws.warnings)
        if args.dump_draws:
            with open(args.dump_draws, "w", encoding="utf-8") as fh:
                fh.write(",".join(draws.names) + "\n")
                for row in draws.draws:
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
        manifest += [
            ("budget", f"iterations={budget.iterations} "
                       f"burn_in={budget.burn_in} thin={budget.thin}"),
            ("retained draws", draws.draws.shape[0]),
            ("seed", f"{seed}{' (auto)' if seed_auto else ''}"),
        ]
        failed = False

    manifest += [
        ("warnings", "; ".join(warnings) if warnings else "none"),
        ("versions", _versions()),
        ("wall seconds", f"{watch.seconds():.3f}"),
    ]
    emit_manifest(manifest)
    if failed and args.strict:
        print("error: fit did not converge (strict mode)", file=sys.stderr)
        return 1
    return 0


def _parse_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{line_no}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise DataError(f"{path}:{line_no}: unknown config key {key!r}")
            if key in out:
                raise DataError(f"{path}:{line_no}: duplicate key {key!r}")
            out[key] = value
    return out


def _config_from_file(path) -> ScenarioConfig:
    raw = _parse_config_file(path)
    missing = [k for k in ("design", "beta1", "var_f", "var_t", "n",
                           "interviewers_ftf", "interviewers_tel")
               if k not in raw]
    if missing:
        raise DataError(f"{path}: missing config keys: {', '.join(missing)}")
    design = Design(raw["design"])
    rho = float(raw["rho"]) if "rho" in raw else None
    if design is Design.CROSSED and rho is None:
        raise DataError(f"{path}: crossed design requires the rho key")
    truth = Truth(beta1=float(raw["beta1"]), var_f=float(raw["var_f"]),
                  var_t=float(raw["var_t"]),
                  beta0=float(raw.get("beta0", 0.0)), rho=rho)
    population = Population(
        n=int(raw["n"]),
        interviewers_ftf=int(raw["interviewers_ftf"]),
        interviewers_tel=int(raw["interviewers_tel"]),
        interviewers_both=int(raw.get("interviewers_both", 0)),
        workload=raw.get("workload", "even"))
    budget = None
    if any(k in raw for k in ("iterations", "burn_in", "thin")):
        budget = McmcBudget(iterations=int(raw.get("iterations", 20000)),
                            burn_in=int(raw.get("burn_in", 5000)),
                            thin=int(raw.get("thin", 10)))
    return ScenarioConfig(
        name=f"config:{os.path.basename(path)}",
        design=design, truth=truth, population=population,
        replications=int(raw.get("K", 200)),
        engine=Engine(raw.get("engine", "ml")),
        base_seed=int(raw.get("seed", 1)),
        mcmc_budget=budget,
        quadrature_nodes=int(raw.get("quad_nodes", 21)),
        quadrature_nodes_2d=int(raw.get("quad_nodes_2d", 15)))


def _cmd_simulate(args) -> int:
    watch = Stopwatch()
    if args.list_scenarios:
        headers = ["name", "design", "beta0", "beta1", "var_f", "var_t",
                   "rho", "alpha", "n", "ftf", "tel", "both", "K"]
        rows = []
        for cfg in builtin_scenarios(args.hrs_scale):
            t, p = cfg.truth, cfg.population
            rows.append([cfg.name, cfg.design.value, t.beta0, t.beta1,
                         t.var_f, t.var_t, t.rho, t.alpha, p.n,
                         p.interviewers_ftf, p.interviewers_tel,
                         p.interviewers_both, cfg.replications])
        sys.stdout.write(render_table(headers, rows, args.tsv, args.precise))
        return 0

    if (args.scenario is None) == (args.config is None):
        print("error: give exactly one of --scenario or --config",
              file=sys.stderr)
        return 2
    if args.scenario is not None:
        table = {c.name: c for c in builtin_scenarios(args.hrs_scale)}
        if args.scenario not in table:
            print(f"error: unknown scenario {args.scenario!r}; "
                  f"known: {', '.join(table)}", file=sys.stderr)
            return 1
        config = table[args.scenario]
    else:
        config = _config_from_file(args.config)

    seed, seed_auto = (int(args.seed), False) if args.seed is not None \
        else (config.base_seed, None)
    config = replace(config, base_seed=seed)
    if args.engine is not None:
        config = replace(config, engine=Engine(args.engine))
    if args.k is not None:
        config = replace(config, replications=args.k)
    if any(v is not None for v in (args.iterations, args.burn_in, args.thin)):
        base = config.mcmc_budget or McmcBudget()
        config = replace(config, mcmc_budget=McmcBudget(
            iterations=args.iterations or base.iterations,
            burn_in=args.burn_in if args.burn_in is not None else base.burn_in,
            thin=args.thin or base.thin))
    jobs = args.jobs if args.jobs is not None else 1

    metrics = run_scenario(config, jobs=jobs)
    headers = ["parameter", "truth", "bias", "coverage", "se_ratio", "power"]
    rows = [[name, row.truth, row.bias, row.coverage, row.se_ratio, row.power]
            for name, row in metrics.rows.items()]
    sys.stdout.write(render_table(headers, rows, args.tsv, args.precise))

    t, p = config.truth, config.population
    budget = config.mcmc_budget or McmcBudget()
    entries = [
        ("command", "simulate"),
        ("scenario", config.name),
        ("engine", config.engine.value),
        ("design", config.design.value),
        ("truth", f"beta0={t.beta0}"
                  + (" (default convention)" if t.beta0 == 0.0 else "")
                  + f" beta1={t.beta1} var_f={t.var_f} var_t={t.var_t} "
                    f"rho={t.rho} alpha={t.alpha:.6f}"),
        ("population", f"n={p.n} ftf={p.interviewers_ftf} "
                       f"tel={p.interviewers_tel} both={p.interviewers_both} "
                       f"n_tel={p.n_tel} workload={p.workload}"),
        ("replications", config.replications),
        ("seed", config.base_seed),
        ("jobs", jobs),
    ]
    if config.engine is Engine.MCMC:
        entries.append(("budget", f"iterations={budget.iterations} "
                                  f"burn_in={budget.burn_in} thin={budget.thin}"))
    entries += [
        ("failed replications", metrics.n_failed),
        ("failures", "; ".join(metrics.failures) if metrics.failures else "none"),
        ("versions", _versions()),
        ("wall seconds", f"{watch.seconds():.3f}"),
    ]
    emit_manifest(entries)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "describe":
            return _cmd_describe(args)
        if args.command == "fit":
            return _cmd_fit(args)
        return _cmd_simulate(args)
    except (DataError, SimulationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
