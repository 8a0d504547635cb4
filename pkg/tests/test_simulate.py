"""Data generators, replication harness, and the built-in scenarios."""

import math

import numpy as np
import pytest
from scipy.special import ndtr

from modevar.data import DataError, Design, Engine
from modevar.simulate import (
    Population,
    ScenarioConfig,
    SimulationError,
    Truth,
    builtin_scenarios,
    generate_crossed,
    generate_nested,
    run_scenario,
)

ABS_POP = Population(n=2521, interviewers_ftf=31, interviewers_tel=13,
                     n_tel=1212)


class TestPopulationAndTruth:
    def test_workload_validated(self):
        with pytest.raises(DataError, match="workload"):
            Population(n=100, interviewers_ftf=2, interviewers_tel=2,
                       workload="zipf")

    def test_tiny_population_rejected(self):
        with pytest.raises(DataError):
            Population(n=1, interviewers_ftf=1, interviewers_tel=1)

    def test_alpha_is_derived(self):
        t = Truth(beta1=0.5, var_f=0.2, var_t=0.1)
        assert t.alpha == pytest.approx(0.5 * math.log(2.0))
        assert Truth(beta1=0.5, var_f=0.14, var_t=0.14).alpha == 0.0


class TestGenerateNested:
    def test_population_shape(self):
        ds = generate_nested(Truth(beta1=0.5, var_f=0.2, var_t=0.14),
                             ABS_POP, seed=(1, 1))
        assert ds.n == 2521
        assert ds.mode_counts() == {1: 1309, 0: 1212}
        assert len(ds.interviewers) == 44
        assert ds.design is Design.NESTED
        sizes = {}
        for r in ds.records:
            sizes[r.interviewer] = sizes.get(r.interviewer, 0) + 1
        ftf_sizes = [v for k, v in sizes.items() if k.startswith("F")]
        # even workload: cell sizes differ by at most one
        assert max(ftf_sizes) - min(ftf_sizes) <= 1
        assert sum(ftf_sizes) == 1309

    def test_default_mode_split_proportional_to_interviewers(self):
        pop = Population(n=2521, interviewers_ftf=31, interviewers_tel=13)
        ds = generate_nested(Truth(beta1=0.5, var_f=0.1, var_t=0.1),
                             pop, seed=(1, 2))
        assert ds.mode_counts()[0] == round(2521 * 13 / 44)

    def test_seed_determinism(self):
        t = Truth(beta1=0.5, var_f=0.2, var_t=0.1)
        a = generate_nested(t, ABS_POP, seed=(3, 7))
        b = generate_nested(t, ABS_POP, seed=(3, 7))
        c = generate_nested(t, ABS_POP, seed=(3, 8))
        assert a.records == b.records
        assert a.records != c.records

    def test_marginal_means_match_closed_form(self):
        # large J so interviewer noise does not mask the attenuation factor
        ds = generate_nested(
            Truth(beta0=0.2, beta1=0.3, var_f=0.3, var_t=0.1),
            Population(n=100000, interviewers_ftf=2000,
                       interviewers_tel=2000), seed=(70, 0))
        y = np.array([r.outcome for r in ds.records])
        m = np.array([r.mode for r in ds.records])
        assert y[m == 1].mean() == pytest.approx(
            ndtr(0.5 / math.sqrt(1.3)), abs=0.01)
        assert y[m == 0].mean() == pytest.approx(
            ndtr(0.2 / math.sqrt(1.1)), abs=0.01)

    def test_random_workload_conserves_totals(self):
        pop = Population(n=900, interviewers_ftf=10, interviewers_tel=5,
                         n_tel=300, workload="random")
        ds = generate_nested(Truth(beta1=0.5, var_f=0.1, var_t=0.1),
                             pop, seed=(4, 0))
        assert ds.mode_counts() == {1: 600, 0: 300}

    def test_rejects_both_mode_interviewers(self):
        pop = Population(n=100, interviewers_ftf=2, interviewers_tel=2,
                         interviewers_both=1)
        with pytest.raises(DataError, match="nested"):
            generate_nested(Truth(beta1=0.5, var_f=0.1, var_t=0.1),
                            pop, seed=(5, 0))


class TestGenerateCrossed:
    def test_population_shape(self):
        pop = Population(n=5000, interviewers_ftf=9, interviewers_tel=20,
                         interviewers_both=63)
        ds = generate_crossed(Truth(beta1=0.5, var_f=0.05, var_t=0.03,
                                    rho=0.5), pop, seed=(6, 0))
        assert ds.n == 5000
        assert len(ds.interviewers) == 92
        assert ds.design is Design.CROSSED
        # respondents split proportionally to interviewer-mode cells
        assert ds.mode_counts()[0] == round(5000 * 83 / 155)
        modes_of = {}
        for r in ds.records:
            modes_of.setdefault(r.interviewer, set()).add(r.mode)
        for iw, modes in modes_of.items():
            if iw.startswith("B"):
                assert modes == {0, 1}
            elif iw.startswith("F"):
                assert modes == {1}
            else:
                assert modes == {0}

    def test_requires_rho(self):
        pop = Population(n=100, interviewers_ftf=2, interviewers_tel=2,
                         interviewers_both=2)
        with pytest.raises(DataError, match="rho"):
            generate_crossed(Truth(beta1=0.5, var_f=0.1, var_t=0.1),
                             pop, seed=(7, 0))
        with pytest.raises(DataError):
            generate_crossed(Truth(beta1=0.5, var_f=0.1, var_t=0.1, rho=1.0),
                             pop, seed=(7, 0))

    def test_marginal_means_match_closed_form(self):
        ds = generate_crossed(
            Truth(beta0=-0.1, beta1=0.4, var_f=0.25, var_t=0.1, rho=0.5),
            Population(n=100000, interviewers_ftf=500, interviewers_tel=500,
                       interviewers_both=1500), seed=(71, 0))
        y = np.array([r.outcome for r in ds.records])
        m = np.array([r.mode for r in ds.records])
        assert y[m == 1].mean() == pytest.approx(
            ndtr(0.3 / math.sqrt(1.25)), abs=0.01)
        assert y[m == 0].mean() == pytest.approx(
            ndtr(-0.1 / math.sqrt(1.1)), abs=0.01)

    def test_seed_determinism(self):
        t = Truth(beta1=0.5, var_f=0.05, var_t=0.03, rho=0.5)
        pop = Population(n=600, interviewers_ftf=3, interviewers_tel=3,
                         interviewers_both=6)
        a = generate_crossed(t, pop, seed=(8, 1))
        b = generate_crossed(t, pop, seed=(8, 1))
        assert a.records == b.records


# stub fitters must be module-level so worker processes can import them

def _stub_exact(dataset, config, k):
    jitter = 0.01 if k % 2 == 0 else -0.01
    out = {}
    truths = {"beta1": config.truth.beta1, "sigma2_f": config.truth.var_f,
              "sigma2_t": config.truth.var_t, "alpha": config.truth.alpha}
    if config.design is Design.CROSSED:
        truths["rho"] = config.truth.rho
    for name, truth in truths.items():
        point = truth + jitter
        out[name] = (point, 0.01, point - 0.05, point + 0.05)
    return out


def _stub_flaky(dataset, config, k):
    if k <= 2:
        raise RuntimeError("synthetic failure")
    return _stub_exact(dataset, config, k)


def _stub_broken(dataset, config, k):
    if k <= 5:
        raise RuntimeError("synthetic failure")
    return _stub_exact(dataset, config, k)


def _toy_config(**kw):
    base = dict(
        name="toy", design=Design.NESTED,
        truth=Truth(beta1=0.5, var_f=0.2, var_t=0.1),
        population=Population(n=200, interviewers_ftf=4, interviewers_tel=4),
        replications=10, base_seed=12)
    base.update(kw)
    return ScenarioConfig(**base)


class TestRunScenario:
    def test_stub_metrics_arithmetic(self):
        metrics = run_scenario(_toy_config(), fitter=_stub_exact)
        assert set(metrics.rows) == {"beta1", "sigma2_f", "sigma2_t", "alpha"}
        K = 10
        for name, row in metrics.rows.items():
            assert row.bias == pytest.approx(0.0, abs=1e-15)
            assert row.coverage == 1.0
            # all points are truth +- 0.01, so the spread is known exactly
            assert row.se_ratio == pytest.approx(math.sqrt((K - 1) / K))
        # the half-width 0.05 interval excludes 0 for beta1 and alpha here
        assert metrics.rows["beta1"].power == 1.0
        assert metrics.rows["alpha"].power == 1.0
        assert metrics.rows["sigma2_f"].power is None

    def test_type1_when_truth_is_zero(self):
        config = _toy_config(truth=Truth(beta1=0.0, var_f=0.1, var_t=0.1))
        metrics = run_scenario(config, fitter=_stub_exact)
        # intervals centered near 0 with half-width 0.05 always contain 0
        assert metrics.rows["beta1"].power == 0.0
        assert metrics.rows["alpha"].power == 0.0

    def test_crossed_adds_rho_row(self):
        config = _toy_config(
            design=Design.CROSSED,
            truth=Truth(beta1=0.5, var_f=0.2, var_t=0.1, rho=0.5),
            population=Population(n=200, interviewers_ftf=2,
                                  interviewers_tel=2, interviewers_both=4))
        metrics = run_scenario(config, fitter=_stub_exact)
        assert "rho" in metrics.rows
        assert metrics.rows["rho"].power == 1.0

    def test_failures_excluded_and_reported(self):
        metrics = run_scenario(_toy_config(), fitter=_stub_flaky)
        assert metrics.n_failed == 2
        assert len(metrics.failures) == 2
        assert "replication 1" in metrics.failures[0]
        assert metrics.rows["beta1"].bias == pytest.approx(0.0, abs=1e-3)

    def test_excessive_failures_abort(self):
        with pytest.raises(SimulationError, match="of 10 replications"):
            run_scenario(_toy_config(), fitter=_stub_broken)

    def test_too_few_replications(self):
        with pytest.raises(SimulationError):
            run_scenario(_toy_config(replications=1), fitter=_stub_exact)

    def test_worker_count_does_not_change_results(self):
        config = _toy_config(
            replications=4,
            population=Population(n=400, interviewers_ftf=6,
                                  interviewers_tel=6))
        a = run_scenario(config, jobs=1)
        b = run_scenario(config, jobs=2)
        assert a.rows == b.rows
        assert a.n_failed == b.n_failed

    def test_real_engine_smoke(self):
        config = _toy_config(
            replications=3,
            population=Population(n=600, interviewers_ftf=8,
                                  interviewers_tel=8))
        metrics = run_scenario(config)
        assert metrics.n_replications == 3
        assert abs(metrics.rows["beta1"].bias) < 0.5


class TestBuiltinScenarios:
    def test_names_and_count(self):
        cfgs = builtin_scenarios()
        assert [c.name for c in cfgs] == [
            "abs-1", "abs-2", "abs-3", "abs-4",
            "hrs-1", "hrs-2", "hrs-3", "hrs-4"]
        assert all(c.replications == 200 for c in cfgs)
        assert all(c.engine is Engine.LIKELIHOOD for c in cfgs)

    def test_alpha_recomputations(self):
        cfgs = {c.name: c for c in builtin_scenarios()}
        for name, want in (("abs-2", 0.18), ("abs-3", 0.27), ("abs-4", 0.64),
                           ("hrs-2", 0.26), ("hrs-3", 0.35), ("hrs-4", 0.55)):
            assert cfgs[name].truth.alpha == pytest.approx(want, abs=0.005), name
        assert cfgs["abs-1"].truth.alpha == 0.0
        assert cfgs["hrs-1"].truth.alpha == 0.0

    def test_baseline_log_sd_recomputations(self):
        cfgs = {c.name: c for c in builtin_scenarios()}
        # half the log of the TEL variance pins the common baseline
        for name in ("abs-1", "abs-2", "abs-3", "abs-4"):
            assert 0.5 * math.log(cfgs[name].truth.var_t) == pytest.approx(
                -0.98, abs=0.005)
        for name in ("hrs-1", "hrs-2", "hrs-3", "hrs-4"):
            assert 0.5 * math.log(cfgs[name].truth.var_t) == pytest.approx(
                -1.75, abs=0.005)

    def test_population_presets(self):
        cfgs = {c.name: c for c in builtin_scenarios()}
        p = cfgs["abs-1"].population
        assert (p.n, p.interviewers_ftf, p.interviewers_tel, p.n_tel) == (
            2521, 31, 13, 1212)
        d = cfgs["hrs-1"].population
        assert (d.n, d.interviewers_ftf, d.interviewers_tel,
                d.interviewers_both) == (5000, 9, 20, 63)
        f = {c.name: c for c in builtin_scenarios("full")}["hrs-1"].population
        assert (f.n, f.interviewers_ftf, f.interviewers_tel,
                f.interviewers_both) == (20868, 37, 82, 263)

    def test_unknown_scale_rejected(self):
        with pytest.raises(DataError, match="hrs_scale"):
            builtin_scenarios("poster")
