"""MCMC engine: latent-propensity Gibbs updates with Metropolis variance steps.

The probit structure admits exact conditional updates for the latent
propensities (truncated normals), the coefficients (multivariate normal
under the flat-ish N(0, 1e6) prior), and the interviewer effects (normal,
or a 2x2 solve per interviewer under the crossed design).  The variance
block (log variances and, when crossed, atanh of the correlation) moves by
scalar random-walk Metropolis with proposal scales adapted during burn-in
only.  Priors: half-t(3, 1) on each effect SD, uniform on the correlation.

Draws are recorded on the natural scale.  The alpha column is recomputed
from the recorded variance columns of the same draw, so the defining
identity holds bit-exactly on the output matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from ._arrays import ModelArrays
from .data import DataError, Dataset, Design, ModelSpec

__all__ = [
    "McmcBudget",
    "PosteriorDraws",
    "PosteriorSummary",
    "SummaryRow",
    "ParamDiagnostic",
    "fit_mcmc",
    "hpd_interval",
    "posterior_summary",
    "diagnostics",
]


@dataclass(frozen=True)
class McmcBudget:
    """Chain length control; the default is a desk-scale reduction."""

    iterations: int = 20000
    burn_in: int = 5000
    thin: int = 10

    def __post_init__(self):
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise DataError("iterations must exceed burn_in")
        if self.thin < 1:
            raise DataError("thin must be at least 1")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in + self.thin - 1) // self.thin


@dataclass(frozen=True)
class ParamDiagnostic:
    ess: float
    autocorr: tuple
    zero_variance: bool = False


@dataclass(frozen=True)
class PosteriorDraws:
    """Retained draws on the natural scale plus chain metadata."""

    draws: np.ndarray
    names: tuple
    iterations: int
    burn_in: int
    thin: int
    seed: tuple
    diagnostics: dict
    warnings: tuple = ()

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]


@dataclass(frozen=True)
class SummaryRow:
    mean: float
    sd: float
    hpd_lo: float
    hpd_hi: float


@dataclass(frozen=True)
class PosteriorSummary:
    rows: dict
    level: float = 0.95


def _log_prior_lambda(lam, df, scale):
    # half-t(df, scale) on sigma = exp(lam / 2), including the Jacobian
    if abs(lam) > 200.0:
        return -np.inf
    return 0.5 * lam - 0.5 * (df + 1.0) * math.log1p(
        math.exp(lam) / (df * scale * scale))


def _log_prior_zeta(zeta):
    # uniform on rho = tanh(zeta), including the Jacobian
    if abs(zeta) > 200.0:
        return -np.inf
    rho = math.tanh(zeta)
    return math.log1p(-rho * rho)


class _GibbsCore:
    """Single chain over canonical arrays; n = 0 samples the prior.

    Exposed separately from fit_mcmc so the prior and the augmentation
    machinery can be exercised directly on raw design arrays in tests.
    """

    def __init__(self, X, y, cluster_of, mode, J, crossed,
                 cluster_mode=None, fixed_zeta=None, rng=None,
                 coef_prior_var=1e6, sigma_df=3.0, sigma_scale=1.0):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y)
        self.n, self.p = self.X.shape
        self.cluster_of = np.asarray(cluster_of, dtype=np.intp)
        self.mode = np.asarray(mode, dtype=np.int8)
        self.J = int(J)
        self.crossed = crossed
        self.fixed_zeta = fixed_zeta
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.sigma_df = sigma_df
        self.sigma_scale = sigma_scale

        if self.n:
            prec = self.X.T @ self.X + np.eye(self.p) / coef_prior_var
        else:
            prec = np.eye(self.p) / coef_prior_var
        cov = np.linalg.inv(prec)
        self._coef_cov = cov
        self._coef_chol = np.linalg.cholesky(cov)

        if crossed:
            recF = self.mode == 1
            self._recF = recF
            self._clF = self.cluster_of[recF]
            self._clT = self.cluster_of[~recF]
            self._n_f = np.bincount(self._clF, minlength=self.J).astype(float)
            self._n_t = np.bincount(self._clT, minlength=self.J).astype(float)
        else:
            if self.J and cluster_mode is None:
                raise DataError("nested sampler needs per-cluster modes")
            self.cluster_mode = (np.asarray(cluster_mode, dtype=np.int8)
                                 if self.J else np.zeros(0, np.int8))
            self._counts = np.bincount(self.cluster_of,
                                       minlength=self.J).astype(float)
            self._is_f = self.cluster_mode == 1
            self._Jf = int(self._is_f.sum())
            self._Jt = self.J - self._Jf

    def run(self, budget: McmcBudget):
        rng = self.rng
        n, p, J = self.n, self.p, self.J
        beta = np.zeros(p)
        lam_f = lam_t = math.log(0.1)
        zeta = 0.0 if self.fixed_zeta is None else self.fixed_zeta
        free_zeta = self.crossed and self.fixed_zeta is None
        if self.crossed:
            b = np.zeros((2, J))
        else:
            b = np.zeros(J)

        n_keep = budget.n_retained
        kept_beta = np.empty((n_keep, p))
        kept_lam = np.empty((n_keep, 2))
        kept_zeta = np.empty(n_keep) if self.crossed else None
        accept = np.zeros(3)

        # adaptive proposal log-scales, frozen after burn-in
        log_s = np.array([math.log(0.5)] * 3)
        y1 = self.y == 1
        pos = 0
        for it in range(budget.iterations):
            adapt = it < budget.burn_in
            gam = min(0.05, 10.0 / (it + 100.0)) if adapt else 0.0

            if n:
                if self.crossed:
                    eff = np.where(self.mode == 1,
                                   b[0][self.cluster_of], b[1][self.cluster_of])
                else:
                    eff = b[self.cluster_of]
                mu = self.X @ beta + eff
                pn = ndtr(-mu)
                u = rng.random(n)
                arg = np.where(y1, pn + u * (1.0 - pn), u * pn)
                np.clip(arg, 1e-300, 1.0 - 1e-16, out=arg)
                ystar = mu + ndtri(arg)

                resid_b = ystar - eff
                mean = self._coef_cov @ (self.X.T @ resid_b)
                beta = mean + self._coef_chol @ rng.standard_normal(p)
            else:
                beta = self._coef_chol @ rng.standard_normal(p)

            if self.crossed:
                sig_f = math.exp(0.5 * lam_f)
                sig_t = math.exp(0.5 * lam_t)
                rho = math.tanh(zeta)
                c2 = 1.0 - rho * rho
                ip11 = 1.0 / (sig_f * sig_f * c2)
                ip22 = 1.0 / (sig_t * sig_t * c2)
                ip12 = -rho / (sig_f * sig_t * c2)
                if J:
                    if n:
                        resid = ystar - self.X @ beta
                        sF = np.bincount(self._clF, weights=resid[self._recF],
                                         minlength=J)
                        sT = np.bincount(self._clT, weights=resid[~self._recF],
                                         minlength=J)
                    else:
                        sF = sT = np.zeros(J)
                    a11 = ip11 + self._n_f
                    a22 = ip22 + self._n_t
                    a12 = ip12
                    det = a11 * a22 - a12 * a12
                    m1 = (a22 * sF - a12 * sT) / det
                    m2 = (a11 * sT - a12 * sF) / det
                    c11 = a22 / det
                    c12 = -a12 / det
                    c22 = a11 / det
                    l11 = np.sqrt(c11)
                    l21 = c12 / l11
                    l22 = np.sqrt(np.maximum(c22 - l21 * l21, 1e-300))
                    zz = rng.standard_normal((2, J))
                    b = np.vstack([m1 + l11 * zz[0],
                                   m2 + l21 * zz[0] + l22 * zz[1]])
                    q1 = float(b[0] @ b[0])
                    q2 = float(b[0] @ b[1])
                    q3 = float(b[1] @ b[1])
                else:
                    q1 = q2 = q3 = 0.0

                def bvn_term(lf, lt, zt):
                    r = math.tanh(zt)
                    cc = 1.0 - r * r
                    vf = math.exp(lf)
                    vt = math.exp(lt)
                    quad = (q1 / vf - 2.0 * r * q2 / math.sqrt(vf * vt)
                            + q3 / vt) / cc
                    return (-0.5 * J * (lf + lt + math.log(cc))
                            - 0.5 * quad)

                eps = rng.standard_normal()
                uu = rng.random()
                cand = lam_f + math.exp(log_s[0]) * eps
                num = bvn_term(cand, lam_t, zeta) + _log_prior_lambda(
                    cand, self.sigma_df, self.sigma_scale)
                den = bvn_term(lam_f, lam_t, zeta) + _log_prior_lambda(
                    lam_f, self.sigma_df, self.sigma_scale)
                acc = math.log(uu) < num - den
                if acc:
                    lam_f = cand
                accept[0] += acc
                log_s[0] += gam * ((1.0 if acc else 0.0) - 0.4)

                eps = rng.standard_normal()
                uu = rng.random()
                cand = lam_t + math.exp(log_s[1]) * eps
                num = bvn_term(lam_f, cand, zeta) + _log_prior_lambda(
                    cand, self.sigma_df, self.sigma_scale)
                den = bvn_term(lam_f, lam_t, zeta) + _log_prior_lambda(
                    lam_t, self.sigma_df, self.sigma_scale)
                acc = math.log(uu) < num - den
                if acc:
                    lam_t = cand
                accept[1] += acc
                log_s[1] += gam * ((1.0 if acc else 0.0) - 0.4)

                if free_zeta:
                    eps = rng.standard_normal()
                    uu = rng.random()
                    cand = zeta + math.exp(log_s[2]) * eps
                    num = bvn_term(lam_f, lam_t, cand) + _log_prior_zeta(cand)
                    den = bvn_term(lam_f, lam_t, zeta) + _log_prior_zeta(zeta)
                    acc = math.log(uu) < num - den
                    if acc:
                        zeta = cand
                    accept[2] += acc
                    log_s[2] += gam * ((1.0 if acc else 0.0) - 0.4)
            else:
                if J:
                    if n:
                        resid = ystar - self.X @ beta
                        sums = np.bincount(self.cluster_of, weights=resid,
                                           minlength=J)
                    else:
                        sums = np.zeros(J)
                    inv_var = np.where(self._is_f, math.exp(-lam_f),
                                       math.exp(-lam_t))
                    prec = self._counts + inv_var
                    b = sums / prec + rng.standard_normal(J) / np.sqrt(prec)
                    ssb_f = float(b[self._is_f] @ b[self._is_f])
                    ssb_t = float(b[~self._is_f] @ b[~self._is_f])
                    jf, jt = self._Jf, self._Jt
                else:
                    ssb_f = ssb_t = 0.0
                    jf = jt = 0

                def lam_target(lam, jm, ssb):
                    if abs(lam) > 200.0:
                        return -np.inf
                    return (-0.5 * jm * lam - 0.5 * math.exp(-lam) * ssb
                            + _log_prior_lambda(lam, self.sigma_df,
                                                self.sigma_scale))

                eps = rng.standard_normal()
                uu = rng.random()
                cand = lam_f + math.exp(log_s[0]) * eps
                acc = math.log(uu) < (lam_target(cand, jf, ssb_f)
                                      - lam_target(lam_f, jf, ssb_f))
                if acc:
                    lam_f = cand
                accept[0] += acc
                log_s[0] += gam * ((1.0 if acc else 0.0) - 0.4)

                eps = rng.standard_normal()
                uu = rng.random()
                cand = lam_t + math.exp(log_s[1]) * eps
                acc = math.log(uu) < (lam_target(cand, jt, ssb_t)
                                      - lam_target(lam_t, jt, ssb_t))
                if acc:
                    lam_t = cand
                accept[1] += acc
                log_s[1] += gam * ((1.0 if acc else 0.0) - 0.4)

            if it >= budget.burn_in and (it - budget.burn_in) % budget.thin == 0:
                kept_beta[pos] = beta
                kept_lam[pos] = (lam_f, lam_t)
                if self.crossed:
                    kept_zeta[pos] = zeta
                pos += 1

        return {
            "beta": kept_beta[:pos],
            "lam": kept_lam[:pos],
            "zeta": kept_zeta[:pos] if self.crossed else None,
            "acceptance": accept / budget.iterations,
        }


def _normalize_seed(seed) -> tuple:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(v) for v in seed)


def fit_mcmc(dataset: Dataset, spec: ModelSpec,
             budget: Optional[McmcBudget] = None, seed=0,
             min_ess: float = 100.0,
             coef_prior_var: float = 1e6,
             sigma_prior_df: float = 3.0,
             sigma_prior_scale: float = 1.0) -> PosteriorDraws:
    """Run one chain for the specified model and return natural-scale draws.

    Fully reproducible from ``seed`` (an int or a tuple of ints).  If the
    smallest effective sample size falls below ``min_ess`` the result
    carries a warning rather than failing.
    """
    if dataset.design is not spec.design:
        raise DataError(
            f"dataset design {dataset.design.value} does not match "
            f"spec design {spec.design.value}"
        )
    budget = budget if budget is not None else McmcBudget()
    include_cov = spec.include_covariates and bool(dataset.covariate_names)
    arr = ModelArrays(dataset, include_covariates=include_cov)
    crossed = spec.design is Design.CROSSED
    fixed_zeta = None
    if spec.fixed_rho is not None:
        fixed_zeta = math.atanh(spec.fixed_rho)
    seed_t = _normalize_seed(seed)
    rng = np.random.default_rng(np.random.SeedSequence(list(seed_t)))

    cluster_mode = None
    if not crossed:
        cluster_mode = (arr.n_f > 0).astype(np.int8)
    core = _GibbsCore(arr.X, arr.y, arr.cluster_of, arr.mode, arr.J,
                      crossed=crossed, cluster_mode=cluster_mode,
                      fixed_zeta=fixed_zeta, rng=rng,
                      coef_prior_var=coef_prior_var,
                      sigma_df=sigma_prior_df, sigma_scale=sigma_prior_scale)
    chains = core.run(budget)

    var_f = np.exp(chains["lam"][:, 0])
    var_t = np.exp(chains["lam"][:, 1])
    # recomputed from the stored variance columns so the identity is exact
    alpha = 0.5 * (np.log(var_f) - np.log(var_t))
    cov_names = dataset.covariate_names if include_cov else ()
    names = ["beta0", "beta1", *cov_names, "sigma2_f", "sigma2_t"]
    cols = [chains["beta"], var_f[:, None], var_t[:, None]]
    if crossed:
        names.append("rho")
        cols.append(np.tanh(chains["zeta"])[:, None])
    names.append("alpha")
    cols.append(alpha[:, None])
    draws = np.hstack(cols)

    result = PosteriorDraws(
        draws=draws, names=tuple(names),
        iterations=budget.iterations, burn_in=budget.burn_in,
        thin=budget.thin, seed=seed_t,
        diagnostics={}, warnings=())
    diag = diagnostics(result)
    warnings = []
    worst = min(d.ess for d in diag.values())
    if worst < min_ess:
        warnings.append(
            f"minimum effective sample size {worst:.0f} below {min_ess:.0f}")
    return PosteriorDraws(
        draws=draws, names=tuple(names),
        iterations=budget.iterations, burn_in=budget.burn_in,
        thin=budget.thin, seed=seed_t,
        diagnostics=diag, warnings=tuple(warnings))


def hpd_interval(sample, level: float = 0.95):
    """Shortest window of ceil(level * n) consecutive order statistics."""
    arr = np.sort(np.asarray(sample, dtype=float))
    n = arr.size
    if n < math.ceil(1.0 / (1.0 - level)):
        raise ValueError(f"need at least {math.ceil(1.0 / (1.0 - level))} draws")
    m = math.ceil(level * n)
    if m >= n:
        return float(arr[0]), float(arr[-1])
    widths = arr[m - 1:] - arr[:n - m + 1]
    i = int(np.argmin(widths))
    return float(arr[i]), float(arr[i + m - 1])


def posterior_summary(draws: PosteriorDraws, level: float = 0.95) -> PosteriorSummary:
    """Mean, SD, and HPD interval per parameter column.

    Columns with fewer than ceil(1 / (1 - level)) draws fall back to the
    sample range as the interval.
    """
    rows = {}
    n = draws.draws.shape[0]
    if n == 0:
        raise ValueError("no draws")
    for k, name in enumerate(draws.names):
        col = draws.draws[:, k]
        mean = float(col.mean())
        sd = float(col.std(ddof=1)) if n > 1 else 0.0
        if n < math.ceil(1.0 / (1.0 - level)):
            lo, hi = float(col.min()), float(col.max())
        else:
            lo, hi = hpd_interval(col, level)
        rows[name] = SummaryRow(mean, sd, lo, hi)
    return PosteriorSummary(rows=rows, level=level)


def diagnostics(draws: PosteriorDraws, n_autocorr: int = 10) -> dict:
    """Effective sample size and leading autocorrelations per parameter.

    ESS uses the initial-positive-sequence rule: sum adjacent-pair
    autocovariances until a pair turns nonpositive.  Constant columns are
    flagged and reported at full size by convention.
    """
    out = {}
    n = draws.draws.shape[0]
    for k, name in enumerate(draws.names):
        col = draws.draws[:, k]
        centered = col - col.mean()
        c0 = float(centered @ centered) / n
        # the mean of a constant column rounds, so test the values directly
        if col[0] == col[-1] and np.all(col == col[0]):
            c0 = 0.0
        if c0 <= 0.0 or not math.isfinite(c0):
            out[name] = ParamDiagnostic(ess=float(n),
                                        autocorr=(0.0,) * n_autocorr,
                                        zero_variance=True)
            continue
        nfft = 1
        while nfft < 2 * n:
            nfft *= 2
        f = np.fft.rfft(centered, nfft)
        acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
        rho = acov / acov[0]
        tau = -1.0
        m = 0
        while 2 * m + 1 < rho.size:
            pair = rho[2 * m] + rho[2 * m + 1]
            if pair <= 0.0:
                break
            tau += 2.0 * pair
            m += 1
        ess = min(float(n), n / max(tau, 1e-12))
        out[name] = ParamDiagnostic(
            ess=ess,
            autocorr=tuple(float(r) for r in rho[1:n_autocorr + 1]),
            zero_variance=False)
    return out
