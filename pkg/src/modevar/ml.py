"""Maximum-likelihood engine for the probit interviewer-variance models.

The marginal likelihood integrates interviewer effects out of a probit
model with mode-specific effect variances.  Interviewers serving a single
mode contribute one-dimensional integrals; interviewers serving both modes
contribute two-dimensional integrals over a correlated effect pair.  Both
are evaluated by adaptive Gauss-Hermite quadrature centered at each
cluster's conditional mode, and the gradient is the posterior expectation
of the complete-data score over the same grid, so likelihood and gradient
cost one pass together.

Optimization runs on the unconstrained scale (log variances, atanh of the
correlation); Wald intervals are formed there and mapped back, and the
variance-ratio test statistic alpha gets a delta-method variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr, roots_hermite

from ._arrays import ModelArrays
from .data import DataError, Dataset, Design, ModelSpec, ParameterVector

__all__ = [
    "MLFit",
    "NaturalRow",
    "cluster_loglik_nested",
    "cluster_loglik_crossed",
    "total_loglik",
    "fit_ml",
    "delta_var_alpha",
    "alpha_from_variances",
    "icc",
    "mode_effect_probability_scale",
]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_RT2 = math.sqrt(2.0)
Z95 = 1.959964

# guard box for the unconstrained parameters: outside it the likelihood is
# treated as -inf so the line search backs off before exp() overflows
_LAM_BOUND = 46.0
_ZETA_BOUND = 18.0


@dataclass(frozen=True)
class NaturalRow:
    """One natural-scale quantity: point, SE, and 95% interval."""

    name: str
    point: float
    se: Optional[float]
    lo: Optional[float]
    hi: Optional[float]
    fixed: bool = False


@dataclass(frozen=True)
class MLFit:
    params: ParameterVector
    vcov: Optional[np.ndarray]
    loglik: float
    converged: bool
    n_iter: int
    natural_scale: tuple
    design: Design
    fixed_rho: Optional[float]
    message: str = ""


def _logcdf_and_ratio(t):
    # r = pdf/cdf, the derivative of log Phi; stable far in the left tail
    logcdf = log_ndtr(t)
    r = np.exp(-0.5 * t * t - _HALF_LOG_2PI - logcdf)
    return logcdf, r


class _Marginal:
    """Adaptive-quadrature marginal log-likelihood over canonical arrays."""

    def __init__(self, arrays: ModelArrays, crossed: bool,
                 nodes_1d: int = 21, nodes_2d: int = 15,
                 fixed_zeta: Optional[float] = None):
        self.a = arrays
        self.crossed = crossed
        self.fixed_zeta = fixed_zeta
        self.free_zeta = crossed and fixed_zeta is None
        if not crossed and arrays.J2 > 0:
            raise DataError("nested likelihood requested for crossed data")

        xi, w = roots_hermite(nodes_1d)
        self.xi1 = xi
        self.logw1 = np.log(w) + xi * xi
        xi2, w2 = roots_hermite(nodes_2d)
        ga, gb = np.meshgrid(xi2, xi2, indexing="ij")
        self.xiA = ga.ravel()
        self.xiB = gb.ravel()
        lw = np.log(w2)
        self.logw2 = (lw[:, None] + lw[None, :]).ravel() \
            + self.xiA ** 2 + self.xiB ** 2

        self.dim = arrays.p + 2 + (1 if self.free_zeta else 0)
        self._warm1 = np.zeros(arrays.J1)
        self._warm2 = np.zeros((2, arrays.J2))

    def _unpack(self, theta):
        p = self.a.p
        beta = theta[:p]
        lam_f, lam_t = theta[p], theta[p + 1]
        zeta = 0.0
        if self.crossed:
            zeta = theta[p + 2] if self.free_zeta else self.fixed_zeta
        return beta, lam_f, lam_t, zeta

    def value_and_grad(self, theta, want_grad=True):
        beta, lam_f, lam_t, zeta = self._unpack(theta)
        if (abs(lam_f) > _LAM_BOUND or abs(lam_t) > _LAM_BOUND
                or abs(zeta) > _ZETA_BOUND or not np.all(np.isfinite(theta))):
            return -np.inf, np.zeros(self.dim)
        a = self.a
        sigma_f = math.exp(0.5 * lam_f)
        sigma_t = math.exp(0.5 * lam_t)
        eta = a.X @ beta
        if not np.all(np.isfinite(eta)):
            raise DataError("non-finite linear predictor")

        ll = 0.0
        grad = np.zeros(self.dim) if want_grad else None
        if a.J1 > 0:
            ll += self._part_1d(eta, sigma_f, sigma_t, grad)
        if a.J2 > 0:
            ll += self._part_2d(eta, sigma_f, sigma_t, zeta, grad)
        return ll, grad

    def loglik(self, theta) -> float:
        return self.value_and_grad(theta, want_grad=False)[0]

    def _part_1d(self, eta, sigma_f, sigma_t, grad):
        a = self.a
        idx, cl, J = a.idx1, a.cl1, a.J1
        s1 = a.s[idx]
        lin = s1 * eta[idx]
        sig_c = np.where(a.cl1_mode == 1, sigma_f, sigma_t)
        slope = s1 * sig_c[cl]

        z = self._warm1
        for _ in range(100):
            t = lin + slope * z[cl]
            _, r = _logcdf_and_ratio(t)
            ssr = np.bincount(cl, weights=s1 * r, minlength=J)
            sw = np.bincount(cl, weights=r * (t + r), minlength=J)
            curv = sig_c * sig_c * sw + 1.0
            dz = (sig_c * ssr - z) / curv
            np.clip(dz, -8.0, 8.0, out=dz)
            z = z + dz
            if np.max(np.abs(dz)) < 1e-10:
                break
        self._warm1 = z
        scale = 1.0 / np.sqrt(curv)

        K = self.xi1.size
        G = np.empty((J, K))
        R = np.empty((idx.size, K)) if grad is not None else None
        SR = np.empty((J, K)) if grad is not None else None
        Z = np.empty((J, K))
        for k in range(K):
            zk = z + _RT2 * scale * self.xi1[k]
            t = lin + slope * zk[cl]
            logcdf, r = _logcdf_and_ratio(t)
            G[:, k] = (np.bincount(cl, weights=logcdf, minlength=J)
                       - 0.5 * zk * zk + self.logw1[k])
            Z[:, k] = zk
            if grad is not None:
                R[:, k] = r
                SR[:, k] = np.bincount(cl, weights=s1 * r, minlength=J)

        gmax = G.max(axis=1)
        E = np.exp(G - gmax[:, None])
        sumE = E.sum(axis=1)
        ll = float(np.sum(gmax + np.log(sumE)
                          + 0.5 * math.log(2.0) + np.log(scale)
                          - _HALF_LOG_2PI))
        if grad is not None:
            P = E / sumE[:, None]
            arec = s1 * (R * P[cl]).sum(axis=1)
            grad[:a.p] += a.X[idx].T @ arec
            glam = 0.5 * sig_c * (P * Z * SR).sum(axis=1)
            grad[a.p] += glam[a.cl1_mode == 1].sum()
            grad[a.p + 1] += glam[a.cl1_mode == 0].sum()
        return ll

    def _part_2d(self, eta, sigma_f, sigma_t, zeta, grad):
        a = self.a
        rho = math.tanh(zeta)
        c = math.sqrt(1.0 - rho * rho)
        iF, iT, clF, clT, J = a.idx2F, a.idx2T, a.cl2F, a.cl2T, a.J2
        sF, sT = a.s[iF], a.s[iT]
        linF = sF * eta[iF]
        linT = sT * eta[iT]
        mF = sF * sigma_f
        mT = sT * sigma_t

        z1, z2 = self._warm2
        for _ in range(100):
            t = linF + mF * z1[clF]
            u = linT + mT * (rho * z1[clT] + c * z2[clT])
            _, rF = _logcdf_and_ratio(t)
            _, rT = _logcdf_and_ratio(u)
            srF = np.bincount(clF, weights=sF * rF, minlength=J)
            srT = np.bincount(clT, weights=sT * rT, minlength=J)
            wF = np.bincount(clF, weights=rF * (t + rF), minlength=J)
            wT = np.bincount(clT, weights=rT * (u + rT), minlength=J)
            g1 = sigma_f * srF + sigma_t * rho * srT - z1
            g2 = sigma_t * c * srT - z2
            p11 = sigma_f * sigma_f * wF + sigma_t * sigma_t * rho * rho * wT + 1.0
            p12 = sigma_t * sigma_t * rho * c * wT
            p22 = sigma_t * sigma_t * c * c * wT + 1.0
            det = p11 * p22 - p12 * p12
            d1 = (p22 * g1 - p12 * g2) / det
            d2 = (p11 * g2 - p12 * g1) / det
            np.clip(d1, -8.0, 8.0, out=d1)
            np.clip(d2, -8.0, 8.0, out=d2)
            z1 = z1 + d1
            z2 = z2 + d2
            if max(np.max(np.abs(d1)), np.max(np.abs(d2))) < 1e-10:
                break
        self._warm2 = np.vstack([z1, z2])

        # Cholesky of the Laplace covariance (inverse of the curvature)
        c11 = p22 / det
        c12 = -p12 / det
        c22 = p11 / det
        l11 = np.sqrt(c11)
        l21 = c12 / l11
        l22 = np.sqrt(np.maximum(c22 - l21 * l21, 1e-300))

        K = self.xiA.size
        G = np.empty((J, K))
        Z1 = np.empty((J, K))
        Z2 = np.empty((J, K))
        RF = np.empty((iF.size, K)) if grad is not None else None
        RT = np.empty((iT.size, K)) if grad is not None else None
        SRF = np.empty((J, K)) if grad is not None else None
        SRT = np.empty((J, K)) if grad is not None else None
        for k in range(K):
            z1k = z1 + _RT2 * l11 * self.xiA[k]
            z2k = z2 + _RT2 * (l21 * self.xiA[k] + l22 * self.xiB[k])
            t = linF + mF * z1k[clF]
            u = linT + mT * (rho * z1k[clT] + c * z2k[clT])
            logcdfF, rF = _logcdf_and_ratio(t)
            logcdfT, rT = _logcdf_and_ratio(u)
            G[:, k] = (np.bincount(clF, weights=logcdfF, minlength=J)
                       + np.bincount(clT, weights=logcdfT, minlength=J)
                       - 0.5 * (z1k * z1k + z2k * z2k) + self.logw2[k])
            Z1[:, k] = z1k
            Z2[:, k] = z2k
            if grad is not None:
                RF[:, k] = rF
                RT[:, k] = rT
                SRF[:, k] = np.bincount(clF, weights=sF * rF, minlength=J)
                SRT[:, k] = np.bincount(clT, weights=sT * rT, minlength=J)

        gmax = G.max(axis=1)
        E = np.exp(G - gmax[:, None])
        sumE = E.sum(axis=1)
        ll = float(np.sum(gmax + np.log(sumE)
                          + math.log(2.0) + np.log(l11 * l22)
                          - math.log(2.0 * math.pi)))
        if grad is not None:
            P = E / sumE[:, None]
            aF = sF * (RF * P[clF]).sum(axis=1)
            aT = sT * (RT * P[clT]).sum(axis=1)
            grad[:a.p] += a.X[iF].T @ aF
            grad[:a.p] += a.X[iT].T @ aT
            grad[a.p] += 0.5 * sigma_f * float((P * Z1 * SRF).sum())
            grad[a.p + 1] += 0.5 * sigma_t * float(
                (P * (rho * Z1 + c * Z2) * SRT).sum())
            if self.free_zeta:
                grad[a.p + 2] += sigma_t * c * float(
                    (P * (c * Z1 - rho * Z2) * SRT).sum())
        return ll


def _check_params(params: ParameterVector, crossed: bool):
    vals = [params.beta0, params.beta1, *params.gamma,
            params.lambda_f, params.lambda_t]
    if crossed:
        if params.zeta is None:
            raise DataError("crossed model requires zeta (atanh rho)")
        vals.append(params.zeta)
    if not all(math.isfinite(v) for v in vals):
        raise DataError("non-finite parameter value")


def _theta_of(params: ParameterVector, free_zeta: bool):
    vals = [params.beta0, params.beta1, *params.gamma,
            params.lambda_f, params.lambda_t]
    if free_zeta:
        vals.append(params.zeta)
    return np.asarray(vals, dtype=float)


def cluster_loglik_nested(params: ParameterVector, cluster,
                          quadrature_nodes: int = 21) -> float:
    """Marginal log-likelihood of one single-mode interviewer's records.

    Integrates a shared N(0, sigma^2_m) effect out of the product of probit
    record likelihoods, with sigma^2_m chosen by the cluster's mode.
    """
    cluster = list(cluster)
    if not cluster:
        raise DataError("empty cluster")
    modes = {r.mode for r in cluster}
    if len(modes) > 1:
        raise DataError("nested cluster contains both modes")
    if len({r.interviewer for r in cluster}) > 1:
        raise DataError("cluster spans multiple interviewers")
    _check_params(params, crossed=False)
    arr = ModelArrays.from_records(cluster, len(params.gamma))
    marg = _Marginal(arr, crossed=False, nodes_1d=quadrature_nodes)
    return marg.loglik(_theta_of(params, free_zeta=False))


def cluster_loglik_crossed(params: ParameterVector, cluster,
                           quadrature_nodes: int = 21,
                           quadrature_nodes_2d: int = 15) -> float:
    """Marginal log-likelihood of one interviewer under correlated effects.

    With records in both modes this is a 2-D integral over the effect pair;
    with one mode it reduces exactly to the matching 1-D integral.
    """
    cluster = list(cluster)
    if not cluster:
        raise DataError("empty cluster")
    if len({r.interviewer for r in cluster}) > 1:
        raise DataError("cluster spans multiple interviewers")
    _check_params(params, crossed=True)
    if abs(params.rho) >= 1.0 - 1e-12:
        raise DataError("correlation numerically at the boundary")
    arr = ModelArrays.from_records(cluster, len(params.gamma))
    marg = _Marginal(arr, crossed=True, nodes_1d=quadrature_nodes,
                     nodes_2d=quadrature_nodes_2d)
    return marg.loglik(_theta_of(params, free_zeta=True))


def total_loglik(params: ParameterVector, dataset: Dataset,
                 quadrature_nodes: int = 21,
                 quadrature_nodes_2d: int = 15) -> float:
    """Sum of cluster marginal log-likelihoods over the whole dataset.

    Covariates enter only when ``params.gamma`` is non-empty, in which case
    its length must match the dataset's covariate count.  Deterministic for
    a fixed node count, and invariant to record or label permutation.
    """
    n_gamma = len(params.gamma)
    if n_gamma and n_gamma != len(dataset.covariate_names):
        raise DataError(
            f"params carry {n_gamma} covariate coefficients, dataset has "
            f"{len(dataset.covariate_names)} covariates"
        )
    crossed = dataset.design is Design.CROSSED
    _check_params(params, crossed=crossed)
    arr = ModelArrays(dataset, include_covariates=n_gamma > 0)
    marg = _Marginal(arr, crossed=crossed, nodes_1d=quadrature_nodes,
                     nodes_2d=quadrature_nodes_2d)
    value = marg.loglik(_theta_of(params, free_zeta=crossed))
    if not math.isfinite(value):
        raise DataError("non-finite log-likelihood at the given parameters")
    return value


def _probit_start(X, y, maxiter=30):
    # plain probit MLE by Newton; only used for starting values
    n, p = X.shape
    beta = np.zeros(p)
    s = 2.0 * y - 1.0
    for _ in range(maxiter):
        t = s * (X @ beta)
        _, r = _logcdf_and_ratio(t)
        score = X.T @ (s * r)
        w = r * (t + r)
        H = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, score, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    if not np.all(np.isfinite(beta)):
        beta = np.zeros(p)
    return beta


def fit_ml(dataset: Dataset, spec: ModelSpec) -> MLFit:
    """Fit the requested model by quasi-Newton maximum likelihood.

    Optimizes the unconstrained parameterization with analytic gradients,
    then inverts a central-finite-difference Hessian for the covariance
    matrix.  A singular or indefinite Hessian yields a fit whose SEs and
    intervals are reported unavailable rather than an error.  Convergence
    is judged by the gradient norm relative to the log-likelihood scale:
    the quadrature introduces a tiny parameter-dependent wobble, so a
    fixed absolute tolerance is unattainable on large datasets.
    """
    if dataset.design is not spec.design:
        raise DataError(
            f"dataset design {dataset.design.value} does not match "
            f"spec design {spec.design.value}"
        )
    include_cov = spec.include_covariates and bool(dataset.covariate_names)
    arr = ModelArrays(dataset, include_covariates=include_cov)
    crossed = spec.design is Design.CROSSED
    fixed_zeta = None
    if spec.fixed_rho is not None:
        fixed_zeta = math.atanh(spec.fixed_rho)
    marg = _Marginal(arr, crossed=crossed, nodes_1d=spec.quadrature_nodes,
                     nodes_2d=spec.quadrature_nodes_2d, fixed_zeta=fixed_zeta)

    beta0 = _probit_start(arr.X, arr.y.astype(float))
    start = [*beta0, math.log(0.1), math.log(0.1)]
    if marg.free_zeta:
        start.append(0.0)
    theta0 = np.asarray(start)

    def negobj(theta):
        ll, g = marg.value_and_grad(theta)
        return -ll, -g

    message = ""
    n_iter = 0
    res = minimize(negobj, theta0, jac=True, method="BFGS",
                   options={"gtol": spec.gradient_tol,
                            "maxiter": spec.max_iterations})
    n_iter += res.nit
    ll, g = marg.value_and_grad(res.x)
    tol = spec.gradient_tol * (1.0 + abs(ll))
    if np.max(np.abs(g)) > tol:
        # one restart with a fresh Hessian approximation
        res = minimize(negobj, res.x, jac=True, method="BFGS",
                       options={"gtol": spec.gradient_tol,
                                "maxiter": spec.max_iterations})
        n_iter += res.nit
        ll, g = marg.value_and_grad(res.x)
        tol = spec.gradient_tol * (1.0 + abs(ll))
    converged = bool(np.max(np.abs(g)) <= tol)
    if not converged:
        message = f"gradient norm {np.max(np.abs(g)):.3e} above tolerance {tol:.3e}"
    theta = res.x

    vcov = _fd_vcov(marg, theta)
    if vcov is None and not message:
        message = "Hessian not invertible; SEs unavailable"

    n_gamma = arr.p - 2
    params = ParameterVector.from_array(
        theta if marg.free_zeta or not crossed else np.append(theta, fixed_zeta),
        n_gamma=n_gamma, crossed=crossed)
    cov_names = dataset.covariate_names if include_cov else ()
    table = _natural_table(params, vcov, crossed, spec.fixed_rho,
                           cov_names, marg.free_zeta)
    return MLFit(params=params, vcov=vcov, loglik=float(ll),
                 converged=converged, n_iter=int(n_iter),
                 natural_scale=table, design=spec.design,
                 fixed_rho=spec.fixed_rho, message=message)


def _fd_vcov(marg, theta):
    # covariance = inverse Hessian of the negative log-likelihood,
    # Hessian by central differences of the analytic gradient
    dim = theta.size
    H = np.empty((dim, dim))
    for j in range(dim):
        h = 1e-4 * (1.0 + abs(theta[j]))
        up = theta.copy()
        up[j] += h
        dn = theta.copy()
        dn[j] -= h
        _, gu = marg.value_and_grad(up)
        _, gd = marg.value_and_grad(dn)
        H[:, j] = -(gu - gd) / (2.0 * h)
    H = 0.5 * (H + H.T)
    try:
        vcov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(vcov)) or np.any(np.diag(vcov) <= 0):
        return None
    return vcov


def _exp_clipped(x: float) -> float:
    # an unidentified variance gives a huge log-scale SE; report an infinite
    # interval endpoint instead of overflowing
    return math.exp(x) if x < 709.0 else math.inf


def _natural_table(params, vcov, crossed, fixed_rho, cov_names, free_zeta):
    p = 2 + len(params.gamma)

    def se_of(i):
        return None if vcov is None else math.sqrt(vcov[i, i])

    rows = []

    def wald(name, i, point):
        se = se_of(i)
        if se is None:
            rows.append(NaturalRow(name, point, None, None, None))
        else:
            rows.append(NaturalRow(name, point, se,
                                   point - Z95 * se, point + Z95 * se))

    wald("beta0", 0, params.beta0)
    wald("beta1", 1, params.beta1)
    for k, name in enumerate(cov_names):
        wald(name, 2 + k, params.gamma[k])

    for name, lam, i in (("sigma2_f", params.lambda_f, p),
                         ("sigma2_t", params.lambda_t, p + 1)):
        var = math.exp(lam)
        se_lam = se_of(i)
        if se_lam is None:
            rows.append(NaturalRow(name, var, None, None, None))
        else:
            rows.append(NaturalRow(name, var, var * se_lam,
                                   _exp_clipped(lam - Z95 * se_lam),
                                   _exp_clipped(lam + Z95 * se_lam)))

    alpha = params.alpha
    if vcov is None:
        rows.append(NaturalRow("alpha", alpha, None, None, None))
    else:
        block = vcov[np.ix_([p, p + 1], [p, p + 1])]
        var_a = delta_var_alpha(block, include_covariance=crossed)
        se_a = math.sqrt(var_a)
        rows.append(NaturalRow("alpha", alpha, se_a,
                               alpha - Z95 * se_a, alpha + Z95 * se_a))

    if crossed:
        if not free_zeta:
            rows.append(NaturalRow("rho", fixed_rho, None, None, None,
                                   fixed=True))
        else:
            rho = params.rho
            se_z = se_of(p + 2)
            if se_z is None:
                rows.append(NaturalRow("rho", rho, None, None, None))
            else:
                rows.append(NaturalRow(
                    "rho", rho, (1.0 - rho * rho) * se_z,
                    math.tanh(params.zeta - Z95 * se_z),
                    math.tanh(params.zeta + Z95 * se_z)))

    for name, lam, i in (("icc_f", params.lambda_f, p),
                         ("icc_t", params.lambda_t, p + 1)):
        point = icc(math.exp(lam))
        se_lam = se_of(i)
        if se_lam is None:
            rows.append(NaturalRow(name, point, None, None, None))
        else:
            rows.append(NaturalRow(name, point,
                                   point * (1.0 - point) * se_lam,
                                   icc(_exp_clipped(lam - Z95 * se_lam)),
                                   icc(_exp_clipped(lam + Z95 * se_lam))))
    return tuple(rows)


def delta_var_alpha(vcov, include_covariance: bool = True) -> float:
    """Delta-method variance of alpha from the log-variance covariance.

    ``vcov`` is the 2x2 covariance of (lambda_f, lambda_t).  The nested
    design treats the two as independent, so callers pass
    ``include_covariance=False`` there and the cross term drops.
    """
    v = np.asarray(vcov, dtype=float)
    if v.shape != (2, 2):
        raise ValueError("expected the 2x2 covariance of (lambda_f, lambda_t)")
    out = 0.25 * v[0, 0] + 0.25 * v[1, 1]
    if include_covariance:
        out -= 0.5 * v[0, 1]
    if out < 0:
        raise ValueError(f"delta-method variance is negative ({out:.3e})")
    return float(out)


def alpha_from_variances(var_f: float, var_t: float) -> float:
    """Half the log variance ratio, log sigma_f - log sigma_t."""
    if var_f <= 0 or var_t <= 0:
        raise ValueError("variances must be positive")
    return 0.5 * (math.log(var_f) - math.log(var_t))


def icc(var_m: float) -> float:
    """Share of latent variance due to interviewers: v / (1 + v)."""
    if var_m < 0:
        raise ValueError("variance must be nonnegative")
    if math.isinf(var_m):
        return 1.0
    return var_m / (1.0 + var_m)


def mode_effect_probability_scale(params: ParameterVector,
                                  covariate_profile=()) -> float:
    """Mode effect on the probability scale at a covariate profile."""
    profile = tuple(covariate_profile)
    if len(profile) != len(params.gamma):
        raise ValueError(
            f"profile length {len(profile)} does not match "
            f"{len(params.gamma)} covariates"
        )
    x = params.beta0 + params.beta1 + sum(
        g * v for g, v in zip(params.gamma, profile))
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi) * params.beta1
