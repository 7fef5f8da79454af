"""Gaussian log-likelihood, maximum-likelihood fitting and Wald inference."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.stats import norm

from .kernels import (CovarianceSpec, DistanceSet, Form, PointSet, combine,
                      correlation_blocks, matern_dlogphi, variance_multiplier)
from .model import (TAU2_FLOOR, CovariateScaling, DataTable, ModelConfig, ObservationSet,
                    ParameterVector, from_unconstrained, to_unconstrained)

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-10
JITTER_MAX = 1e-6
PHI_BOUNDS = (1e-6, 1e5)      # multiples of the largest observed distance per kernel
VARIANCE_BOUNDS = (1e-10, 1e6)  # multiples of the outcome variance
HESSIAN_STEP = 1e-4
_PENALTY = 1e100


class SingularCovarianceError(np.linalg.LinAlgError):
    """Cholesky failed even after the largest diagonal jitter."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class OptimizationError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class InformationSingularError(np.linalg.LinAlgError):
    """Observed information is not positive definite."""


def cholesky_jittered(sigma: np.ndarray, theta=None):
    """Lower Cholesky factor of ``sigma``, adding diagonal jitter on failure.

    Jitter starts at 1e-10 * mean(diag) and grows tenfold up to
    1e-6 * mean(diag). Returns ``(L, jitter)``.
    """
    try:
        return linalg.cholesky(sigma, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(sigma)))
    if not np.isfinite(scale) or scale <= 0:
        raise SingularCovarianceError("covariance has non-positive diagonal", theta)
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        try:
            L = linalg.cholesky(sigma + jitter * np.eye(sigma.shape[0]), lower=True,
                                check_finite=False)
            return L, jitter
        except linalg.LinAlgError:
            rel *= 10.0
    raise SingularCovarianceError("covariance not positive definite after jitter", theta)


def _gaussian_loglik(L: np.ndarray, resid: np.ndarray) -> float:
    z = linalg.solve_triangular(L, resid, lower=True, check_finite=False)
    n = resid.shape[0]
    return float(-0.5 * n * LOG_2PI - np.sum(np.log(np.diag(L))) - 0.5 * z @ z)


def log_likelihood(theta: ParameterVector, data: ObservationSet, spec: CovarianceSpec) -> float:
    """Multivariate-normal log-likelihood of ``data`` at ``theta``.

    ``spec`` supplies the form, kappas and covariate order; its own
    sigma2/phi values are replaced by those in ``theta``.
    """
    if theta.q != data.q:
        raise ValueError(f"theta has {theta.q} coefficients, design has {data.q} columns")
    spec = spec.with_params(theta.sigma2, theta.phis)
    pts = data.points.select(spec.covariate_names)
    sigma = covariance_from_points(pts, spec, theta.tau2)
    L, _ = cholesky_jittered(sigma, theta)
    return _gaussian_loglik(L, data.outcome - data.design @ theta.beta)


def covariance_from_points(pts: PointSet, spec: CovarianceSpec, tau2: float) -> np.ndarray:
    dist = DistanceSet.between(pts, pts, spec)
    sigma = combine(correlation_blocks(dist, spec), spec)
    sigma[np.diag_indices_from(sigma)] += tau2
    return sigma


def information_criteria(loglik: float, k: int, n: int):
    """Return ``(aic, bic)``."""
    return -2.0 * loglik + 2.0 * k, -2.0 * loglik + k * math.log(n)


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``se`` is on the unconstrained scale (log for variances and scales);
    ``ci_lower``/``ci_upper`` are on the natural scale. ``estimated`` marks
    parameters the optimizer was free to move, ``at_bound`` those that
    ended on a box bound (their intervals collapse to the estimate).
    """

    config: ModelConfig
    theta_hat: ParameterVector
    names: list
    loglik: float
    aic: float
    bic: float
    k: int
    n: int
    converged: bool
    grad_inf: float
    n_evals: int
    restarts: int
    best_restart: int
    message: str
    estimated: np.ndarray
    at_bound: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    information: Optional[np.ndarray]
    information_ok: bool
    scaling: CovariateScaling
    jitter: float = 0.0
    restart_logliks: list = field(default_factory=list)

    @property
    def spec(self) -> CovarianceSpec:
        return self.config.spec.with_params(self.theta_hat.sigma2, self.theta_hat.phis)

    @property
    def estimates(self) -> np.ndarray:
        return self.theta_hat.as_array()

    def intervals(self) -> dict:
        return {n: (float(lo), float(hi))
                for n, lo, hi in zip(self.names, self.ci_lower, self.ci_upper)}

    def parameter_table(self) -> list:
        """Rows ``(name, estimate, lower, upper)`` for estimated parameters."""
        est = self.estimates
        return [(n, float(est[i]), float(self.ci_lower[i]), float(self.ci_upper[i]))
                for i, n in enumerate(self.names) if self.estimated[i]]


class _Problem:
    """Likelihood pieces for one dataset and one model config."""

    def __init__(self, data: ObservationSet, config: ModelConfig,
                 scaling: Optional[CovariateScaling] = None):
        if data.q != config.q:
            raise ValueError(f"design has {data.q} columns but config expects {config.q}")
        if data.n <= config.q:
            raise ValueError(f"need n > q (n={data.n}, q={config.q})")
        if np.linalg.matrix_rank(data.design) < data.q:
            raise ValueError("design matrix is not of full column rank")
        self.data = data
        self.config = config
        self.spec = config.spec
        self.scaling = scaling or CovariateScaling.from_data(data, config)
        self.points = self.scaling.apply(data.points.select(config.cov_covariate_names))
        self.dist = DistanceSet.between(self.points, self.points, self.spec)
        self.names = config.parameter_names
        self.q, self.p = config.q, config.p
        self.size = self.q + 3 + self.p
        self.n_evals = 0
        self._cache: dict = {}

        fixed = dict(config.options.fixed)
        unknown = set(fixed) - set(self.names)
        if unknown:
            raise ValueError(f"unknown fixed parameters {sorted(unknown)}; known: {self.names}")
        self.fixed_mask = np.array([n in fixed for n in self.names])
        self.fixed_natural = {self.names.index(n): float(v) for n, v in fixed.items()}
        self.beta_idx = np.arange(self.q)
        self.cov_idx = np.arange(self.q, self.size)
        self.free_beta = np.array([i for i in self.beta_idx if not self.fixed_mask[i]], dtype=int)

        ranges = [float(np.max(d)) if d.size else 0.0 for d in self.dist.matrices]
        self.ranges = [r if r > 0 else 1.0 for r in ranges]
        beta_ols, *_ = np.linalg.lstsq(data.design, data.outcome, rcond=None)
        resid = data.outcome - data.design @ beta_ols
        dof = data.n - data.q
        self.resid_var = float(resid @ resid / dof) if dof > 0 else float(np.var(resid))
        if not self.resid_var > 0:
            self.resid_var = 1.0
        self.beta_ols = beta_ols
        yvar = float(np.var(data.outcome)) or self.resid_var

        lo, hi = np.full(self.size, -np.inf), np.full(self.size, np.inf)
        s, t = self.q, self.size - 1
        lo[s], hi[s] = math.log(VARIANCE_BOUNDS[0] * yvar), math.log(VARIANCE_BOUNDS[1] * yvar)
        for j, r in enumerate(self.ranges):
            lo[s + 1 + j], hi[s + 1 + j] = math.log(PHI_BOUNDS[0] * r), math.log(PHI_BOUNDS[1] * r)
        lo[t], hi[t] = math.log(TAU2_FLOOR), math.log(VARIANCE_BOUNDS[1] * yvar)
        self.lower, self.upper = lo, hi

    # -- parameter plumbing -------------------------------------------------
    def theta(self, v: np.ndarray) -> ParameterVector:
        vals = from_unconstrained(v, self.config.layout)
        if not self.fixed_natural:
            return vals
        arr = vals.as_array()
        for i, x in self.fixed_natural.items():
            arr[i] = x
        q, p = self.q, self.p
        return ParameterVector(arr[:q], arr[q], arr[q + 1:q + 2 + p], arr[q + 2 + p])

    def fixed_unconstrained(self) -> dict:
        out = {}
        for i, x in self.fixed_natural.items():
            out[i] = x if i < self.q else math.log(max(x, TAU2_FLOOR))
        return out

    def initial(self) -> np.ndarray:
        v = np.empty(self.size)
        v[:self.q] = self.beta_ols
        v[self.q] = math.log(0.5 * self.resid_var)
        for j, r in enumerate(self.ranges):
            v[self.q + 1 + j] = math.log(0.5 * r)
        v[-1] = math.log(0.5 * self.resid_var)
        for i, x in self.fixed_unconstrained().items():
            v[i] = x
        return self.clip(v)

    def clip(self, v: np.ndarray) -> np.ndarray:
        out = np.clip(v, self.lower, self.upper)
        for i, x in self.fixed_unconstrained().items():
            out[i] = x
        return out

    # -- covariance ---------------------------------------------------------
    def _factor(self, sigma2: float, phis: np.ndarray, tau2: float):
        key = (sigma2, tuple(phis), tau2)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        spec = self.spec.with_params(sigma2, phis)
        blocks = correlation_blocks(self.dist, spec)
        signal = combine(blocks, spec)
        sigma = signal.copy()
        sigma[np.diag_indices_from(sigma)] += tau2
        theta = ParameterVector(np.zeros(self.q), sigma2, phis, tau2)
        L, jitter = cholesky_jittered(sigma, theta)
        entry = (L, jitter, blocks, signal, spec)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = entry
        return entry

    def loglik(self, v: np.ndarray) -> float:
        """Full log-likelihood at an unconstrained vector."""
        th = self.theta(v)
        self.n_evals += 1
        try:
            L = self._factor(th.sigma2, th.phis, th.tau2)[0]
        except SingularCovarianceError:
            return -_PENALTY
        return _gaussian_loglik(L, self.data.outcome - self.data.design @ th.beta)

    def profile(self, v: np.ndarray):
        """Log-likelihood maximised over the free coefficients; returns (ll, beta)."""
        th = self.theta(v)
        self.n_evals += 1
        try:
            L = self._factor(th.sigma2, th.phis, th.tau2)[0]
        except SingularCovarianceError:
            return -_PENALTY, th.beta
        beta = th.beta.copy()
        y = self.data.outcome.copy()
        fixed_b = [i for i in self.beta_idx if self.fixed_mask[i]]
        if fixed_b:
            y -= self.data.design[:, fixed_b] @ beta[fixed_b]
        yt = linalg.solve_triangular(L, y, lower=True, check_finite=False)
        if self.free_beta.size:
            Dt = linalg.solve_triangular(L, self.data.design[:, self.free_beta], lower=True,
                                         check_finite=False)
            Q, R = np.linalg.qr(Dt)
            b = linalg.solve_triangular(R, Q.T @ yt, check_finite=False)
            beta[self.free_beta] = b
            z = yt - Dt @ b
        else:
            z = yt
        n = y.shape[0]
        ll = float(-0.5 * n * LOG_2PI - np.sum(np.log(np.diag(L))) - 0.5 * z @ z)
        return ll, beta

    def profile_grad_analytic(self, v: np.ndarray, free_cov: np.ndarray) -> np.ndarray:
        """Gradient of the profile log-likelihood w.r.t. free covariance parameters."""
        th = self.theta(v)
        _, beta = self.profile(v)
        L, jitter, blocks, signal, spec = self._factor(th.sigma2, th.phis, th.tau2)
        n = L.shape[0]
        sigma_inv = linalg.cho_solve((L, True), np.eye(n), check_finite=False)
        alpha = sigma_inv @ (self.data.outcome - self.data.design @ beta)
        W = np.outer(alpha, alpha) - sigma_inv
        grad = np.empty(free_cov.size)
        for out_i, idx in enumerate(free_cov):
            j = idx - self.q
            if j == 0:
                dS_trace = float(np.sum(W * signal))
            elif j == self.size - self.q - 1:
                dS_trace = th.tau2 * float(np.trace(W))
            else:
                dS_trace = float(np.sum(W * self._dsignal(j - 1, blocks, spec)))
            grad[out_i] = 0.5 * dS_trace
        return grad

    def _dsignal(self, k: int, blocks, spec: CovarianceSpec) -> np.ndarray:
        kernel = spec.kernels[k]
        dR = matern_dlogphi(self.dist.matrices[k], kernel)
        spatial, rest = blocks[0], blocks[1:]
        form = spec.form
        if form is Form.STATIONARY or form is Form.FULL_SUM:
            out = dR
        elif form is Form.PRODUCT:
            out = dR.copy()
            for i, r in enumerate(blocks):
                if i != k:
                    out *= r
        elif k == 0:
            out = dR * sum(rest)
        else:
            out = spatial * dR
        return spec.sigma2 * out

    def at_bound(self, v: np.ndarray) -> np.ndarray:
        tol = 1e-6
        return ((v - self.lower) < tol) | ((self.upper - v) < tol)


def _central_gradient(f, x: np.ndarray, idx: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    g = np.zeros(idx.size)
    for out_i, i in enumerate(idx):
        h = rel_step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[out_i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def numeric_hessian(f, x: np.ndarray, idx: np.ndarray, step: float = HESSIAN_STEP) -> np.ndarray:
    """Central-difference Hessian of ``f`` over the coordinates ``idx``.

    Step for coordinate i is ``step * (1 + |x_i|)``.
    """
    m = idx.size
    H = np.zeros((m, m))
    f0 = f(x)
    h = np.array([step * (1.0 + abs(x[i])) for i in idx])

    def shifted(pairs):
        y = x.copy()
        for i, d in pairs:
            y[i] += d
        return f(y)

    for a in range(m):
        i = idx[a]
        fp, fm = shifted([(i, h[a])]), shifted([(i, -h[a])])
        H[a, a] = (fp - 2.0 * f0 + fm) / h[a] ** 2
        for b in range(a):
            j = idx[b]
            fpp = shifted([(i, h[a]), (j, h[b])])
            fpm = shifted([(i, h[a]), (j, -h[b])])
            fmp = shifted([(i, -h[a]), (j, h[b])])
            fmm = shifted([(i, -h[a]), (j, -h[b])])
            H[a, b] = H[b, a] = (fpp - fpm - fmp + fmm) / (4.0 * h[a] * h[b])
    return H


def _z(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    return float(norm.ppf(0.5 + level / 2.0))


def wald_intervals(fit: FitResult, level: float = 0.95, log_scale: Optional[bool] = None) -> dict:
    """Wald intervals ``{name: (lower, upper)}`` from the observed information.

    Intervals are built on the unconstrained scale and mapped back: the
    variance, scale and nugget intervals are exponentiated log-scale
    intervals unless ``log_scale`` is False, in which case a raw-scale
    interval with delta-method SE is returned.
    """
    if log_scale is None:
        log_scale = fit.config.options.log_scale_ci
    se = standard_errors(fit)
    z = _z(level)
    est = fit.estimates
    q = fit.config.q
    out = {}
    for i, name in enumerate(fit.names):
        s = se[i]
        if s == 0:
            lo = hi = est[i]
        elif i < q:
            lo, hi = est[i] - z * s, est[i] + z * s
        elif log_scale:
            centre = math.log(est[i]) if est[i] > 0 else -math.inf
            with np.errstate(over="ignore"):
                lo, hi = np.exp(centre - z * s), np.exp(centre + z * s)
            lo, hi = min(lo, est[i]), max(hi, est[i])
        else:
            lo, hi = est[i] - z * s * est[i], est[i] + z * s * est[i]
        out[name] = (float(lo), float(hi))
    return out


def standard_errors(fit: FitResult) -> np.ndarray:
    """Unconstrained-scale SEs; zero for fixed and at-bound parameters."""
    active = fit.estimated & ~fit.at_bound
    se = np.zeros(len(fit.names))
    if not active.any():
        return se
    info = fit.information
    if info is None or info.shape != (active.sum(),) * 2 or not np.all(np.isfinite(info)):
        raise InformationSingularError("observed information unavailable")
    try:
        c = linalg.cholesky(info, lower=True)
    except linalg.LinAlgError:
        raise InformationSingularError("observed information is not positive definite") from None
    cov = linalg.cho_solve((c, True), np.eye(info.shape[0]))
    se[active] = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return se


def _scale_search(prob: _Problem, v0: np.ndarray, profile: bool) -> np.ndarray:
    """Shrink all free scale parameters by a common factor 2**-k, k = 0..12.

    The half-range start can sit deep in a near-singular region when the
    nugget is small; this coarse 1-D search picks the best common shrinkage.
    """
    phi_idx = [prob.q + 1 + j for j in range(1 + prob.p) if not prob.fixed_mask[prob.q + 1 + j]]
    if not phi_idx:
        return v0
    best_v, best_ll = v0, -math.inf
    for k in range(13):
        v = v0.copy()
        v[phi_idx] -= k * math.log(2.0)
        v = prob.clip(v)
        ll = prob.profile(v)[0] if profile else prob.loglik(v)
        if ll > best_ll:
            best_v, best_ll = v, ll
    return best_v


def fit(data: ObservationSet, config: ModelConfig, init: Sequence[ParameterVector] = ()) -> FitResult:
    """Maximum-likelihood fit with restarts.

    Start 0 uses OLS coefficients, sigma2 = tau2 = half the OLS residual
    variance and every phi = half the largest observed distance of its
    kernel, shrunk by the best common power of two (see
    :func:`_scale_search`); later starts jitter the positive parameters multiplicatively by
    ``exp(N(0, jitter_sd^2))``. ``init`` adds caller-supplied starts. The
    best start by log-likelihood wins.

    Raises
    ------
    OptimizationError
        If no start produces a finite log-likelihood.
    """
    opts = config.options
    prob = _Problem(data, config)
    rng = np.random.default_rng(opts.seed)
    base = _scale_search(prob, prob.initial(), opts.profile_beta)
    starts = [base]
    pos = np.arange(prob.q, prob.size)
    for _ in range(opts.restarts - 1):
        v = base.copy()
        v[pos] += rng.normal(0.0, opts.jitter_sd, size=pos.size)
        starts.append(prob.clip(v))
    for th in init:
        starts.append(prob.clip(to_unconstrained(th)))

    profile = opts.profile_beta
    if profile:
        free = np.array([i for i in prob.cov_idx if not prob.fixed_mask[i]], dtype=int)
    else:
        free = np.array([i for i in range(prob.size) if not prob.fixed_mask[i]], dtype=int)
    bounds = [(prob.lower[i] if np.isfinite(prob.lower[i]) else None,
               prob.upper[i] if np.isfinite(prob.upper[i]) else None) for i in free]

    def full_vector(x, template):
        v = template.copy()
        v[free] = x
        return v

    results, diagnostics = [], []
    for r, v0 in enumerate(starts):
        template = v0.copy()

        def value(x):
            v = full_vector(x, template)
            return profile_or_full(v)

        def profile_or_full(v):
            return prob.profile(v)[0] if profile else prob.loglik(v)

        def objective(x):
            return -value(x)

        if opts.gradient == "analytic" and profile:
            def jac(x):
                v = full_vector(x, template)
                if prob.profile(v)[0] <= -_PENALTY:
                    return np.zeros(x.size)
                return -prob.profile_grad_analytic(v, free)
        else:
            def jac(x):
                return -_central_gradient(value, x, np.arange(x.size))

        if free.size == 0:
            x_opt, status = np.zeros(0), "nothing to optimise"
        else:
            res = optimize.minimize(objective, v0[free], jac=jac, method="L-BFGS-B",
                                    bounds=bounds,
                                    options={"maxiter": opts.max_iter, "ftol": opts.rel_tol,
                                             "gtol": opts.grad_tol * 1e-2})
            x_opt, status = res.x, str(res.message)
        v = full_vector(x_opt, template)
        if profile:
            ll, beta = prob.profile(v)
            v[:prob.q] = beta
        else:
            ll = prob.loglik(v)
        diagnostics.append({"restart": r, "loglik": ll, "message": status})
        if ll > -_PENALTY and np.isfinite(ll):
            results.append((ll, r, v, status))
        log.debug("restart %d: loglik=%.6f (%s)", r, ll, status)

    if not results:
        raise OptimizationError("all restarts failed", diagnostics)
    # highest loglik, earliest restart on ties
    ll, best, v, status = max(results, key=lambda t: (t[0], -t[1]))
    theta = prob.theta(v)

    estimated = ~prob.fixed_mask
    at_bound = prob.at_bound(v) & estimated
    at_bound[:prob.q] = False

    grad_idx = np.array([i for i in range(prob.size) if estimated[i]], dtype=int)
    g = _central_gradient(prob.loglik, v, grad_idx) if grad_idx.size else np.zeros(0)
    for a, i in enumerate(grad_idx):
        if (v[i] - prob.lower[i] < 1e-6 and g[a] < 0) or (prob.upper[i] - v[i] < 1e-6 and g[a] > 0):
            g[a] = 0.0
    grad_inf = float(np.max(np.abs(g))) if g.size else 0.0
    converged = bool(np.isfinite(ll) and grad_inf <= opts.grad_tol)

    active = np.flatnonzero(estimated & ~at_bound)
    info = -numeric_hessian(prob.loglik, v, active) if active.size else np.zeros((0, 0))

    k = int(estimated.sum())
    aic, bic = information_criteria(ll, k, data.n)
    jitter = prob._factor(theta.sigma2, theta.phis, theta.tau2)[1]
    result = FitResult(
        config=config, theta_hat=theta, names=list(prob.names), loglik=ll, aic=aic, bic=bic,
        k=k, n=data.n, converged=converged, grad_inf=grad_inf, n_evals=prob.n_evals,
        restarts=len(starts), best_restart=best, message=status, estimated=estimated,
        at_bound=at_bound, se=np.full(prob.size, np.nan), ci_lower=np.full(prob.size, np.nan),
        ci_upper=np.full(prob.size, np.nan), information=info, information_ok=False,
        scaling=prob.scaling, jitter=jitter,
        restart_logliks=[d["loglik"] for d in diagnostics])
    try:
        result.se = standard_errors(result)
        ci = wald_intervals(result, opts.level)
        result.ci_lower = np.array([ci[n][0] for n in result.names])
        result.ci_upper = np.array([ci[n][1] for n in result.names])
        result.information_ok = True
    except InformationSingularError as exc:
        log.info("no Wald intervals for %s: %s", config.label, exc)
    return result


# -- model comparison ---------------------------------------------------------

def _kernel_signature(config: ModelConfig) -> dict:
    return dict(config.spec.covariate_kernels)


def nested_start(small: FitResult, large: ModelConfig, data: ObservationSet) -> Optional[ParameterVector]:
    """Embed a smaller fitted model into ``large`` if it is a limiting case.

    Extra covariate kernels are sent to the upper scale bound, where their
    correlation is 1 to within about 1e-10. Supported embeddings: stationary
    into product or partial-sum, and product into a product with more
    covariates. Returns None when no embedding applies.
    """
    sc, lc = small.config, large
    ss, ls = sc.spec, lc.spec
    if ss.spatial_kernel.kappa != ls.spatial_kernel.kappa or ss.distance != ls.distance:
        return None
    if not set(sc.mean_covariate_names) <= set(lc.mean_covariate_names):
        return None
    s_k, l_k = _kernel_signature(sc), _kernel_signature(lc)
    if any(n not in l_k or l_k[n].kappa != k.kappa for n, k in s_k.items()):
        return None
    if any(n in sc.standardize and n not in lc.standardize for n in s_k):
        return None
    th = small.theta_hat
    if ss.form is Form.STATIONARY and ls.form is Form.PRODUCT:
        sigma2 = th.sigma2
    elif ss.form is Form.STATIONARY and ls.form is Form.PARTIAL_SUM:
        sigma2 = th.sigma2 / ls.p
    elif ss.form is Form.PRODUCT and ls.form is Form.PRODUCT:
        sigma2 = th.sigma2
    else:
        return None
    prob = _Problem(data, lc)
    phis = [th.phis[0]]
    small_phi = dict(zip(ss.covariate_names, th.phis[1:]))
    for j, name in enumerate(ls.covariate_names):
        phis.append(small_phi.get(name, math.exp(prob.upper[prob.q + 2 + j])))
    beta = np.zeros(lc.q)
    pos = {n: i for i, n in enumerate(lc.design_names)}
    for i, n in enumerate(sc.design_names):
        beta[pos[n]] = th.beta[i]
    return ParameterVector(beta, sigma2, np.array(phis), th.tau2)


@dataclass
class ComparisonRow:
    label: str
    loglik: float
    k: int
    aic: float
    bic: float
    converged: bool
    status: str
    fit: Optional[FitResult] = None


def compare(configs: Sequence[ModelConfig], table: DataTable) -> list:
    """Fit every config on the same table and rank by AIC, then BIC, then label.

    Smaller models are fitted first and, where a larger model nests them,
    their estimates seed an extra start of the larger fit. A failing member
    is reported in its row rather than raised.
    """
    if len(configs) < 2:
        raise ValueError("compare needs at least two model configs")
    order = sorted(range(len(configs)), key=lambda i: (configs[i].q + configs[i].p, i))
    fits: dict = {}
    rows: dict = {}
    for i in order:
        cfg = configs[i]
        try:
            data = table.to_observations(cfg)
            seeds = []
            for j, f in fits.items():
                emb = nested_start(f, cfg, data)
                if emb is not None:
                    seeds.append(emb)
            res = fit(data, cfg, init=seeds)
            fits[i] = res
            rows[i] = ComparisonRow(cfg.label, res.loglik, res.k, res.aic, res.bic,
                                    res.converged, "ok" if res.converged else "not converged", res)
        except Exception as exc:  # reported per row
            log.warning("fit of %s failed: %s", cfg.label, exc)
            rows[i] = ComparisonRow(cfg.label, math.nan, 0, math.nan, math.nan, False,
                                    f"error: {exc}")
    ok = [r for r in rows.values() if np.isfinite(r.aic)]
    bad = [r for r in rows.values() if not np.isfinite(r.aic)]
    ok.sort(key=lambda r: (r.aic, r.bic, r.label))
    bad.sort(key=lambda r: r.label)
    return ok + bad


def known_fit(data: ObservationSet, config: ModelConfig, theta: ParameterVector) -> FitResult:
    """Wrap known parameter values as a FitResult (for plug-in prediction).

    Nothing is estimated: intervals collapse to the values and k = 0.
    """
    if data.q != config.q:
        raise ValueError(f"design has {data.q} columns but config expects {config.q}")
    scaling = CovariateScaling.from_data(data, config)
    pts = scaling.apply(data.points.select(config.cov_covariate_names))
    scaled = replace(data, cov_covariates=pts.covariates, cov_names=pts.names)
    ll = log_likelihood(theta, scaled, config.spec)
    names = config.parameter_names
    size = len(names)
    arr = theta.as_array()
    aic, bic = information_criteria(ll, 0, data.n)
    return FitResult(
        config=config, theta_hat=theta, names=list(names), loglik=ll, aic=aic, bic=bic,
        k=0, n=data.n, converged=True, grad_inf=0.0, n_evals=1, restarts=0, best_restart=-1,
        message="known parameters", estimated=np.zeros(size, bool), at_bound=np.zeros(size, bool),
        se=np.zeros(size), ci_lower=arr.copy(), ci_upper=arr.copy(), information=None,
        information_ok=True, scaling=scaling, jitter=0.0)
