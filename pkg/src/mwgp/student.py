"""Laplace-approximated inference for the Student-t nugget model.

Same GP layer as the Gaussian model, but the observation noise is a
scaled Student-t, which makes the marginal likelihood intractable.
Per year block we find the posterior mode of the latent GP values by a
damped Newton iteration and use the Laplace approximation both for the
marginal likelihood and for prediction.

The t log-density is not concave in f, so the negative Hessian W of
the data term can go negative in the tails.  The Newton steps and the
predictive-variance correction use W floored at zero (which keeps the
inner system positive definite and makes heavily outlying observations
drop out of the variance correction); the likelihood's curvature term
uses the raw W, which is exactly the classic Laplace approximation and
is guaranteed valid at a strict local maximum.

All mode-dependent algebra tracks the pair (f, a = K^-1 f) so that no
solve against K alone — often near-singular for close points — is
ever performed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla
from scipy.optimize import minimize
from scipy.special import gammaln
from scipy.stats import t as t_dist

from .covariance import CovParams, cov_matrix, cross_cov_vector
from .errors import (
    InputError,
    InsufficientDataError,
    InsufficientVarianceError,
    InvalidParameterError,
    ModeFindingError,
)
from .gaussian import (
    DEFAULT_OPTS,
    FitReport,
    OptimizerOptions,
    YearBlock,
    chol_spd,
    fit_mle_gaussian,
)


@dataclass(frozen=True)
class StudentParams:
    """Covariance parameters plus the t-noise degrees of freedom.

    ``cov.sigma2`` is the square of the t scale (not the noise
    variance, which is sigma2 * nu / (nu - 2) when nu > 2).
    """

    cov: CovParams
    nu: float

    def __post_init__(self):
        if not (np.isfinite(self.nu) and self.nu > 1.0):
            raise InvalidParameterError(f"nu must exceed 1, got {self.nu}")


@dataclass(frozen=True)
class StudentPredictive:
    """Latent-mean predictive plus the noise law for a new observation.

    The predictive observation is f + scale * T with f ~ N(f_mean,
    f_var) and T a standard t with ``dof`` degrees of freedom.
    """

    f_mean: float
    f_var: float
    scale: float
    dof: float


@dataclass(frozen=True)
class McOptions:
    """Monte Carlo settings for predictive intervals and PIT values."""

    n_samples: int = 100_000
    seed: int = 0


@dataclass
class LaplaceState:
    """Converged mode-finding state for one year block."""

    f_hat: np.ndarray
    w: np.ndarray          # floored curvature, used by Newton / prediction
    w_raw: np.ndarray      # unfloored curvature, used by the likelihood
    a: np.ndarray          # K^-1 f_hat, tracked without solving against K
    psi: float             # data term + prior quadratic at the mode
    log_q: float           # Laplace marginal log-likelihood contribution
    grad_norm: float
    iterations: int
    start: str             # which start point won: "gauss" or "zero"


def nu_variance_factor(nu: float) -> float:
    """Variance of a unit-scale t relative to its squared scale (nu > 2)."""
    if nu <= 2.0:
        raise InvalidParameterError(f"t variance undefined for nu={nu}")
    return nu / (nu - 2.0)


def _t_log_const(sigma: float, nu: float) -> float:
    return (gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu)
            - 0.5 * math.log(nu * math.pi) - math.log(sigma))


def _t_loglik(resid: np.ndarray, sigma: float, nu: float) -> float:
    z2 = resid * resid / (nu * sigma * sigma)
    return resid.size * _t_log_const(sigma, nu) - 0.5 * (nu + 1.0) * float(
        np.sum(np.log1p(z2)))

def _t_grad(resid: np.ndarray, sigma: float, nu: float) -> np.ndarray:
    # d/df log t(y - f): (nu+1) r / (nu sigma^2 + r^2)
    return (nu + 1.0) * resid / (nu * sigma * sigma + resid * resid)


def _t_w_raw(resid: np.ndarray, sigma: float, nu: float) -> np.ndarray:
    # -d^2/df^2 log t(y - f); negative where |r| > sigma sqrt(nu)
    s2nu = nu * sigma * sigma
    r2 = resid * resid
    return (nu + 1.0) * (s2nu - r2) / (s2nu + r2) ** 2


def _newton(y: np.ndarray, K: np.ndarray, sigma: float, nu: float,
            f0: np.ndarray, a0: np.ndarray, opts: OptimizerOptions):
    """Damped Newton ascent on Psi(f) = log p(y|f) - f'K^-1 f / 2.

    Returns (f, a, psi, grad_norm, iterations, converged).  The pair
    (f, a) always satisfies f = K a, so Psi and its gradient need no
    solve against K.
    """
    m = y.size
    f, a = f0.copy(), a0.copy()
    psi = _t_loglik(y - f, sigma, nu) - 0.5 * float(f @ a)
    target = opts.mode_tol * m
    flat_steps = 0
    for it in range(opts.mode_max_iter):
        g = _t_grad(y - f, sigma, nu)
        grad = g - a
        gn = float(np.linalg.norm(grad))
        if gn <= target:
            return f, a, psi, gn, it, True
        w = np.maximum(_t_w_raw(y - f, sigma, nu), 0.0)
        sw = np.sqrt(w)
        B = np.eye(m) + sw[:, None] * K * sw[None, :]
        LB = sla.cholesky(B, lower=True, check_finite=False)
        b = w * f + g
        c = sla.cho_solve((LB, True), sw * (K @ b), check_finite=False)
        a_new = b - sw * c
        f_new = K @ a_new
        df, da = f_new - f, a_new - a
        step, improved = 1.0, False
        psi_full = None
        for _ in range(30):
            f_try = f + step * df
            a_try = a + step * da
            psi_try = _t_loglik(y - f_try, sigma, nu) - 0.5 * float(f_try @ a_try)
            if psi_full is None:
                psi_full = psi_try
            if psi_try > psi:
                f, a, psi = f_try, a_try, psi_try
                improved = True
                break
            step *= 0.5
        if improved:
            flat_steps = 0
            continue
        # Near the optimum the per-step gain drops below double precision
        # before the gradient target is met; the damped map is still a
        # contraction there, so take the full step when Psi is equal
        # within roundoff (a few times, never on a genuine decrease).
        if psi_full >= psi - 1e-12 * (1.0 + abs(psi)) and flat_steps < 5:
            f, a = f_new, a_new
            psi = max(psi, psi_full)
            flat_steps += 1
            continue
        break
    g = _t_grad(y - f, sigma, nu)
    gn = float(np.linalg.norm(g - a))
    return f, a, psi, gn, opts.mode_max_iter, gn <= opts.mode_accept_tol * m


def find_mode(block: YearBlock, params: StudentParams, spatial: bool = False,
              opts: OptimizerOptions = DEFAULT_OPTS) -> LaplaceState:
    """Posterior mode of the latent GP values for one year block.

    Starts from the Gaussian-limit smoother (variance-matched nugget),
    falling back to f = 0; among converged runs the one with higher
    Psi wins.  Raises ModeFindingError with per-start diagnostics if
    no run reaches the acceptance gradient norm of
    opts.mode_accept_tol * m.
    """
    if block.m == 0:
        raise InputError("find_mode needs at least one observation")
    y = block.values
    cov = params.cov
    sigma = math.sqrt(cov.sigma2)
    nu = params.nu
    K = cov_matrix(block.points, cov, spatial)
    m = block.m

    # Gaussian-limit start: kriging smoother with the t noise variance
    # (capped for nu near/below 2 where it blows up).
    ratio = nu / (nu - 2.0) if nu > 2.2 else 10.0
    s2 = cov.sigma2 * ratio
    L = chol_spd(K + s2 * np.eye(m), cov.phi, opts, block.year)
    a_gauss = sla.cho_solve((L, True), y, check_finite=False)
    f_gauss = K @ a_gauss

    attempts, diags = [], {}
    for name, f0, a0 in (("gauss", f_gauss, a_gauss),
                         ("zero", np.zeros(m), np.zeros(m))):
        f, a, psi, gn, it, ok = _newton(y, K, sigma, nu, f0, a0, opts)
        diags[name] = {"grad_norm": gn, "psi": psi, "iterations": it,
                       "converged": ok}
        if ok:
            attempts.append((psi, name, f, a, gn, it))
        if ok and name == "gauss":
            break  # primary start converged; no need for the fallback
    if not attempts:
        raise ModeFindingError("Newton mode search did not converge",
                               diagnostics=diags, year_index=block.year)
    psi, name, f, a, gn, it = max(attempts, key=lambda rec: rec[0])

    resid = y - f
    w_raw = _t_w_raw(resid, sigma, nu)
    w = np.maximum(w_raw, 0.0)
    sign, logdet = np.linalg.slogdet(np.eye(m) + K * w_raw[None, :])
    if sign <= 0.0:
        raise ModeFindingError(
            "indefinite Laplace curvature at the returned mode",
            diagnostics=diags, year_index=block.year)
    log_q = _t_loglik(resid, sigma, nu) - 0.5 * float(f @ a) - 0.5 * float(logdet)
    return LaplaceState(f_hat=f, w=w, w_raw=w_raw, a=a, psi=psi, log_q=log_q,
                        grad_norm=gn, iterations=it, start=name)


def laplace_loglik(blocks, params: StudentParams, spatial: bool = False,
                   opts: OptimizerOptions = DEFAULT_OPTS) -> float:
    """Laplace-approximate log marginal likelihood, summed over blocks.

    Empty blocks contribute exactly zero.
    """
    total = 0.0
    for b in blocks:
        if b.m == 0:
            continue
        total += find_mode(b, params, spatial, opts).log_q
    return total


def _encode_student(params: StudentParams, spatial: bool) -> np.ndarray:
    c = params.cov
    base = [math.log(c.phi), math.log(c.theta_lat), math.log(c.theta_lon)]
    if not spatial:
        base.append(math.log(c.theta_t))
    base.append(0.5 * math.log(c.sigma2))   # log sigma, not log sigma^2
    base.append(math.log(params.nu - 1.0))
    return np.array(base)


def _decode_student(x: np.ndarray, template: CovParams, spatial: bool) -> StudentParams:
    if spatial:
        phi, tlat, tlon = np.exp(x[:3])
        tt = template.theta_t
        sigma = math.exp(x[3])
        nu = 1.0 + math.exp(x[4])
    else:
        phi, tlat, tlon, tt = np.exp(x[:4])
        sigma = math.exp(x[4])
        nu = 1.0 + math.exp(x[5])
    return StudentParams(CovParams(phi, tlat, tlon, tt, sigma * sigma), nu)


def fit_mle_student(blocks, init: StudentParams | None = None,
                    opts: OptimizerOptions | None = None,
                    spatial: bool = False) -> tuple[StudentParams, FitReport]:
    """Maximize the Laplace-approximate likelihood.

    L-BFGS-B on (log phi, log ranges, log sigma, log(nu - 1)) with
    forward finite-difference gradients.  When no init is given the
    covariance initialization comes from a Gaussian-nugget fit, with
    the t scale chosen to variance-match the fitted Gaussian nugget at
    the initial nu.
    """
    opts = opts or DEFAULT_OPTS
    n_obs = sum(b.m for b in blocks)
    if n_obs < opts.min_obs:
        raise InsufficientDataError(
            f"{n_obs} observations < required minimum {opts.min_obs}")
    values = np.concatenate([b.values for b in blocks if b.m > 0])
    if float(np.ptp(values)) == 0.0:
        raise InsufficientVarianceError("all window values identical")
    if init is None:
        gfit, _ = fit_mle_gaussian(blocks, opts=opts, spatial=spatial)
        nu0 = opts.student_init_nu
        # A near-interpolating Gaussian fit (sigma2 ~ 0) would hand the
        # mode search an un-evaluable start; floor the initial scale at
        # a small fraction of the data variance and let the optimizer
        # shrink it again from an evaluable point.
        pooled = float(np.var(values, ddof=1))
        s2 = max(gfit.sigma2, 1e-3 * pooled) / nu_variance_factor(nu0)
        init = StudentParams(replace(gfit, sigma2=s2), nu0)

    failures = [0]
    best = {"fun": math.inf, "x": None}

    def objective(x):
        # InvalidParameterError: line-search excursions can under- or
        # overflow the exp transform (nu hits exactly 1, phi hits inf);
        # penalize instead of aborting so the optimizer backs off.
        try:
            params = _decode_student(x, init.cov, spatial)
            val = -laplace_loglik(blocks, params, spatial, opts)
        except (ModeFindingError, sla.LinAlgError, InvalidParameterError):
            failures[0] += 1
            return 1e12
        if val < best["fun"]:
            best["fun"] = val
            best["x"] = x.copy()
        return val

    x0 = _encode_student(init, spatial)
    res = minimize(
        objective, x0, method="L-BFGS-B",
        options={"maxiter": opts.max_iter, "gtol": opts.grad_tol,
                 "ftol": opts.step_tol, "eps": opts.fd_eps, "maxcor": 20},
    )
    if best["x"] is None:
        raise ModeFindingError("Student fit never found a usable iterate",
                               diagnostics={"n_failures": failures[0]})
    # The optimizer can terminate inside the overflow plateau (nu running
    # to the Gaussian limit flattens the likelihood until exp overflows);
    # fall back to the best finite iterate and flag non-convergence.
    stranded = res.fun > best["fun"]
    fitted = _decode_student(best["x"], init.cov, spatial)
    report = FitReport(
        loglik=-float(best["fun"]),
        grad_norm=float(np.max(np.abs(res.jac))),
        n_iter=int(res.nit),
        n_evals=int(res.nfev),
        converged=bool(res.success) and not stranded,
        message=("terminated beyond the finite range; best finite iterate "
                 "returned" if stranded else str(res.message)),
        n_obs=n_obs,
        n_mode_failures=failures[0],
    )
    return fitted, report


def predict_student(target, block: YearBlock, params: StudentParams,
                    spatial: bool = False,
                    opts: OptimizerOptions = DEFAULT_OPTS,
                    state: LaplaceState | None = None) -> StudentPredictive:
    """Laplace predictive for a new observation location.

    The latent mean is k*' K^-1 f_hat; the variance correction uses
    the floored curvature, so observations whose curvature was floored
    to zero drop out of it.  An empty block yields the prior.
    """
    cov = params.cov
    if block.m == 0:
        return StudentPredictive(0.0, cov.phi, math.sqrt(cov.sigma2), params.nu)
    if state is None:
        state = find_mode(block, params, spatial, opts)
    k_star = cross_cov_vector(target, block.points, cov, spatial)
    f_mean = float(k_star @ state.a)
    sw = np.sqrt(state.w)
    B = np.eye(block.m) + sw[:, None] * cov_matrix(block.points, cov, spatial) * sw[None, :]
    LB = sla.cholesky(B, lower=True, check_finite=False)
    v = sla.solve_triangular(LB, sw * k_star, lower=True, check_finite=False)
    f_var = cov.phi - float(v @ v)
    f_var = min(max(f_var, 0.0), cov.phi)
    return StudentPredictive(f_mean, f_var, math.sqrt(cov.sigma2), params.nu)


def predictive_deviation_sample(pred: StudentPredictive, mc: McOptions) -> np.ndarray:
    """Seeded draws of (observation - f_mean) under the predictive law.

    The t component uses inverse-CDF sampling so that runs sharing a
    seed are coupled across dof values (common random numbers).
    Draw order: latent normals first, then the t uniforms.
    """
    rng = np.random.default_rng(mc.seed)
    z = rng.standard_normal(mc.n_samples)
    u = rng.random(mc.n_samples)
    return math.sqrt(pred.f_var) * z + pred.scale * t_dist.ppf(u, pred.dof)


def student_interval(pred: StudentPredictive, alpha: float,
                     mc: McOptions = McOptions()) -> tuple[float, float]:
    """Central (1 - alpha) Monte Carlo predictive interval.

    Symmetric about f_mean by construction: the half-width is the
    (1 - alpha/2) sample quantile of the predictive deviation.
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if mc.n_samples < 10_000:
        raise InvalidParameterError(
            f"interval Monte Carlo needs >= 1e4 samples, got {mc.n_samples}")
    dev = predictive_deviation_sample(pred, mc)
    half = float(np.quantile(dev, 1.0 - alpha / 2.0))
    return pred.f_mean - half, pred.f_mean + half


def student_pit(value: float, pred: StudentPredictive,
                mc: McOptions = McOptions()) -> float:
    """Monte Carlo probability integral transform P(Y* <= value)."""
    dev = predictive_deviation_sample(pred, mc)
    return float(np.mean(pred.f_mean + dev <= value))
