"""Moving-window orchestration over a latitude/longitude grid.

A prediction grid is swept cell by cell.  At each cell the observations
inside a closed spatio-temporal window are gathered (per-year blocks
kept separate), covariance parameters are estimated for the requested
model variant, and per-year predictive distributions are produced at
the cell center.  Cells are independent tasks, so the sweep can run on
a process pool; results merge deterministically by cell index and are
bitwise identical across parallelism degrees for a fixed seed.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .covariance import (
    KM_PER_DEG,
    RG_DEFAULT,
    CovParams,
    RGCovConfig,
    SpaceTimePoint,
    rg_corr_matrix,
    rg_corr_vector,
    wrap_dlon,
    wrap_lon,
)
from .errors import (
    FactorizationError,
    InsufficientDataError,
    InsufficientVarianceError,
    InvalidParameterError,
    ModeFindingError,
)
from .gaussian import (
    DEFAULT_OPTS,
    FitReport,
    GaussianPredictive,
    OptimizerOptions,
    YearBlock,
    degenerate_variance,
    fit_mle_gaussian,
    gaussian_interval,
    predict_gaussian,
)
from .student import (
    McOptions,
    StudentParams,
    StudentPredictive,
    fit_mle_student,
    nu_variance_factor,
    predict_student,
    student_interval,
)

DAYS_PER_MONTH = 365.25 / 12.0


def month_halfwidth_days(months: int) -> float:
    """Half-width in days of a window spanning ``months`` calendar months."""
    if months <= 0:
        raise InvalidParameterError(f"months must be positive, got {months}")
    return months * DAYS_PER_MONTH / 2.0


@dataclass(frozen=True)
class WindowSpec:
    """Closed moving-window half-widths and the minimum fit size.

    ``x_win`` applies to latitude and longitude alike (degrees);
    ``t_win`` is in days within the year.  Boundary observations
    (lag exactly equal to the half-width) are included.
    """

    x_win: float = 10.0
    t_win: float = month_halfwidth_days(3)
    min_obs: int = 20

    def __post_init__(self):
        if not (np.isfinite(self.x_win) and self.x_win > 0.0):
            raise InvalidParameterError(f"x_win must be > 0, got {self.x_win}")
        if not (np.isfinite(self.t_win) and self.t_win >= 0.0):
            raise InvalidParameterError(f"t_win must be >= 0, got {self.t_win}")
        if self.min_obs < 1:
            raise InvalidParameterError(f"min_obs must be >= 1, got {self.min_obs}")


@dataclass(frozen=True)
class ModelVariant:
    """One row of the six-model study design.

    ``time_mode`` selects the covariance (purely spatial or
    space-time); ``nugget`` the microscale-variation law; ``months``
    the temporal window length; ``reference`` marks the fixed-shape
    baseline covariance that skips maximum likelihood entirely.
    """

    id: int
    time_mode: str
    nugget: str
    months: int
    reference: bool = False

    def __post_init__(self):
        if not 1 <= self.id <= 6:
            raise InvalidParameterError(f"variant id must be 1..6, got {self.id}")
        if self.time_mode not in ("spatial", "spatio-temporal"):
            raise InvalidParameterError(f"unknown time_mode {self.time_mode!r}")
        if self.nugget not in ("gaussian", "student"):
            raise InvalidParameterError(f"unknown nugget {self.nugget!r}")
        if self.months not in (1, 3):
            raise InvalidParameterError(f"months must be 1 or 3, got {self.months}")
        if self.reference and (self.time_mode != "spatial" or self.nugget != "gaussian"):
            raise InvalidParameterError("reference variant is spatial Gaussian only")

    @property
    def spatial(self) -> bool:
        return self.time_mode == "spatial"

    @property
    def mean_mode(self) -> str:
        """Mean-field treatment paired with the window length.

        One-month variants hold the mean fixed at its mid-window value;
        three-month variants use the time-varying mean reconstruction.
        """
        return "spatial" if self.months == 1 else "spatio-temporal"

    @property
    def t_win(self) -> float:
        return month_halfwidth_days(self.months)


VARIANTS: dict[int, ModelVariant] = {
    1: ModelVariant(1, "spatial", "gaussian", 1, reference=True),
    2: ModelVariant(2, "spatial", "gaussian", 1),
    3: ModelVariant(3, "spatial", "student", 1),
    4: ModelVariant(4, "spatial", "gaussian", 3),
    5: ModelVariant(5, "spatio-temporal", "gaussian", 3),
    6: ModelVariant(6, "spatio-temporal", "student", 3),
}


def get_variant(variant_id: int) -> ModelVariant:
    try:
        vid = int(variant_id)
        if vid != float(variant_id):  # refuse to truncate 2.5 to variant 2
            raise ValueError(variant_id)
        return VARIANTS[vid]
    except (KeyError, ValueError, TypeError):
        raise InvalidParameterError(f"unknown model variant {variant_id!r}") from None


def cell_key(lat: float, lon: float) -> tuple[float, float]:
    """Canonical dictionary key for a grid cell center."""
    return (round(float(lat), 6), round(float(wrap_lon(lon)), 6))


@dataclass(frozen=True)
class GridSpec:
    """Rectangular prediction grid of cell centers.

    ``mask`` lists cell centers to exclude from computation (for
    example land cells).  Cells poleward of ``lat_limit`` are skipped
    because the zonal geometry degenerates there.  ``eval_time`` and
    ``eval_year`` fix the space-time slice that gridded outputs report.
    """

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    lat_step: float = 1.0
    lon_step: float = 1.0
    eval_time: float = 45.5
    eval_year: int = 0
    mask: frozenset = frozenset()
    lat_limit: float = 80.0

    def __post_init__(self):
        if self.lat_step <= 0.0 or self.lon_step <= 0.0:
            raise InvalidParameterError("grid steps must be positive")
        if self.lat_max < self.lat_min or self.lon_max < self.lon_min:
            raise InvalidParameterError("grid ranges must be nonempty")
        if not (-90.0 <= self.lat_min and self.lat_max <= 90.0):
            raise InvalidParameterError("grid latitudes outside [-90, 90]")
        norm = frozenset(cell_key(a, b) for a, b in self.mask)
        object.__setattr__(self, "mask", norm)

    @property
    def lats(self) -> np.ndarray:
        n = int(math.floor((self.lat_max - self.lat_min) / self.lat_step + 1e-9)) + 1
        return self.lat_min + self.lat_step * np.arange(n)

    @property
    def lons(self) -> np.ndarray:
        n = int(math.floor((self.lon_max - self.lon_min) / self.lon_step + 1e-9)) + 1
        return self.lon_min + self.lon_step * np.arange(n)

    @property
    def n_lat(self) -> int:
        return self.lats.shape[0]

    @property
    def n_lon(self) -> int:
        return self.lons.shape[0]

    def flat_index(self, i: int, j: int) -> int:
        return i * self.n_lon + j

    def cells(self):
        """Yield (i, j, lat, lon) for every unmasked, in-bounds cell."""
        lats = self.lats
        lons = self.lons
        for i, lat in enumerate(lats):
            if abs(lat) > self.lat_limit:
                continue
            for j, lon in enumerate(lons):
                if cell_key(lat, lon) in self.mask:
                    continue
                yield i, j, float(lat), float(lon)


@dataclass(frozen=True)
class ReferenceParams:
    """Fixed-shape baseline covariance with a plug-in variance.

    The process variance is the windowed empirical variance deflated
    by (1 + noise/signal); the nugget is tied to it through the fixed
    noise-to-signal ratio.
    """

    phi_hat: float
    config: RGCovConfig = RG_DEFAULT

    def __post_init__(self):
        if not (np.isfinite(self.phi_hat) and self.phi_hat > 0.0):
            raise InvalidParameterError(f"phi_hat must be > 0, got {self.phi_hat}")

    @property
    def phi(self) -> float:
        return self.phi_hat

    @property
    def sigma2(self) -> float:
        return self.config.noise_signal_ratio * self.phi_hat

    @property
    def prior_var(self) -> float:
        return self.phi_hat * (1.0 + self.config.noise_signal_ratio)


@dataclass(frozen=True)
class CellPrediction:
    """Predictive summary for one year at one cell center."""

    year: int
    mean: float
    variance: float
    lower: float
    upper: float
    variance_ratio: float
    n_obs: int


@dataclass
class CellFit:
    """Outcome of fitting and predicting at a single grid cell."""

    status: str
    n_obs: int
    params: CovParams | StudentParams | ReferenceParams | None = None
    report: FitReport | None = None
    predictions: tuple[CellPrediction, ...] = ()
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def prediction_for(self, year: int) -> CellPrediction | None:
        for p in self.predictions:
            if p.year == year:
                return p
        return None


@dataclass
class CellResult:
    """A cell fit tagged with its grid position.

    Wall time is diagnostic only and excluded from equality so that
    determinism checks compare numeric payloads.
    """

    i: int
    j: int
    lat: float
    lon: float
    fit: CellFit
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class GridField:
    """Mapped field: one CellResult per computed cell.

    Masked or out-of-bounds cells are absent.  Failed cells are
    present with an explanatory status and carry no fabricated values.
    """

    grid: GridSpec
    variant_id: int
    cells: dict[tuple[int, int], CellResult] = field(default_factory=dict)

    @property
    def status_counts(self) -> Counter:
        return Counter(c.fit.status for c in self.cells.values())

    def ordered(self) -> list[CellResult]:
        return [self.cells[k] for k in sorted(self.cells,
                                              key=lambda ij: self.grid.flat_index(*ij))]


def select_window(data, center: SpaceTimePoint, spec: WindowSpec) -> list[YearBlock]:
    """Closed-window neighborhood selection, preserving year grouping.

    Longitude lags wrap across the antimeridian.  The time window is
    applied within each year separately (same calendar window every
    year).  Empty per-year subsets are kept so that downstream
    prediction can fall back to the prior for data-free years.
    """
    out = []
    for block in data:
        keep = (
            (np.abs(block.lat - center.lat) <= spec.x_win)
            & (np.abs(wrap_dlon(block.lon - center.lon)) <= spec.x_win)
            & (np.abs(block.t - center.t) <= spec.t_win)
        )
        out.append(block.subset(keep))
    return out


def pooled_window_variance(blocks) -> float:
    """Unbiased empirical variance pooled over all windowed values."""
    values = [b.values for b in blocks if b.m > 0]
    total = sum(v.shape[0] for v in values)
    if total < 2:
        raise InsufficientDataError(
            f"variance estimate needs >= 2 observations, got {total}")
    return float(np.var(np.concatenate(values), ddof=1))


def reference_phi_hat(blocks, config: RGCovConfig = RG_DEFAULT) -> float:
    """Plug-in process variance for the reference covariance.

    The windowed empirical variance estimates the total variance
    phi + sigma^2 = phi (1 + noise/signal), so the process part is
    recovered by deflating with the fixed ratio.
    """
    var = pooled_window_variance(blocks)
    values = np.concatenate([b.values for b in blocks if b.m > 0])
    if var <= 0.0 or degenerate_variance(values, var):
        raise InsufficientVarianceError(
            "windowed values are numerically constant; no usable "
            "plug-in variance")
    return var / (1.0 + config.noise_signal_ratio)


def _predict_reference(target: SpaceTimePoint, block: YearBlock,
                       params: ReferenceParams) -> GaussianPredictive:
    """Reference-covariance kriging for one year.

    Computed in correlation space (unit diagonal plus the fixed
    noise-to-signal nugget) so the predictive mean is exactly
    invariant to the plug-in variance; only the variance rescales.
    """
    cfg = params.config
    if block.m == 0:
        return GaussianPredictive(0.0, params.prior_var)
    R = rg_corr_matrix(block.lat, block.lon, cfg)
    A = R + cfg.noise_signal_ratio * np.eye(block.m)
    L = sla.cholesky(A, lower=True, check_finite=False)
    r_star = rg_corr_vector(target.lat, target.lon, block.lat, block.lon, cfg)
    alpha = sla.cho_solve((L, True), block.values, check_finite=False)
    mean = float(r_star @ alpha)
    w = sla.solve_triangular(L, r_star, lower=True, check_finite=False)
    corr_var = 1.0 + cfg.noise_signal_ratio - float(w @ w)
    var = params.phi_hat * min(max(corr_var, 0.0),
                               1.0 + cfg.noise_signal_ratio)
    return GaussianPredictive(mean, var)


def student_total_variance(pred: StudentPredictive) -> float:
    """Predictive variance of the observation under the Student nugget.

    Infinite when the fitted dof do not admit a second moment.
    """
    if pred.dof > 2.0:
        return pred.f_var + pred.scale ** 2 * nu_variance_factor(pred.dof)
    return math.inf


def variance_ratio(pred, params) -> float:
    """Post-data to pre-data predictive variance ratio in [0, 1].

    With no data the ratio is exactly 1.  For Student fits without a
    second moment the latent-variance ratio f_var/phi is reported
    instead, since both total variances are infinite with the same
    nugget contribution.
    """
    if isinstance(params, ReferenceParams):
        prior = params.prior_var
        ratio = pred.variance / prior
    elif isinstance(params, StudentParams):
        if params.nu > 2.0:
            nug = params.cov.sigma2 * nu_variance_factor(params.nu)
            ratio = (pred.f_var + nug) / (params.cov.phi + nug)
        else:
            ratio = pred.f_var / params.cov.phi
    elif isinstance(params, CovParams):
        ratio = pred.variance / (params.phi + params.sigma2)
    else:
        raise InvalidParameterError(f"unsupported params type {type(params)!r}")
    return min(max(float(ratio), 0.0), 1.0)


def correlation_at_lag(params: CovParams, dlat: float = 0.0, dlon: float = 0.0,
                       dt: float = 0.0, total_normalization: bool = True,
                       spatial: bool = False):
    """Fitted correlation at a space-time lag.

    By default normalized by the total variance phi + sigma^2, so the
    zero-lag value is the signal fraction phi/(phi+sigma2); with
    ``total_normalization`` off the process correlation exp(-d) is
    returned.  Accepts scalar or array lags.
    """
    d2 = (np.asarray(dlat, dtype=float) / params.theta_lat) ** 2 \
        + (np.asarray(dlon, dtype=float) / params.theta_lon) ** 2
    if not spatial:
        d2 = d2 + (np.asarray(dt, dtype=float) / params.theta_t) ** 2
    corr = np.exp(-np.sqrt(d2))
    if total_normalization:
        corr = corr * (params.phi / (params.phi + params.sigma2))
    if np.ndim(corr) == 0:
        return float(corr)
    return corr


def zonal_km_to_degrees(km: float, lat: float) -> float:
    """Zonal kilometers converted to longitude degrees at a latitude."""
    c = math.cos(math.radians(lat))
    if c <= 1e-12:  # cos(90 deg) is not exactly zero in floating point
        raise InvalidParameterError(f"no zonal extent at latitude {lat}")
    return km / (KM_PER_DEG * c)


def cell_year_seed(seed: int, flat_index: int, year: int) -> int:
    """Deterministic Monte Carlo seed for one (cell, year) pair.

    Derived with a seed-sequence spawn so streams are independent of
    scheduling and parallelism.  Years are folded into uint32 range.
    """
    ss = np.random.SeedSequence([int(seed), int(flat_index), int(year) & 0xFFFFFFFF])
    return int(ss.generate_state(1)[0])


_FIT_ERRORS = {
    InsufficientDataError: "insufficient_data",
    InsufficientVarianceError: "no_variance",
    FactorizationError: "factorization_failed",
    ModeFindingError: "mode_finding_failed",
}


def _status_for(exc: Exception) -> str:
    for etype, status in _FIT_ERRORS.items():
        if isinstance(exc, etype):
            return status
    return "error"


def fit_grid_point(data, center: SpaceTimePoint, variant: ModelVariant,
                   spec: WindowSpec, opts: OptimizerOptions = DEFAULT_OPTS,
                   mc: McOptions = McOptions(), alpha: float = 0.32,
                   seed: int = 0, flat_index: int = 0) -> CellFit:
    """Fit one grid cell and predict every year at the cell center.

    Failures are converted to statuses, never raised: a grid sweep
    must not abort because one window is degenerate.  Reference-variant
    cells skip maximum likelihood and use the fixed-shape covariance
    with the windowed plug-in variance.
    """
    windowed = select_window(data, center, spec)
    n_obs = sum(b.m for b in windowed)
    if n_obs < spec.min_obs:
        return CellFit("insufficient_data", n_obs,
                       message=f"{n_obs} observations < minimum {spec.min_obs}")
    fit_opts = replace(opts, min_obs=spec.min_obs)
    try:
        if variant.reference:
            params = ReferenceParams(reference_phi_hat(windowed))
            report = None
        elif variant.nugget == "gaussian":
            params, report = fit_mle_gaussian(windowed, opts=fit_opts,
                                              spatial=variant.spatial)
        else:
            params, report = fit_mle_student(windowed, opts=fit_opts,
                                             spatial=variant.spatial)
        preds = []
        for block in windowed:
            preds.append(_predict_cell_year(center, block, variant, params,
                                            fit_opts, mc, alpha, seed, flat_index))
    except Exception as exc:  # degenerate window; record, do not abort
        if isinstance(exc, InvalidParameterError) and not isinstance(
                exc, (InsufficientDataError, InsufficientVarianceError)):
            raise
        return CellFit(_status_for(exc), n_obs, message=str(exc))
    return CellFit("ok", n_obs, params=params, report=report,
                   predictions=tuple(preds))


def _predict_cell_year(center, block, variant, params, opts, mc, alpha,
                       seed, flat_index) -> CellPrediction:
    if variant.reference:
        pred = _predict_reference(center, block, params)
        lower, upper = gaussian_interval(pred, alpha)
        mean, var = pred.mean, pred.variance
    elif variant.nugget == "gaussian":
        pred = predict_gaussian(center, block, params,
                                spatial=variant.spatial, opts=opts)
        lower, upper = gaussian_interval(pred, alpha)
        mean, var = pred.mean, pred.variance
    else:
        pred = predict_student(center, block, params,
                               spatial=variant.spatial, opts=opts)
        block_mc = replace(mc, seed=cell_year_seed(seed, flat_index, block.year))
        lower, upper = student_interval(pred, alpha, block_mc)
        mean, var = pred.f_mean, student_total_variance(pred)
    return CellPrediction(block.year, mean, var, lower, upper,
                         variance_ratio(pred, params), block.m)


_PAYLOAD = None


def _init_worker(payload):
    global _PAYLOAD
    _PAYLOAD = payload


def _run_cell(task):
    """Fit one cell from the worker-global payload; never raises."""
    i, j, lat, lon, flat = task
    data, variant, spec, opts, mc, alpha, seed, eval_time = _PAYLOAD
    center = SpaceTimePoint(lat, lon, eval_time)
    start = time.perf_counter()
    try:
        fit = fit_grid_point(data, center, variant, spec, opts, mc,
                             alpha, seed, flat)
    except Exception as exc:
        fit = CellFit("error", 0, message=f"{type(exc).__name__}: {exc}")
    elapsed = time.perf_counter() - start
    return CellResult(i, j, lat, lon, fit, elapsed)


def map_grid(data, grid: GridSpec, variant: ModelVariant, spec: WindowSpec,
             opts: OptimizerOptions = DEFAULT_OPTS, mc: McOptions = McOptions(),
             alpha: float = 0.32, seed: int = 0, n_workers: int = 1,
             fallback_nearest: bool = False) -> GridField:
    """Sweep the grid, fitting every unmasked cell independently.

    The numeric output is bitwise independent of ``n_workers`` and of
    task scheduling: per-cell randomness is derived from (seed, flat
    cell index, year) and results merge by cell index.  Per-cell wall
    times are recorded for diagnostics only.
    """
    tasks = [(i, j, lat, lon, grid.flat_index(i, j))
             for i, j, lat, lon in grid.cells()]
    payload = (data, variant, spec, opts, mc, alpha, seed, grid.eval_time)
    if n_workers <= 1 or len(tasks) <= 1:
        _init_worker(payload)
        results = [_run_cell(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (4 * n_workers))
        with ProcessPoolExecutor(max_workers=n_workers,
                                 initializer=_init_worker,
                                 initargs=(payload,)) as ex:
            results = list(ex.map(_run_cell, tasks, chunksize=chunk))
    field_ = GridField(grid, variant.id,
                       {(r.i, r.j): r for r in results})
    if fallback_nearest:
        _apply_nearest_fallback(field_, data, variant, spec, opts, mc,
                                alpha, seed)
    return field_


def _apply_nearest_fallback(field_: GridField, data, variant, spec, opts,
                            mc, alpha, seed) -> None:
    """Borrow parameters from the nearest fitted cell for failed cells.

    Predictions are recomputed with the donor's parameters and the
    failed cell's own window; no refit is attempted.  Ties break to
    the lower flat index.  Cells skipped for lack of data stay skipped.
    """
    donors = [r for r in field_.ordered() if r.fit.ok]
    if not donors:
        return
    for res in field_.ordered():
        if res.fit.ok or res.fit.status == "insufficient_data":
            continue
        best = min(
            donors,
            key=lambda d: ((d.lat - res.lat) ** 2
                           + wrap_dlon(d.lon - res.lon) ** 2,
                           field_.grid.flat_index(d.i, d.j)),
        )
        center = SpaceTimePoint(res.lat, res.lon, field_.grid.eval_time)
        windowed = select_window(data, center, spec)
        flat = field_.grid.flat_index(res.i, res.j)
        try:
            preds = tuple(
                _predict_cell_year(center, block, variant, best.fit.params,
                                   opts, mc, alpha, seed, flat)
                for block in windowed
            )
        except Exception as exc:
            res.fit.message += f"; fallback failed: {exc}"
            continue
        res.fit = CellFit(
            "fallback", res.fit.n_obs, params=best.fit.params,
            report=best.fit.report, predictions=preds,
            message=f"parameters borrowed from cell ({best.i}, {best.j})")
