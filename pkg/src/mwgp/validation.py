"""Simulation oracles, cross-validation, metrics, and calibration.

Synthetic fields provide ground truth for recovery and coverage
studies.  Cross-validation holds observations (or whole instrument
tracks) out of refitted windows while keeping the gridded parameter
estimates fixed, mirroring how the mapped product would be scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .covariance import CovParams, SpaceTimePoint, as_point_array, wrap_dlon
from .errors import (
    EmptyInputError,
    FactorizationError,
    InputError,
    InvalidParameterError,
)
from .gaussian import (
    DEFAULT_OPTS,
    GaussianPredictive,
    OptimizerOptions,
    YearBlock,
    predict_gaussian,
)
from .student import (
    McOptions,
    StudentParams,
    StudentPredictive,
    predict_student,
    predictive_deviation_sample,
)
from .windows import (
    GridField,
    GridSpec,
    ModelVariant,
    ReferenceParams,
    WindowSpec,
    _predict_reference,
)


def simulate_field(params, locations, n_years: int, seed: int,
                   spatial: bool = False, start_year: int = 0) -> list[YearBlock]:
    """Independent yearly field draws plus nugget noise at fixed locations.

    The latent field is drawn through one Cholesky factor shared by all
    years (identical geometry per year).  The nugget follows the
    parameter type: Gaussian variance or scaled Student t.  Output is
    deterministic in the seed; draw order is latent first, nugget second,
    year by year.
    """
    if isinstance(params, StudentParams):
        cov, nu = params.cov, params.nu
    elif isinstance(params, CovParams):
        cov, nu = params, None
    else:
        raise InvalidParameterError(f"unsupported params type {type(params)!r}")
    if n_years < 1:
        raise InvalidParameterError(f"n_years must be >= 1, got {n_years}")
    pts = as_point_array(locations)
    m = pts.shape[0]
    from .covariance import cov_matrix

    K = cov_matrix(pts, cov, spatial)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"simulation covariance not PD: {exc}") from None
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(cov.sigma2)
    blocks = []
    for k in range(n_years):
        f = L @ rng.standard_normal(m)
        if nu is None:
            eps = sigma * rng.standard_normal(m)
        else:
            eps = sigma * rng.standard_t(nu, m)
        blocks.append(YearBlock(start_year + k, pts[:, 0].copy(), pts[:, 1].copy(),
                                pts[:, 2].copy(), f + eps))
    return blocks


def synthetic_float_blocks(params, n_floats: int, profiles_per_float: int,
                           n_years: int, seed: int,
                           lat_range=(-8.0, 8.0), lon_range=(-8.0, 8.0),
                           t_range=(0.0, 91.0), drift_deg: float = 0.4,
                           spatial: bool = False,
                           start_year: int = 0) -> list[YearBlock]:
    """Clustered drifting-instrument sampling with simulated values.

    Each float starts at a uniform position and random-walks between
    its successive profiles, so its observations are spatially
    clustered; profile times are evenly spread over ``t_range``.  The
    values come from a fresh field draw each year at that year's
    geometry.  Blocks carry source ids for track-level holdout.
    """
    if isinstance(params, StudentParams):
        cov, nu = params.cov, params.nu
    else:
        cov, nu = params, None
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(cov.sigma2)
    days = np.linspace(t_range[0], t_range[1], profiles_per_float)
    from .covariance import cov_matrix

    blocks = []
    for k in range(n_years):
        lats, lons, ts, sids = [], [], [], []
        for fl in range(n_floats):
            lat = rng.uniform(*lat_range)
            lon = rng.uniform(*lon_range)
            for d in days:
                lats.append(lat)
                lons.append(lon)
                ts.append(float(d))
                sids.append(f"float{fl:04d}")
                lat = float(np.clip(lat + drift_deg * rng.standard_normal(),
                                    -90.0, 90.0))
                lon = lon + drift_deg * rng.standard_normal()
        pts = np.column_stack([lats, lons, ts])
        K = cov_matrix(pts, cov, spatial)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(
                f"simulation covariance not PD: {exc}") from None
        m = pts.shape[0]
        f = L @ rng.standard_normal(m)
        eps = sigma * (rng.standard_t(nu, m) if nu is not None
                       else rng.standard_normal(m))
        blocks.append(YearBlock(start_year + k, pts[:, 0], pts[:, 1], pts[:, 2],
                                f + eps, np.array(sids)))
    return blocks


@dataclass(frozen=True)
class HeldOut:
    """One held-out observation with its position in the dataset."""

    year_pos: int
    obs_index: int
    year: int
    source_id: str | None
    lat: float
    lon: float
    day: float
    value: float


def _held_out(blocks, year_pos: int, obs_index: int) -> HeldOut:
    b = blocks[year_pos]
    sid = None if b.source_ids is None else str(b.source_ids[obs_index])
    return HeldOut(year_pos, obs_index, b.year, sid,
                   float(b.lat[obs_index]), float(b.lon[obs_index]),
                   float(b.t[obs_index]), float(b.values[obs_index]))


def loo_partition(blocks):
    """Leave-one-observation-out folds: one per observation.

    Yields (held-out observation, remaining blocks) with only that
    single observation removed from its year.
    """
    for year_pos, block in enumerate(blocks):
        for obs_index in range(block.m):
            keep = np.ones(block.m, dtype=bool)
            keep[obs_index] = False
            remaining = list(blocks)
            remaining[year_pos] = block.subset(keep)
            yield _held_out(blocks, year_pos, obs_index), remaining


def lofo_partition(blocks):
    """Leave-one-float-out folds: one per observation, track removed.

    For each held-out observation, every observation sharing its
    source id is removed from every year.  Requires source ids.
    """
    for block in blocks:
        if block.source_ids is None:
            raise InputError("track-level holdout requires source_ids")
    for year_pos, block in enumerate(blocks):
        for obs_index in range(block.m):
            sid = block.source_ids[obs_index]
            remaining = [b.subset(b.source_ids != sid) for b in blocks]
            yield _held_out(blocks, year_pos, obs_index), remaining


@dataclass(frozen=True)
class CVRecord:
    """One cross-validated prediction of a held-out observation."""

    year_pos: int
    obs_index: int
    year: int
    source_id: str | None
    lat: float
    lon: float
    day: float
    truth: float
    pred: GaussianPredictive | StudentPredictive
    variant_id: int
    cell: tuple[int, int]

    @property
    def pred_mean(self) -> float:
        if isinstance(self.pred, StudentPredictive):
            return self.pred.f_mean
        return self.pred.mean

    @property
    def error(self) -> float:
        return self.truth - self.pred_mean


@dataclass
class CVResult:
    """All fold records of one cross-validation run."""

    scheme: str
    variant_id: int
    records: list[CVRecord] = field(default_factory=list)
    n_skipped: int = 0
    n_failed: int = 0

    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.records])


def cv_fold_seed(seed: int, year_pos: int, obs_index: int) -> int:
    """Deterministic Monte Carlo seed for one cross-validation fold."""
    ss = np.random.SeedSequence([int(seed), int(year_pos), int(obs_index)])
    return int(ss.generate_state(1)[0])


def _usable_cells(field_: GridField):
    cells = [r for r in field_.ordered() if r.fit.params is not None]
    if not cells:
        return None
    lat = np.array([r.lat for r in cells])
    lon = np.array([r.lon for r in cells])
    flat = np.array([field_.grid.flat_index(r.i, r.j) for r in cells])
    return cells, lat, lon, flat


def nearest_cell_index(lat: float, lon: float, cell_lat, cell_lon, flat) -> int:
    """Index of the nearest cell in degree metric; ties to lower flat index."""
    d2 = (cell_lat - lat) ** 2 + wrap_dlon(cell_lon - lon) ** 2
    order = np.lexsort((flat, d2))
    return int(order[0])


def run_cv(data, grid: GridSpec, field_: GridField, variant: ModelVariant,
           spec: WindowSpec, scheme: str = "looo",
           opts: OptimizerOptions = DEFAULT_OPTS,
           eval_filter=None, radius_steps: float = 2.0) -> CVResult:
    """Score held-out observations with frozen per-cell parameters.

    Each observation is predicted from the window of its nearest
    fitted grid cell with that cell's cached parameters; the held-out
    observation (and, under the track scheme, its whole source) is
    removed from the window first.  Observations with no fitted cell
    within ``radius_steps`` grid steps are counted as skipped.
    """
    if scheme not in ("looo", "lofo"):
        raise InvalidParameterError(f"unknown cv scheme {scheme!r}")
    result = CVResult(scheme, variant.id)
    lookup = _usable_cells(field_)
    cap = radius_steps * max(grid.lat_step, grid.lon_step)
    if eval_filter is not None:
        f_lo, f_hi = eval_filter
    if scheme == "lofo":
        for block in data:
            if block.source_ids is None:
                raise InputError("track-level holdout requires source_ids")
    for year_pos, block in enumerate(data):
        for obs_index in range(block.m):
            o = _held_out(data, year_pos, obs_index)
            if eval_filter is not None and not (f_lo <= o.day <= f_hi):
                continue
            if lookup is None:
                result.n_skipped += 1
                continue
            cells, clat, clon, cflat = lookup
            ci = nearest_cell_index(o.lat, o.lon, clat, clon, cflat)
            cell = cells[ci]
            d = math.hypot(cell.lat - o.lat, float(wrap_dlon(cell.lon - o.lon)))
            if d > cap:
                result.n_skipped += 1
                continue
            center = SpaceTimePoint(cell.lat, cell.lon, grid.eval_time)
            target_block = data[year_pos]
            wmask = (
                (np.abs(target_block.lat - center.lat) <= spec.x_win)
                & (np.abs(wrap_dlon(target_block.lon - center.lon)) <= spec.x_win)
                & (np.abs(target_block.t - center.t) <= spec.t_win)
            )
            if scheme == "looo":
                wmask = wmask.copy()
                wmask[obs_index] = False
            else:
                wmask = wmask & (target_block.source_ids != o.source_id)
            remaining = target_block.subset(wmask)
            target = SpaceTimePoint(o.lat, o.lon, o.day)
            params = cell.fit.params
            try:
                if isinstance(params, ReferenceParams):
                    pred = _predict_reference(target, remaining, params)
                elif isinstance(params, StudentParams):
                    pred = predict_student(target, remaining, params,
                                           spatial=variant.spatial, opts=opts)
                else:
                    pred = predict_gaussian(target, remaining, params,
                                            spatial=variant.spatial, opts=opts)
            except Exception:
                result.n_failed += 1
                continue
            result.records.append(CVRecord(
                year_pos, obs_index, o.year, o.source_id, o.lat, o.lon,
                o.day, o.value, pred, variant.id, (cell.i, cell.j)))
    return result


@dataclass(frozen=True)
class MetricTable:
    """Point-prediction error summary in observation units."""

    rmse: float
    mdae: float
    q3ae: float
    n: int
    baseline_name: str | None = None
    improvement: dict | None = None


def point_metrics(cv: CVResult, baseline: CVResult | None = None,
                  baseline_name: str = "baseline") -> MetricTable:
    """RMSE, median and third-quartile absolute error of CV records.

    Quartiles use linear interpolation between order statistics.  With
    a baseline the percent improvement per metric is included.
    """
    errors = cv.errors()
    if errors.size == 0:
        raise EmptyInputError("no cross-validation records to summarize")
    abs_err = np.abs(errors)
    table = {
        "rmse": float(np.sqrt(np.mean(errors ** 2))),
        "mdae": float(np.quantile(abs_err, 0.5)),
        "q3ae": float(np.quantile(abs_err, 0.75)),
    }
    improvement = None
    name = None
    if baseline is not None:
        base = point_metrics(baseline)
        improvement = {
            key: 100.0 * (getattr(base, key) - table[key]) / getattr(base, key)
            for key in ("rmse", "mdae", "q3ae")
        }
        name = baseline_name
    return MetricTable(table["rmse"], table["mdae"], table["q3ae"],
                       int(errors.size), name, improvement)


QUANTILE_GRID_POINTS = 199


@dataclass
class CalibrationReport:
    """Normalized-residual diagnostics and per-level coverage table."""

    residuals: np.ndarray
    q_theory: np.ndarray
    q_delta: np.ndarray
    levels: tuple
    coverage: dict
    mean_length: dict
    median_length: dict
    n: int
    n_flagged: int


DEFAULT_LEVELS = (0.50, 0.68, 0.80, 0.90, 0.95, 0.99)


def calibration(cv: CVResult, levels=DEFAULT_LEVELS,
                mc: McOptions = McOptions()) -> CalibrationReport:
    """Standard-normal residual diagnostics of CV predictions.

    Gaussian predictions standardize directly; Student predictions map
    the Monte Carlo probability integral transform through the normal
    quantile function, reusing one deviation sample per record for the
    transform and every interval level (common random numbers).  Every
    zero-variance prediction is flagged; one that also misses the truth
    becomes an infinite residual, as does a degenerate transform.
    """
    if not cv.records:
        raise EmptyInputError("no cross-validation records to calibrate")
    levels = tuple(levels)
    for lv in levels:
        if not 0.0 < lv < 1.0:
            raise InvalidParameterError(f"confidence level {lv} outside (0, 1)")
    z_gauss = {lv: float(norm.ppf(0.5 + lv / 2.0)) for lv in levels}
    residuals = np.empty(len(cv.records))
    covered = {lv: np.zeros(len(cv.records), dtype=bool) for lv in levels}
    lengths = {lv: np.empty(len(cv.records)) for lv in levels}
    n_flagged = 0
    for k, rec in enumerate(cv.records):
        if isinstance(rec.pred, StudentPredictive):
            rec_mc = replace(mc, seed=cv_fold_seed(mc.seed, rec.year_pos,
                                                   rec.obs_index))
            dev = predictive_deviation_sample(rec.pred, rec_mc)
            pit = float(np.mean(rec.pred.f_mean + dev <= rec.truth))
            z = float(norm.ppf(pit))
            if not math.isfinite(z):
                n_flagged += 1
            for lv in levels:
                half = float(np.quantile(dev, 0.5 + lv / 2.0))
                covered[lv][k] = abs(rec.truth - rec.pred.f_mean) <= half
                lengths[lv][k] = 2.0 * half
        else:
            sd = math.sqrt(max(rec.pred.variance, 0.0))
            err = rec.truth - rec.pred.mean
            if sd > 0.0:
                z = err / sd
            else:
                z = 0.0 if err == 0.0 else math.copysign(math.inf, err)
                n_flagged += 1
            for lv in levels:
                covered[lv][k] = abs(err) <= z_gauss[lv] * sd
                lengths[lv][k] = 2.0 * z_gauss[lv] * sd
        residuals[k] = z
    finite = residuals[np.isfinite(residuals)]
    if finite.size == 0:
        raise EmptyInputError("no finite residuals to build a quantile curve")
    probs = np.arange(1, QUANTILE_GRID_POINTS + 1) / (QUANTILE_GRID_POINTS + 1)
    q_theory = norm.ppf(probs)
    q_sample = np.quantile(finite, probs)
    return CalibrationReport(
        residuals=np.sort(residuals),
        q_theory=q_theory,
        q_delta=q_sample - q_theory,
        levels=levels,
        coverage={lv: float(np.mean(covered[lv])) for lv in levels},
        mean_length={lv: float(np.mean(lengths[lv])) for lv in levels},
        median_length={lv: float(np.quantile(lengths[lv], 0.5)) for lv in levels},
        n=len(cv.records),
        n_flagged=n_flagged,
    )
