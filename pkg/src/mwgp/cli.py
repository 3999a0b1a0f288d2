"""Command-line front end for the moving-window mapping pipeline.

Subcommands: ``simulate`` (synthetic datasets), ``mean`` (mean-field
estimation), ``map`` (gridded fields), ``cv`` (cross-validated
metrics and calibration), ``calibrate`` (re-derive calibration from
stored CV records), ``lagmaps`` (fitted-correlation maps at fixed
lags).  Configuration comes from a key=value file plus flag
overrides; flags win.  Every run writes a JSON manifest with the
configuration, its hash, seeds, and library versions.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .covariance import CovParams
from .errors import InputError, MappingError
from .gaussian import DEFAULT_OPTS, GaussianPredictive
from .ingest import (
    FLOAT_FMT,
    MeanFieldConfig,
    apply_filters,
    estimate_mean_field,
    load_mask,
    parse_profiles,
    profiles_to_level,
    read_mean_field,
    records_to_blocks,
    subtract_mean,
    write_mean_field,
    write_mean_field_gridded,
    write_profiles,
    ProfileRecord,
)
from .student import McOptions, StudentParams, StudentPredictive
from .validation import (
    CVRecord,
    CVResult,
    calibration,
    point_metrics,
    run_cv,
    simulate_field,
    synthetic_float_blocks,
)
from .windows import (
    GridSpec,
    ReferenceParams,
    WindowSpec,
    correlation_at_lag,
    get_variant,
    map_grid,
    month_halfwidth_days,
    zonal_km_to_degrees,
)

THREADS_ENV = "MWGP_THREADS"


@dataclass
class RunConfig:
    """Flat key=value configuration for every subcommand.

    Defaults reproduce the reference setup: 1-degree grid, 20-degree
    moving window, variant 5 (3-month spatio-temporal Gaussian),
    pressure 300 db, mid-February evaluation time.
    """

    # data selection and paths
    pressure: float = 300.0
    variant: int = 5
    profiles: str | None = None
    mean: str | None = None
    mask: str | None = None
    out: str = "out"
    records: str | None = None
    params_dir: str | None = None
    # grid
    lat_min: float = -79.5
    lat_max: float = 79.5
    lon_min: float = -179.5
    lon_max: float = 179.5
    lat_step: float = 1.0
    lon_step: float = 1.0
    eval_time: float = 45.5
    eval_year: int = 0
    # moving window
    x_win: float = 10.0
    t_win: float | None = None
    min_obs: int = 20
    # ingest-time day filter (closed interval, days within year)
    day_min: float | None = None
    day_max: float | None = None
    # optimizer
    max_iter: int = 200
    grad_tol: float = 1e-6
    # intervals and Monte Carlo
    alpha: float = 0.32
    mc_samples: int = 100_000
    levels: str = "0.5,0.68,0.8,0.9,0.95,0.99"
    # mean field
    n_neighbors: int = 300
    weight_scale_km: float = 500.0
    n_harmonics: int = 6
    # cross-validation
    scheme: str = "looo"
    cv_day_min: float | None = None
    cv_day_max: float | None = None
    radius_steps: float = 2.0
    baseline_variant: int = 0
    # lag maps (0 km / 0 days skips that map)
    lag_zonal_km: float = 800.0
    lag_meridional_km: float = 800.0
    lag_days: float = 10.0
    lag_normalization: str = "total"
    # synthetic data
    sim_m: int = 150
    sim_years: int = 4
    sim_floats: int = 0
    sim_profiles_per_float: int = 9
    sim_phi: float = 1.0
    sim_theta_lat: float = 3.0
    sim_theta_lon: float = 5.0
    sim_theta_t: float = 5.0
    sim_sigma2: float = 0.3
    sim_nu: float = 0.0
    sim_lat_min: float = -8.0
    sim_lat_max: float = 8.0
    sim_lon_min: float = -8.0
    sim_lon_max: float = 8.0
    sim_day_min: float = 0.0
    sim_day_max: float = 91.0
    sim_start_year: int = 0
    # execution
    seed: int = 0
    threads: int | None = None
    fallback_nearest: bool = False
    write_binary: bool = False

    def resolved_t_win(self, warn=True) -> float:
        """Window half-width in days, defaulting to the variant's months."""
        default = month_halfwidth_days(get_variant(self.variant).months)
        if self.t_win is None:
            return default
        if warn and abs(self.t_win - default) > 1e-9:
            print(f"warning: t_win {self.t_win} overrides the variant "
                  f"{self.variant} default {default}", file=sys.stderr)
        return self.t_win

    def resolved_threads(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise InputError(
                    f"{THREADS_ENV} must be an integer, got {env!r}") from None
        return 1

    def level_list(self) -> tuple:
        try:
            out = tuple(float(s) for s in self.levels.split(",") if s.strip())
        except ValueError:
            raise InputError(f"cannot parse levels {self.levels!r}") from None
        if not out:
            raise InputError("levels is empty")
        return out

    def grid_spec(self, mask=frozenset()) -> GridSpec:
        return GridSpec(self.lat_min, self.lat_max, self.lon_min, self.lon_max,
                        self.lat_step, self.lon_step, self.eval_time,
                        self.eval_year, mask)

    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.x_win, self.resolved_t_win(), self.min_obs)

    def optimizer_options(self):
        return replace(DEFAULT_OPTS, max_iter=self.max_iter,
                       grad_tol=self.grad_tol, min_obs=self.min_obs)

    def mc_options(self) -> McOptions:
        return McOptions(self.mc_samples, self.seed)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_OPTIONAL_FLOATS = {"t_win", "day_min", "day_max", "cv_day_min", "cv_day_max"}
_OPTIONAL_INTS = {"threads"}
_OPTIONAL_STRS = {"profiles", "mean", "mask", "records", "params_dir"}
_BOOLS = {"fallback_nearest", "write_binary"}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise InputError(f"unknown config key {key!r}")
    text = raw.strip()
    if key in _OPTIONAL_STRS:
        return text or None
    if text.lower() in ("none", "") and (key in _OPTIONAL_FLOATS
                                         or key in _OPTIONAL_INTS):
        return None
    try:
        if key in _BOOLS:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if key in _OPTIONAL_FLOATS:
            return float(text)
        if key in _OPTIONAL_INTS:
            return int(text)
        target = type(getattr(RunConfig(), key))
        if target is bool:
            return text.lower() in ("1", "true", "yes", "on")
        return target(text)
    except ValueError:
        raise InputError(f"bad value for config key {key}: {raw!r}") from None


def parse_config_file(path) -> dict:
    """key=value lines; # starts a comment; blank lines ignored."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise InputError(
                    f"{path}:{line_number}: expected key=value, got {text!r}")
            key, _, value = text.partition("=")
            out[key.strip()] = _coerce(key.strip(), value)
    return out


def build_config(args) -> RunConfig:
    """Defaults, then the config file, then flags (flags win)."""
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for key, value in (args.set or {}).items():
        values[key] = value
    for flag in ("threads", "seed", "variant", "pressure", "scheme", "out",
                 "profiles", "mean", "mask", "records", "params_dir"):
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[flag] = flag_value
    cfg = RunConfig(**values)
    get_variant(cfg.variant)
    if not 0.0 < cfg.alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {cfg.alpha}")
    if cfg.scheme not in ("looo", "lofo"):
        raise InputError(f"scheme must be looo or lofo, got {cfg.scheme!r}")
    return cfg


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: RunConfig) -> str:
    text = json.dumps(config_dict(cfg), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, command: str, outputs, extra=None) -> str:
    manifest = {
        "command": command,
        "package_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": __import__("scipy").__version__,
        "config": config_dict(cfg),
        "config_hash": config_hash(cfg),
        "inputs": {},
        "outputs": sorted(outputs),
    }
    for key in ("profiles", "mean", "mask", "records"):
        path = getattr(cfg, key)
        if path and os.path.exists(path):
            manifest["inputs"][path] = _file_hash(path)
    if extra:
        manifest.update(extra)
    path = os.path.join(cfg.out, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _fmt(value: float) -> str:
    return FLOAT_FMT % value


def write_grid_csv(path, rows) -> None:
    """lat,lon,value rows at 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lat", "lon", "value"])
        for lat, lon, value in rows:
            writer.writerow([_fmt(lat), _fmt(lon), _fmt(value)])


def read_grid_csv(path):
    """Rows of a lat,lon,value grid file, in file order."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["lat", "lon", "value"]:
            raise InputError(f"{path}: expected header lat,lon,value")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((float(row[0]), float(row[1]), float(row[2])))
    return rows


def write_grid_binary(path, grid: GridSpec, values: dict) -> None:
    """Row-major little-endian float64 full-grid dump plus a sidecar.

    Absent cells are NaN.  The sidecar documents the layout so the
    file is self-describing.
    """
    arr = np.full((grid.n_lat, grid.n_lon), np.nan)
    for (i, j), value in values.items():
        arr[i, j] = value
    with open(path, "wb") as fh:
        fh.write(arr.astype("<f8").tobytes())
    with open(f"{path}.txt", "w", encoding="utf-8") as fh:
        fh.write(f"dtype=<f8\norder=row-major\nn_lat={grid.n_lat}\n"
                 f"n_lon={grid.n_lon}\nlat_min={_fmt(grid.lat_min)}\n"
                 f"lon_min={_fmt(grid.lon_min)}\nlat_step={_fmt(grid.lat_step)}\n"
                 f"lon_step={_fmt(grid.lon_step)}\n")


def _level_obs_to_profiles(blocks, pressure: float) -> list:
    records = []
    for block in blocks:
        for k in range(block.m):
            sid = (str(block.source_ids[k]) if block.source_ids is not None
                   else f"obs{len(records):07d}")
            records.append(ProfileRecord(
                sid, float(block.lat[k]), float(block.lon[k]), int(block.year),
                float(block.t[k]), ((pressure, float(block.values[k])),)))
    return records


def cmd_simulate(cfg: RunConfig) -> int:
    """Write a synthetic single-level profile dataset."""
    os.makedirs(cfg.out, exist_ok=True)
    out_path = os.path.join(cfg.out, "profiles.csv")
    if cfg.sim_years == 0:
        write_profiles([], out_path)
        write_manifest(cfg, "simulate", ["profiles.csv"])
        return 0
    cov = CovParams(cfg.sim_phi, cfg.sim_theta_lat, cfg.sim_theta_lon,
                    cfg.sim_theta_t, cfg.sim_sigma2)
    params = StudentParams(cov, cfg.sim_nu) if cfg.sim_nu > 1.0 else cov
    field_seed = int(np.random.SeedSequence([cfg.seed, 202]).generate_state(1)[0])
    if cfg.sim_floats > 0:
        blocks = synthetic_float_blocks(
            params, cfg.sim_floats, cfg.sim_profiles_per_float, cfg.sim_years,
            field_seed, (cfg.sim_lat_min, cfg.sim_lat_max),
            (cfg.sim_lon_min, cfg.sim_lon_max),
            (cfg.sim_day_min, cfg.sim_day_max),
            start_year=cfg.sim_start_year)
    else:
        loc_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 101]))
        locs = np.column_stack([
            loc_rng.uniform(cfg.sim_lat_min, cfg.sim_lat_max, cfg.sim_m),
            loc_rng.uniform(cfg.sim_lon_min, cfg.sim_lon_max, cfg.sim_m),
            loc_rng.uniform(cfg.sim_day_min, cfg.sim_day_max, cfg.sim_m),
        ])
        blocks = simulate_field(params, locs, cfg.sim_years, field_seed,
                                start_year=cfg.sim_start_year)
    write_profiles(_level_obs_to_profiles(blocks, cfg.pressure), out_path)
    write_manifest(cfg, "simulate", ["profiles.csv"])
    return 0


def _load_level_obs(cfg: RunConfig):
    if not cfg.profiles:
        raise InputError("profiles path is required (profiles=... or --profiles)")
    records = parse_profiles(cfg.profiles)
    mask = load_mask(cfg.mask) if cfg.mask else frozenset()
    window = None
    if cfg.day_min is not None or cfg.day_max is not None:
        window = (cfg.day_min if cfg.day_min is not None else -math.inf,
                  cfg.day_max if cfg.day_max is not None else math.inf)
    records = apply_filters(records, window, mask,
                            cell_size=max(cfg.lat_step, cfg.lon_step))
    return profiles_to_level(records, cfg.pressure), mask


def _mean_grid(path, cfg: RunConfig) -> GridSpec:
    """Grid geometry implied by a mean-field file's own cell centers.

    The mean field may live on a different (usually larger) grid than
    the prediction grid, so its geometry comes from the file.
    """
    lats, lons = set(), set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            lats.add(float(row[0]))
            lons.add(float(row[1]))
    if not lats:
        raise InputError(f"{path}: empty mean-field file")
    la, lo = sorted(lats), sorted(lons)
    lat_step = float(min(np.diff(la))) if len(la) > 1 else cfg.lat_step
    lon_step = float(min(np.diff(lo))) if len(lo) > 1 else cfg.lon_step
    return GridSpec(la[0], la[-1], lo[0], lo[-1], lat_step, lon_step,
                    cfg.eval_time, cfg.eval_year)


def _load_blocks(cfg: RunConfig, variant):
    """Parse, filter, interpolate, and residualize the input profiles."""
    obs, mask = _load_level_obs(cfg)
    n_excluded = 0
    if cfg.mean:
        mean = read_mean_field(cfg.mean, _mean_grid(cfg.mean, cfg))
        blocks, n_excluded = subtract_mean(obs, mean, variant.mean_mode,
                                           cfg.eval_time)
    else:
        blocks = records_to_blocks(obs)
    return blocks, mask, n_excluded


def _check_eval_year(cfg: RunConfig, blocks) -> None:
    years = [b.year for b in blocks]
    if blocks and cfg.eval_year not in years:
        raise InputError(
            f"eval_year {cfg.eval_year} not among data years {sorted(years)}")


def _param_value(params, name: str):
    if isinstance(params, ReferenceParams):
        return {"phi": params.phi, "sigma2": params.sigma2}.get(name)
    cov = params.cov if isinstance(params, StudentParams) else params
    if name == "nu":
        return params.nu if isinstance(params, StudentParams) else None
    return getattr(cov, name, None)


def cmd_map(cfg: RunConfig) -> int:
    """Fit every grid cell and write the gridded output files."""
    variant = get_variant(cfg.variant)
    blocks, mask, n_excluded = _load_blocks(cfg, variant)
    _check_eval_year(cfg, blocks)
    grid = cfg.grid_spec(mask)
    start = time.perf_counter()
    field_ = map_grid(blocks, grid, variant, cfg.window_spec(),
                      cfg.optimizer_options(), cfg.mc_options(), cfg.alpha,
                      cfg.seed, cfg.resolved_threads(), cfg.fallback_nearest)
    wall = time.perf_counter() - start
    os.makedirs(cfg.out, exist_ok=True)

    grids = {"prediction": {}, "variance": {}, "variance_ratio": {},
             "interval_lower": {}, "interval_upper": {}}
    param_grids: dict[str, dict] = {}
    statuses = {}
    wall_times = {}
    for res in field_.ordered():
        key = (res.i, res.j)
        statuses[f"{res.i},{res.j}"] = res.fit.status
        wall_times[f"{res.i},{res.j}"] = res.wall_time
        if res.fit.params is None:
            continue
        for name in ("phi", "theta_lat", "theta_lon", "theta_t", "sigma2", "nu"):
            if name == "theta_t" and variant.spatial:
                continue
            value = _param_value(res.fit.params, name)
            if value is not None:
                param_grids.setdefault(name, {})[key] = value
        pred = res.fit.prediction_for(grid.eval_year)
        if pred is None:
            continue
        grids["prediction"][key] = pred.mean
        grids["variance"][key] = pred.variance
        grids["variance_ratio"][key] = pred.variance_ratio
        grids["interval_lower"][key] = pred.lower
        grids["interval_upper"][key] = pred.upper

    outputs = []
    lats, lons = grid.lats, grid.lons

    def rows_of(values: dict):
        for (i, j) in sorted(values, key=lambda ij: grid.flat_index(*ij)):
            yield lats[i], lons[j], values[(i, j)]

    for name, values in list(grids.items()) + [
            (f"param_{p}", v) for p, v in sorted(param_grids.items())]:
        path = os.path.join(cfg.out, f"{name}.csv")
        write_grid_csv(path, rows_of(values))
        outputs.append(f"{name}.csv")
        if cfg.write_binary:
            write_grid_binary(os.path.join(cfg.out, f"{name}.bin"), grid, values)
            outputs += [f"{name}.bin", f"{name}.bin.txt"]

    status_path = os.path.join(cfg.out, "status.csv")
    with open(status_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lat", "lon", "status"])
        for res in field_.ordered():
            writer.writerow([_fmt(res.lat), _fmt(res.lon), res.fit.status])
    outputs.append("status.csv")

    write_manifest(cfg, "map", outputs, extra={
        "statuses": statuses,
        "status_counts": dict(field_.status_counts),
        "n_excluded_by_mean": n_excluded,
        "wall_time_s": wall,
        "cell_wall_times_s": wall_times,
    })
    return 0


def cmd_mean(cfg: RunConfig) -> int:
    """Estimate the mean field and write it in both formats."""
    obs, mask = _load_level_obs(cfg)
    mean = estimate_mean_field(
        obs, cfg.grid_spec(mask),
        MeanFieldConfig(cfg.n_neighbors, cfg.weight_scale_km, cfg.n_harmonics))
    os.makedirs(cfg.out, exist_ok=True)
    write_mean_field(mean, os.path.join(cfg.out, "mean_field.csv"))
    write_mean_field_gridded(mean, os.path.join(cfg.out, "mean_grid.csv"),
                             cfg.eval_time)
    write_manifest(cfg, "mean", ["mean_field.csv", "mean_grid.csv"],
                   extra={"n_obs": len(obs),
                          "n_ridge_cells": len(mean.ridge_cells)})
    return 0


CV_HEADER = ["scheme", "variant", "year_pos", "obs_index", "year", "source_id",
             "lat", "lon", "day", "truth", "kind", "mean", "variance",
             "f_var", "scale", "dof", "cell_i", "cell_j"]


def write_cv_records(cv: CVResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CV_HEADER)
        for r in cv.records:
            student = isinstance(r.pred, StudentPredictive)
            writer.writerow([
                cv.scheme, str(r.variant_id), str(r.year_pos), str(r.obs_index),
                str(r.year), r.source_id or "",
                _fmt(r.lat), _fmt(r.lon), _fmt(r.day), _fmt(r.truth),
                "student" if student else "gaussian",
                _fmt(r.pred.f_mean if student else r.pred.mean),
                "" if student else _fmt(r.pred.variance),
                _fmt(r.pred.f_var) if student else "",
                _fmt(r.pred.scale) if student else "",
                _fmt(r.pred.dof) if student else "",
                str(r.cell[0]), str(r.cell[1]),
            ])


def read_cv_records(path) -> CVResult:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != CV_HEADER:
            raise InputError(f"{path}: not a cv_records file")
        scheme = "looo"
        variant_id = 0
        records = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            scheme = row[0]
            variant_id = int(row[1])
            kind = row[10]
            if kind == "student":
                pred = StudentPredictive(float(row[11]), float(row[13]),
                                         float(row[14]), float(row[15]))
            else:
                pred = GaussianPredictive(float(row[11]), float(row[12]))
            records.append(CVRecord(
                int(row[2]), int(row[3]), int(row[4]), row[5] or None,
                float(row[6]), float(row[7]), float(row[8]), float(row[9]),
                pred, variant_id, (int(row[16]), int(row[17]))))
    result = CVResult(scheme, variant_id)
    result.records = records
    return result


def _write_metrics(path, tables: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "n", "RMSE", "MdAE", "Q3AE",
                         "RMSE improvement %", "MdAE improvement %",
                         "Q3AE improvement %"])
        for name, table in tables.items():
            imp = table.improvement or {}
            writer.writerow([
                name, str(table.n), _fmt(table.rmse), _fmt(table.mdae),
                _fmt(table.q3ae),
                _fmt(imp["rmse"]) if "rmse" in imp else "",
                _fmt(imp["mdae"]) if "mdae" in imp else "",
                _fmt(imp["q3ae"]) if "q3ae" in imp else "",
            ])


def _write_calibration(out_dir, report) -> list:
    coverage_path = os.path.join(out_dir, "coverage.csv")
    with open(coverage_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Level", "Empirical coverage", "Mean length",
                         "Median length"])
        for lv in report.levels:
            writer.writerow([_fmt(lv), _fmt(report.coverage[lv]),
                             _fmt(report.mean_length[lv]),
                             _fmt(report.median_length[lv])])
    curve_path = os.path.join(out_dir, "quantile_curve.csv")
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["q_theory", "q_delta"])
        for qt, qd in zip(report.q_theory, report.q_delta):
            writer.writerow([_fmt(qt), _fmt(qd)])
    return ["coverage.csv", "quantile_curve.csv"]


def _run_cv_for_variant(cfg: RunConfig, variant_id: int):
    variant = get_variant(variant_id)
    sub = replace(cfg, variant=variant_id, t_win=cfg.t_win)
    blocks, mask, _ = _load_blocks(sub, variant)
    _check_eval_year(sub, blocks)
    grid = sub.grid_spec(mask)
    spec = sub.window_spec()
    field_ = map_grid(blocks, grid, variant, spec, sub.optimizer_options(),
                      sub.mc_options(), sub.alpha, sub.seed,
                      sub.resolved_threads(), sub.fallback_nearest)
    eval_filter = None
    if cfg.cv_day_min is not None or cfg.cv_day_max is not None:
        eval_filter = (cfg.cv_day_min if cfg.cv_day_min is not None else -math.inf,
                       cfg.cv_day_max if cfg.cv_day_max is not None else math.inf)
    cv = run_cv(blocks, grid, field_, variant, spec, cfg.scheme,
                sub.optimizer_options(), eval_filter, cfg.radius_steps)
    return cv, field_


def cmd_cv(cfg: RunConfig) -> int:
    """Cross-validate and write records, metrics, and calibration."""
    cv, field_ = _run_cv_for_variant(cfg, cfg.variant)
    os.makedirs(cfg.out, exist_ok=True)
    outputs = ["cv_records.csv", "metrics.csv"]
    write_cv_records(cv, os.path.join(cfg.out, "cv_records.csv"))
    tables = {}
    extra = {"n_folds": len(cv.records), "n_skipped": cv.n_skipped,
             "n_failed": cv.n_failed,
             "status_counts": dict(field_.status_counts)}
    if cfg.baseline_variant:
        base_cv, _ = _run_cv_for_variant(cfg, cfg.baseline_variant)
        tables[f"variant {cfg.baseline_variant}"] = point_metrics(base_cv)
        tables[f"variant {cfg.variant}"] = point_metrics(
            cv, baseline=base_cv, baseline_name=f"variant {cfg.baseline_variant}")
        write_cv_records(base_cv,
                         os.path.join(cfg.out, "cv_records_baseline.csv"))
        outputs.append("cv_records_baseline.csv")
    else:
        tables[f"variant {cfg.variant}"] = point_metrics(cv)
    _write_metrics(os.path.join(cfg.out, "metrics.csv"), tables)
    if cv.records:
        report = calibration(cv, cfg.level_list(), cfg.mc_options())
        outputs += _write_calibration(cfg.out, report)
        extra["coverage"] = {str(k): v for k, v in report.coverage.items()}
        extra["n_flagged"] = report.n_flagged
    write_manifest(cfg, "cv", outputs, extra=extra)
    return 0


def cmd_calibrate(cfg: RunConfig) -> int:
    """Recompute calibration outputs from stored CV records."""
    path = cfg.records or os.path.join(cfg.out, "cv_records.csv")
    cv = read_cv_records(path)
    report = calibration(cv, cfg.level_list(), cfg.mc_options())
    os.makedirs(cfg.out, exist_ok=True)
    outputs = _write_calibration(cfg.out, report)
    write_manifest(cfg, "calibrate", outputs, extra={
        "n_folds": len(cv.records), "n_flagged": report.n_flagged,
        "coverage": {str(k): v for k, v in report.coverage.items()}})
    return 0


def cmd_lagmaps(cfg: RunConfig) -> int:
    """Correlation maps at fixed zonal/meridional/temporal lags."""
    src = cfg.params_dir or cfg.out
    need = ["param_phi", "param_sigma2", "param_theta_lat", "param_theta_lon"]
    temporal = cfg.lag_days > 0.0
    if temporal:
        need.append("param_theta_t")
    values = {}
    for name in need:
        path = os.path.join(src, f"{name}.csv")
        if not os.path.exists(path):
            raise InputError(
                f"missing parameter grid {path}"
                + (" (set lag_days=0 for spatial-only maps)"
                   if name == "param_theta_t" else ""))
        values[name] = read_grid_csv(path)
    cells = [(lat, lon) for lat, lon, _ in values["param_phi"]]
    tables = {name: {(lat, lon): v for lat, lon, v in rows}
              for name, rows in values.items()}
    total = cfg.lag_normalization == "total"
    if cfg.lag_normalization not in ("total", "process"):
        raise InputError(
            f"lag_normalization must be total or process, "
            f"got {cfg.lag_normalization!r}")
    maps = {}
    if cfg.lag_zonal_km > 0.0:
        maps["lag_zonal"] = ("dlon", cfg.lag_zonal_km)
    if cfg.lag_meridional_km > 0.0:
        maps["lag_meridional"] = ("dlat", cfg.lag_meridional_km)
    if temporal:
        maps["lag_temporal"] = ("dt", cfg.lag_days)
    outputs = []
    os.makedirs(cfg.out, exist_ok=True)
    for name, (axis, lag) in maps.items():
        rows = []
        for lat, lon in cells:
            try:
                params = CovParams(
                    tables["param_phi"][(lat, lon)],
                    tables["param_theta_lat"][(lat, lon)],
                    tables["param_theta_lon"][(lat, lon)],
                    tables["param_theta_t"][(lat, lon)] if temporal else 1.0,
                    tables["param_sigma2"][(lat, lon)],
                )
            except KeyError:
                raise InputError(
                    f"parameter grids disagree on cells near ({lat}, {lon})"
                ) from None
            if axis == "dlon":
                corr = correlation_at_lag(
                    params, dlon=zonal_km_to_degrees(lag, lat),
                    total_normalization=total, spatial=not temporal)
            elif axis == "dlat":
                corr = correlation_at_lag(
                    params, dlat=lag / 111.2,
                    total_normalization=total, spatial=not temporal)
            else:
                corr = correlation_at_lag(params, dt=lag,
                                          total_normalization=total)
            rows.append((lat, lon, corr))
        write_grid_csv(os.path.join(cfg.out, f"{name}.csv"), rows)
        outputs.append(f"{name}.csv")
    write_manifest(cfg, "lagmaps", outputs)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "mean": cmd_mean,
    "map": cmd_map,
    "cv": cmd_cv,
    "calibrate": cmd_calibrate,
    "lagmaps": cmd_lagmaps,
}


class _SetAction(argparse.Action):
    def __call__(self, parser, namespace, value, option_string=None):
        store = getattr(namespace, self.dest) or {}
        if "=" not in value:
            parser.error(f"--set expects key=value, got {value!r}")
        key, _, raw = value.partition("=")
        try:
            store[key.strip()] = _coerce(key.strip(), raw)
        except InputError as exc:
            parser.error(str(exc))
        setattr(namespace, self.dest, store)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwgp",
        description="Moving-window Gaussian-process mapping of scattered "
                    "ocean profile data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--threads", type=int,
                       help=f"worker processes (default ${THREADS_ENV} or 1)")
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument("--variant", type=int, choices=range(1, 7),
                       help="model variant 1-6")
        p.add_argument("--pressure", type=float, help="pressure level (db)")
        p.add_argument("--scheme", choices=("looo", "lofo"),
                       help="cross-validation scheme")
        p.add_argument("--out", help="output directory")
        p.add_argument("--profiles", help="input profile CSV")
        p.add_argument("--mean", help="mean-field file")
        p.add_argument("--mask", help="excluded-cell mask CSV")
        p.add_argument("--records", help="cv_records.csv to calibrate")
        p.add_argument("--params-dir", dest="params_dir",
                       help="directory holding param_*.csv grids")
        p.add_argument("--set", action=_SetAction, metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except (MappingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
