"""Tests for profile ingestion, vertical interpolation, filtering, and
the local-regression mean field (estimation, residualization, and file
round trips)."""

import math

import numpy as np
import pytest

from mwgp.errors import (
    InputError,
    InsufficientDataError,
    InvalidParameterError,
    SchemaError,
)
from mwgp.gaussian import YearBlock
from mwgp.ingest import (
    MEAN_COEF_HEADER,
    PROFILE_HEADER,
    LevelObs,
    MeanField,
    MeanFieldConfig,
    ProfileRecord,
    apply_filters,
    coef_names,
    estimate_mean_field,
    interpolate_to_pressure,
    load_mask,
    parse_profiles,
    profiles_to_level,
    read_mean_field,
    records_to_blocks,
    rg_phi_hat,
    subtract_mean,
    write_mean_field,
    write_mean_field_gridded,
    write_profiles,
)
from mwgp.covariance import SpaceTimePoint
from mwgp.windows import GridSpec, WindowSpec


def make_profile(sid="f1", lat=10.0, lon=20.0, year=2007, day=45.5,
                 levels=((290.0, 10.0), (310.0, 9.0))):
    return ProfileRecord(sid, lat, lon, year, day, levels)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestProfileRecord:
    def test_longitude_wrapped_on_construction(self):
        assert make_profile(lon=190.0).lon == -170.0

    def test_requires_levels(self):
        with pytest.raises(InvalidParameterError):
            make_profile(levels=())

    def test_requires_strictly_increasing_pressure(self):
        with pytest.raises(InvalidParameterError):
            make_profile(levels=((290.0, 10.0), (290.0, 9.0)))
        with pytest.raises(InvalidParameterError):
            make_profile(levels=((310.0, 9.0), (290.0, 10.0)))

    def test_latitude_bounds(self):
        with pytest.raises(InvalidParameterError):
            make_profile(lat=-95.0)

    def test_level_arrays(self):
        rec = make_profile()
        np.testing.assert_array_equal(rec.pressures, [290.0, 310.0])
        np.testing.assert_array_equal(rec.values, [10.0, 9.0])


class TestProfileRoundTrip:
    def test_write_then_parse_is_identity(self, tmp_path):
        records = [
            make_profile("a", 10.123456789, -20.987654321, 2007, 45.5),
            make_profile("b", -3.0, 179.9, 2008, 60.25,
                         levels=((5.0, 18.0), (100.0, 12.5), (300.0, 9.75))),
            make_profile("a", 11.0, -20.0, 2007, 46.0,
                         levels=((300.0, 9.0),)),
        ]
        path = tmp_path / "profiles.csv"
        write_profiles(records, path)
        assert parse_profiles(path) == records

    def test_irrational_coordinates_survive_round_trip(self, tmp_path):
        rec = make_profile(lat=math.pi * 10, lon=-math.e * 20,
                           day=math.sqrt(2020.0),
                           levels=((1.0 / 3.0, 17.123456789012345),))
        path = tmp_path / "profiles.csv"
        write_profiles([rec], path)
        back = parse_profiles(path)[0]
        assert back.lat == rec.lat
        assert back.lon == rec.lon
        assert back.day == rec.day
        assert back.levels == rec.levels


class TestProfileParsing:
    def test_zero_byte_file_is_empty(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_bytes(b"")
        assert parse_profiles(path) == []

    def test_header_only_file_is_empty(self, tmp_path):
        path = write_lines(tmp_path / "p.csv", [",".join(PROFILE_HEADER)])
        assert parse_profiles(path) == []

    def test_blank_lines_skipped(self, tmp_path):
        path = write_lines(tmp_path / "p.csv", [
            ",".join(PROFILE_HEADER),
            "",
            "f1,10,20,2007,45.5,290,10",
            "",
            "f1,10,20,2007,45.5,310,9",
        ])
        records = parse_profiles(path)
        assert len(records) == 1
        assert records[0].levels == ((290.0, 10.0), (310.0, 9.0))

    def test_wrong_header_rejected_at_line_one(self, tmp_path):
        path = write_lines(tmp_path / "p.csv",
                           ["source_id,lat,lon,year,day,pressure,temp"])
        with pytest.raises(SchemaError) as err:
            parse_profiles(path)
        assert err.value.line_number == 1

    def test_wrong_field_count_carries_line_number(self, tmp_path):
        path = write_lines(tmp_path / "p.csv", [
            ",".join(PROFILE_HEADER),
            "f1,10,20,2007,45.5,290,10",
            "f1,10,20,2007,45.5,310",
        ])
        with pytest.raises(SchemaError) as err:
            parse_profiles(path)
        assert err.value.line_number == 3

    @pytest.mark.parametrize("bad_row,line", [
        ("f1,north,20,2007,45.5,290,10", 2),
        ("f1,10,20,2007.5,45.5,290,10", 2),
        ("f1,10,20,2007,45.5,290,nan", 2),
        ("f1,10,20,2007,45.5,inf,10", 2),
        (",10,20,2007,45.5,290,10", 2),
    ])
    def test_malformed_fields_rejected(self, tmp_path, bad_row, line):
        path = write_lines(tmp_path / "p.csv",
                           [",".join(PROFILE_HEADER), bad_row])
        with pytest.raises(SchemaError) as err:
            parse_profiles(path)
        assert err.value.line_number == line

    def test_nonincreasing_pressure_rejected_at_offending_line(self, tmp_path):
        path = write_lines(tmp_path / "p.csv", [
            ",".join(PROFILE_HEADER),
            "f1,10,20,2007,45.5,290,10",
            "f1,10,20,2007,45.5,300,9.5",
            "f1,10,20,2007,45.5,300,9.4",
        ])
        with pytest.raises(SchemaError) as err:
            parse_profiles(path)
        assert err.value.line_number == 4

    def test_profile_rows_must_be_contiguous(self, tmp_path):
        path = write_lines(tmp_path / "p.csv", [
            ",".join(PROFILE_HEADER),
            "f1,10,20,2007,45.5,290,10",
            "f2,11,21,2007,50.0,290,10",
            "f1,10,20,2007,45.5,310,9",
        ])
        with pytest.raises(SchemaError) as err:
            parse_profiles(path)
        assert err.value.line_number == 4
        assert "contiguous" in str(err.value)

    def test_out_of_range_latitude_points_at_profile_start(self, tmp_path):
        path = write_lines(tmp_path / "p.csv", [
            ",".join(PROFILE_HEADER),
            "f1,95,20,2007,45.5,290,10",
            "f1,95,20,2007,45.5,310,9",
        ])
        with pytest.raises(SchemaError) as err:
            parse_profiles(path)
        assert err.value.line_number == 2

    def test_same_float_different_day_is_a_new_profile(self, tmp_path):
        path = write_lines(tmp_path / "p.csv", [
            ",".join(PROFILE_HEADER),
            "f1,10,20,2007,45.5,290,10",
            "f1,10,20,2007,46.5,290,11",
        ])
        records = parse_profiles(path)
        assert len(records) == 2
        assert [r.day for r in records] == [45.5, 46.5]


class TestVerticalInterpolation:
    def test_linear_midpoint(self):
        rec = make_profile(levels=((290.0, 10.0), (310.0, 9.0)))
        assert interpolate_to_pressure(rec, 300.0) == pytest.approx(9.5,
                                                                    abs=1e-15)

    def test_exact_node_returns_recorded_value(self):
        rec = make_profile(levels=((290.0, 10.0), (310.0, 9.0)))
        assert interpolate_to_pressure(rec, 290.0) == 10.0
        assert interpolate_to_pressure(rec, 310.0) == 9.0

    def test_no_extrapolation(self):
        rec = make_profile(levels=((290.0, 10.0), (310.0, 9.0)))
        assert interpolate_to_pressure(rec, 289.999) is None
        assert interpolate_to_pressure(rec, 310.001) is None

    def test_positive_level_required(self):
        rec = make_profile()
        with pytest.raises(InvalidParameterError):
            interpolate_to_pressure(rec, 0.0)
        with pytest.raises(InvalidParameterError):
            interpolate_to_pressure(rec, -300.0)

    def test_piecewise_linear_between_interior_nodes(self):
        rec = make_profile(levels=((100.0, 20.0), (200.0, 10.0),
                                   (400.0, 8.0)))
        assert interpolate_to_pressure(rec, 150.0) == pytest.approx(15.0)
        assert interpolate_to_pressure(rec, 300.0) == pytest.approx(9.0)

    def test_profiles_not_sampling_level_dropped(self):
        deep = make_profile("deep", levels=((100.0, 15.0), (400.0, 8.0)))
        shallow = make_profile("shallow", levels=((5.0, 18.0), (50.0, 16.0)))
        obs = profiles_to_level([deep, shallow], 300.0)
        assert [o.source_id for o in obs] == ["deep"]
        assert obs[0].value == pytest.approx(15.0 - 7.0 * 200.0 / 300.0)
        assert (obs[0].lat, obs[0].lon, obs[0].year, obs[0].day) == \
            (10.0, 20.0, 2007, 45.5)


class TestRecordsToBlocks:
    def test_groups_by_year_ascending(self):
        obs = [
            LevelObs("a", 1.0, 2.0, 2001, 40.0, 0.1),
            LevelObs("b", 3.0, 4.0, 1999, 50.0, 0.2),
            LevelObs("c", 5.0, 6.0, 2001, 60.0, 0.3),
        ]
        blocks = records_to_blocks(obs)
        assert [b.year for b in blocks] == [1999, 2001]
        assert blocks[0].m == 1 and blocks[1].m == 2
        np.testing.assert_array_equal(blocks[1].values, [0.1, 0.3])
        np.testing.assert_array_equal(blocks[1].source_ids, ["a", "c"])
        np.testing.assert_array_equal(blocks[1].t, [40.0, 60.0])

    def test_empty_input(self):
        assert records_to_blocks([]) == []


def polynomial_obs(m=240, seed=5, span=10.0):
    """Observations whose values are an exactly representable quadratic."""
    rng = np.random.default_rng(seed)
    lat = rng.uniform(-span, span, m)
    lon = rng.uniform(-span, span, m)
    day = rng.uniform(0.0, 365.0, m)
    value = (2.0 + 0.5 * lat - 0.3 * lon + 0.05 * lat ** 2
             + 0.02 * lon ** 2 + 0.01 * lat * lon)
    return [LevelObs(f"f{i}", lat[i], lon[i], 2007, day[i], value[i])
            for i in range(m)]


SMALL_GRID = GridSpec(-2.0, 2.0, -2.0, 2.0, eval_time=45.5)


class TestMeanFieldConfig:
    @pytest.mark.parametrize("kwargs", [
        {"n_neighbors": 0}, {"weight_scale_km": 0.0},
        {"n_harmonics": -1}, {"ridge": -1e-9},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(InvalidParameterError):
            MeanFieldConfig(**kwargs)

    def test_coef_names_include_harmonic_pairs(self):
        assert coef_names(0) == ["intercept", "dlat", "dlon", "dlat2",
                                 "dlon2", "dlat_dlon"]
        assert coef_names(2)[-4:] == ["sin1", "cos1", "sin2", "cos2"]


class TestMeanFieldEstimation:
    def test_needs_enough_observations(self):
        obs = polynomial_obs(m=10)
        with pytest.raises(InsufficientDataError):
            estimate_mean_field(obs, SMALL_GRID,
                                MeanFieldConfig(n_neighbors=50))

    def test_reproduces_quadratic_exactly(self):
        obs = polynomial_obs()
        mean = estimate_mean_field(obs, SMALL_GRID,
                                   MeanFieldConfig(n_neighbors=120,
                                                   n_harmonics=0))
        for i, j, clat, clon in SMALL_GRID.cells():
            expected = (2.0 + 0.5 * clat - 0.3 * clon + 0.05 * clat ** 2
                        + 0.02 * clon ** 2 + 0.01 * clat * clon)
            assert mean.evaluate(i, j) == pytest.approx(expected, abs=1e-6)

    def test_evaluate_at_uses_full_local_basis(self):
        obs = polynomial_obs()
        mean = estimate_mean_field(obs, SMALL_GRID,
                                   MeanFieldConfig(n_neighbors=120,
                                                   n_harmonics=0))
        lat, lon = 1.37, -0.52
        expected = (2.0 + 0.5 * lat - 0.3 * lon + 0.05 * lat ** 2
                    + 0.02 * lon ** 2 + 0.01 * lat * lon)
        assert mean.evaluate_at(lat, lon) == pytest.approx(expected, abs=1e-6)

    def test_recovers_annual_harmonic(self):
        rng = np.random.default_rng(11)
        m = 300
        lat = rng.uniform(-3.0, 3.0, m)
        lon = rng.uniform(-3.0, 3.0, m)
        day = rng.uniform(0.0, 365.25, m)
        omega = 2.0 * math.pi / 365.25
        value = 1.5 + 2.0 * np.sin(omega * day) - 0.75 * np.cos(omega * day)
        obs = [LevelObs(f"f{i}", lat[i], lon[i], 2007, day[i], value[i])
               for i in range(m)]
        mean = estimate_mean_field(obs, SMALL_GRID,
                                   MeanFieldConfig(n_neighbors=200,
                                                   n_harmonics=2))
        beta = mean.coefs[(2, 2)]
        names = coef_names(2)
        assert beta[names.index("sin1")] == pytest.approx(2.0, abs=1e-6)
        assert beta[names.index("cos1")] == pytest.approx(-0.75, abs=1e-6)
        assert beta[names.index("sin2")] == pytest.approx(0.0, abs=1e-6)
        assert mean.evaluate(2, 2, t=100.0) == pytest.approx(
            1.5 + 2.0 * math.sin(omega * 100.0) - 0.75 * math.cos(omega * 100.0),
            abs=1e-6)
        # Without a time, only the spatial part is reported.
        assert mean.evaluate(2, 2) == pytest.approx(1.5, abs=1e-6)

    def test_constant_field(self):
        obs = [LevelObs(f"f{i}", lat, lon, 2007, day, 3.5)
               for i, (lat, lon, day) in enumerate(
                   zip(np.random.default_rng(1).uniform(-3, 3, 120),
                       np.random.default_rng(2).uniform(-3, 3, 120),
                       np.random.default_rng(3).uniform(0, 365, 120)))]
        mean = estimate_mean_field(obs, SMALL_GRID,
                                   MeanFieldConfig(n_neighbors=100,
                                                   n_harmonics=1))
        assert mean.evaluate(0, 0, t=60.0) == pytest.approx(3.5, abs=1e-8)
        assert not mean.ridge_cells

    def test_rank_deficient_design_falls_back_to_ridge(self):
        # Every observation at the same point: the local design collapses.
        obs = [LevelObs(f"f{i}", 0.0, 0.0, 2007, 45.5, 2.0)
               for i in range(60)]
        mean = estimate_mean_field(obs, SMALL_GRID,
                                   MeanFieldConfig(n_neighbors=50,
                                                   n_harmonics=0))
        assert mean.ridge_cells  # flagged, not silently inverted
        i, j = mean.nearest_cell(0.0, 0.0)
        assert (i, j) in mean.ridge_cells
        assert mean.evaluate_at(0.0, 0.0) == pytest.approx(2.0, abs=1e-6)

    def test_nearest_cell_clips_and_wraps(self):
        grid = GridSpec(0.0, 3.0, 0.0, 3.0)
        mean = MeanField(grid, {}, 0)
        assert mean.nearest_cell(1.4, 2.6) == (1, 3)
        assert mean.nearest_cell(-10.0, 0.0) == (0, 0)
        assert mean.nearest_cell(10.0, 0.0) == (3, 0)
        assert mean.nearest_cell(0.0, 363.1) == (0, 3)


def zero_mean_field(grid=SMALL_GRID):
    coefs = {(i, j): np.zeros(6) for i, j, _, _ in grid.cells()}
    return MeanField(grid, coefs, n_harmonics=0)


class TestSubtractMean:
    def test_zero_mean_returns_raw_values_as_blocks(self):
        obs = [LevelObs("a", 0.3, 0.4, 2001, 40.0, 1.5),
               LevelObs("b", -0.2, 0.1, 2002, 50.0, -0.7)]
        blocks, n_excluded = subtract_mean(obs, zero_mean_field())
        assert n_excluded == 0
        assert [b.year for b in blocks] == [2001, 2002]
        assert blocks[0].values[0] == 1.5
        assert blocks[1].values[0] == -0.7

    def test_exact_mean_gives_zero_residuals(self):
        obs = polynomial_obs(m=240)
        mean = estimate_mean_field(obs, SMALL_GRID,
                                   MeanFieldConfig(n_neighbors=120,
                                                   n_harmonics=0))
        near = [o for o in obs if abs(o.lat) <= 2 and abs(o.lon) <= 2]
        blocks, _ = subtract_mean(near, mean, mode="spatial", eval_time=45.5)
        resid = np.concatenate([b.values for b in blocks])
        assert np.max(np.abs(resid)) < 1e-6

    def test_mode_validation(self):
        obs = [LevelObs("a", 0.0, 0.0, 2001, 40.0, 1.0)]
        with pytest.raises(InvalidParameterError):
            subtract_mean(obs, zero_mean_field(), mode="monthly")
        with pytest.raises(InvalidParameterError):
            subtract_mean(obs, zero_mean_field(), mode="spatial")

    def test_fixed_time_and_own_time_modes_differ_with_harmonics(self):
        grid = SMALL_GRID
        coefs = {}
        for i, j, _, _ in grid.cells():
            beta = np.zeros(8)  # spatial terms + one harmonic pair
            beta[6] = 1.0  # sin1
            coefs[(i, j)] = beta
        mean = MeanField(grid, coefs, n_harmonics=1)
        obs = [LevelObs("a", 0.0, 0.0, 2001, 100.0, 5.0)]
        spatial, _ = subtract_mean(obs, mean, mode="spatial", eval_time=45.5)
        own_time, _ = subtract_mean(obs, mean, mode="spatio-temporal")
        omega = 2.0 * math.pi / 365.25
        assert spatial[0].values[0] == pytest.approx(
            5.0 - math.sin(omega * 45.5), rel=1e-12)
        assert own_time[0].values[0] == pytest.approx(
            5.0 - math.sin(omega * 100.0), rel=1e-12)

    def test_observations_without_a_cell_mean_are_excluded(self):
        grid = SMALL_GRID
        coefs = {(0, 0): np.zeros(6)}  # only the corner cell has a mean
        mean = MeanField(grid, coefs, n_harmonics=0)
        obs = [LevelObs("a", -2.0, -2.0, 2001, 40.0, 1.0),
               LevelObs("b", 2.0, 2.0, 2001, 40.0, 2.0)]
        blocks, n_excluded = subtract_mean(obs, mean)
        assert n_excluded == 1
        assert blocks[0].m == 1
        assert blocks[0].values[0] == 1.0

    def test_residual_plus_mean_restores_value(self):
        obs = polynomial_obs(m=240)
        mean = estimate_mean_field(obs, SMALL_GRID,
                                   MeanFieldConfig(n_neighbors=120,
                                                   n_harmonics=0))
        near = [o for o in obs if abs(o.lat) <= 2 and abs(o.lon) <= 2][:20]
        blocks, _ = subtract_mean(near, mean)
        by_key = {(o.source_id): o for o in near}
        for b in blocks:
            for sid, lat, lon, t, resid in zip(b.source_ids, b.lat, b.lon,
                                               b.t, b.values):
                o = by_key[sid]
                assert resid + mean.evaluate_at(lat, lon, t) == pytest.approx(
                    o.value, rel=1e-12, abs=1e-12)


class TestWindowedPluginVariance:
    def test_two_point_value(self):
        block = YearBlock(0, np.zeros(2), np.zeros(2), np.full(2, 45.5),
                          np.array([-1.0, 1.0]))
        center = SpaceTimePoint(0.0, 0.0, 45.5)
        assert rg_phi_hat([block], center) == pytest.approx(2.0 / 1.15,
                                                            rel=1e-15)

    def test_window_excludes_distant_observations(self):
        block = YearBlock(0, np.array([0.0, 0.0, 50.0]), np.zeros(3),
                          np.full(3, 45.5), np.array([-1.0, 1.0, 100.0]))
        center = SpaceTimePoint(0.0, 0.0, 45.5)
        assert rg_phi_hat([block], center) == pytest.approx(2.0 / 1.15,
                                                            rel=1e-15)

    def test_custom_window(self):
        block = YearBlock(0, np.array([0.0, 4.0]), np.zeros(2),
                          np.full(2, 45.5), np.array([-1.0, 1.0]))
        center = SpaceTimePoint(0.0, 0.0, 45.5)
        narrow = WindowSpec(2.0, 20.0, min_obs=2)
        with pytest.raises(InsufficientDataError):
            rg_phi_hat([block], center, narrow)


class TestMaskAndFilters:
    def test_load_mask_wraps_and_canonicalizes(self, tmp_path):
        path = write_lines(tmp_path / "mask.csv",
                           ["lat,lon", "10.0,190.0", "-5.5,20.5"])
        mask = load_mask(path)
        assert mask == frozenset({(10.0, -170.0), (-5.5, 20.5)})

    def test_load_mask_header_checked(self, tmp_path):
        path = write_lines(tmp_path / "mask.csv", ["latitude,longitude"])
        with pytest.raises(SchemaError):
            load_mask(path)

    def test_no_filters_is_identity(self):
        records = [make_profile("a"), make_profile("b", lat=11.0)]
        assert apply_filters(records) == records

    def test_time_window_closed_bounds(self):
        records = [make_profile("a", day=10.0), make_profile("b", day=20.0),
                   make_profile("c", day=9.999), make_profile("d", day=20.001)]
        kept = apply_filters(records, time_window=(10.0, 20.0))
        assert [r.source_id for r in kept] == ["a", "b"]

    def test_reversed_time_window_rejected(self):
        with pytest.raises(InvalidParameterError):
            apply_filters([], time_window=(20.0, 10.0))

    def test_mask_removes_cell_box_with_closed_bounds(self):
        records = [
            make_profile("inside", lat=10.5, lon=20.5),
            make_profile("outside", lat=10.51, lon=20.0),
            make_profile("center", lat=10.0, lon=20.0),
        ]
        kept = apply_filters(records, mask={(10.0, 20.0)})
        assert [r.source_id for r in kept] == ["outside"]

    def test_mask_wraps_longitude(self):
        records = [make_profile("near_seam", lat=0.0, lon=179.8)]
        assert apply_filters(records, mask={(0.0, -180.0)}) == []

    def test_mask_cell_size(self):
        records = [make_profile("a", lat=10.9, lon=20.0)]
        assert apply_filters(records, mask={(10.0, 20.0)},
                             cell_size=2.0) == []
        assert apply_filters(records, mask={(10.0, 20.0)},
                             cell_size=1.0) == records


class TestMeanFieldIO:
    def fitted_mean(self):
        rng = np.random.default_rng(23)
        m = 250
        lat = rng.uniform(-3.0, 3.0, m)
        lon = rng.uniform(-3.0, 3.0, m)
        day = rng.uniform(0.0, 365.0, m)
        omega = 2.0 * math.pi / 365.25
        value = 1.0 + 0.2 * lat + 0.4 * np.sin(omega * day) \
            + rng.normal(scale=0.05, size=m)
        obs = [LevelObs(f"f{i}", lat[i], lon[i], 2007, day[i], value[i])
               for i in range(m)]
        return estimate_mean_field(obs, SMALL_GRID,
                                   MeanFieldConfig(n_neighbors=150,
                                                   n_harmonics=1))

    def test_coefficient_round_trip_is_exact(self, tmp_path):
        mean = self.fitted_mean()
        path = tmp_path / "mean.csv"
        write_mean_field(mean, path)
        back = read_mean_field(path, SMALL_GRID)
        assert back.n_harmonics == mean.n_harmonics
        assert sorted(back.coefs) == sorted(mean.coefs)
        for ij in mean.coefs:
            np.testing.assert_array_equal(back.coefs[ij], mean.coefs[ij])
        assert back.evaluate(1, 1, t=77.0) == mean.evaluate(1, 1, t=77.0)

    def test_gridded_round_trip_freezes_the_written_time(self, tmp_path):
        mean = self.fitted_mean()
        path = tmp_path / "mean_grid.csv"
        write_mean_field_gridded(mean, path, eval_time=45.5)
        back = read_mean_field(path, SMALL_GRID)
        assert back.n_harmonics == 0
        for ij in mean.coefs:
            assert back.coefs[ij].shape == (1,)
            assert back.evaluate(*ij) == mean.evaluate(*ij, t=45.5)
            # A gridded mean has no time dependence left.
            assert back.evaluate(*ij, t=200.0) == back.evaluate(*ij)
        assert back.evaluate_at(1.37, -0.52) == back.evaluate(
            *back.nearest_cell(1.37, -0.52))

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "mean.csv"
        path.write_bytes(b"")
        with pytest.raises(SchemaError):
            read_mean_field(path, SMALL_GRID)

    def test_unknown_header_rejected(self, tmp_path):
        path = write_lines(tmp_path / "mean.csv", ["a,b,c,d,e"])
        with pytest.raises(SchemaError):
            read_mean_field(path, SMALL_GRID)

    def test_off_grid_coordinates_rejected(self, tmp_path):
        path = write_lines(tmp_path / "mean.csv", [
            ",".join(MEAN_COEF_HEADER),
            "0.25,0.0,intercept,1.0",
        ])
        with pytest.raises(SchemaError) as err:
            read_mean_field(path, SMALL_GRID)
        assert "cell center" in str(err.value)

    def test_unknown_coefficient_name_rejected(self, tmp_path):
        path = write_lines(tmp_path / "mean.csv", [
            ",".join(MEAN_COEF_HEADER),
            "0.0,0.0,curvature,1.0",
        ])
        with pytest.raises(SchemaError):
            read_mean_field(path, SMALL_GRID)

    def test_missing_coefficients_default_to_zero(self, tmp_path):
        path = write_lines(tmp_path / "mean.csv", [
            ",".join(MEAN_COEF_HEADER),
            "0.0,0.0,intercept,1.5",
            "0.0,0.0,sin1,0.25",
        ])
        back = read_mean_field(path, SMALL_GRID)
        ij = back.nearest_cell(0.0, 0.0)
        assert back.n_harmonics == 1
        assert back.coefs[ij].shape == (8,)
        assert back.evaluate(*ij) == 1.5
        omega = 2.0 * math.pi / 365.25
        assert back.evaluate(*ij, t=100.0) == pytest.approx(
            1.5 + 0.25 * math.sin(omega * 100.0), rel=1e-12)

    def test_mean_schema_error_is_input_error(self, tmp_path):
        # Callers branching on the broader category still catch schema
        # violations.
        path = write_lines(tmp_path / "mean.csv", ["a,b"])
        with pytest.raises(InputError):
            read_mean_field(path, SMALL_GRID)
