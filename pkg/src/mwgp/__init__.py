"""Moving-window Gaussian-process mapping of scattered ocean profile data.

Locally stationary interpolation: covariance parameters are estimated
by maximum likelihood inside a moving spatio-temporal window around
each grid cell, then used for kriging-style prediction at the cell
center, with either a Gaussian or a heavy-tailed Student-t microscale
(nugget) component.
"""

from .covariance import (
    KM_PER_DEG,
    RG_DEFAULT,
    CovParams,
    RGCovConfig,
    SpaceTimePoint,
    cov_matrix,
    exp_cov,
    rg_cov,
    rg_distance,
    rg_distances,
    rg_tropic_factor,
    wrap_dlon,
    wrap_lon,
)
from .errors import (
    EmptyInputError,
    FactorizationError,
    InputError,
    InsufficientDataError,
    InsufficientVarianceError,
    InvalidParameterError,
    MappingError,
    ModeFindingError,
    SchemaError,
)
from .gaussian import (
    DEFAULT_OPTS,
    FitReport,
    GaussianPredictive,
    OptimizerOptions,
    YearBlock,
    fit_mle_gaussian,
    gauss_loglik,
    gaussian_interval,
    predict_gaussian,
)
from .ingest import (
    LevelObs,
    MeanField,
    MeanFieldConfig,
    ProfileRecord,
    apply_filters,
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
    write_profiles,
)
from .student import (
    LaplaceState,
    McOptions,
    StudentParams,
    StudentPredictive,
    find_mode,
    fit_mle_student,
    laplace_loglik,
    predict_student,
    predictive_deviation_sample,
    student_interval,
    student_pit,
)
from .validation import (
    CalibrationReport,
    CVRecord,
    CVResult,
    MetricTable,
    calibration,
    loo_partition,
    lofo_partition,
    point_metrics,
    run_cv,
    simulate_field,
    synthetic_float_blocks,
)
from .windows import (
    VARIANTS,
    CellFit,
    CellPrediction,
    CellResult,
    GridField,
    GridSpec,
    ModelVariant,
    ReferenceParams,
    WindowSpec,
    correlation_at_lag,
    fit_grid_point,
    get_variant,
    map_grid,
    month_halfwidth_days,
    select_window,
    variance_ratio,
)

__version__ = "0.1.0"
