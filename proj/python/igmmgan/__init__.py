from ._core import (
    ChecksumError,
    ConfigError,
    DimensionError,
    Error,
    FormatError,
    NumericError,
    ValidationError,
    VersionError,
    __version__,
    align_samples,
    compute_velocities,
    evaluate,
    generate_synthetic_trips,
    hungarian,
    macro_f1,
    mahalanobis,
    niw_posterior,
    parse_geolife_plt,
    predictive_logpdf,
    roc_auc,
    roc_curve,
    run_igmm,
    score_model,
    strip_timing,
)
