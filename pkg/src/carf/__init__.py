"""carf: single-pass GOP-level rate control toolkit.

Analyze video with a downsampled lookahead, predict per-GOP CRF-bitrate
curves with a shallow network, and plan per-GOP CRF values that meet a
target bitrate, plus the training and evaluation pipeline around it.
"""

from .errors import CarfError
from .video import (
    Frame,
    VideoSequence,
    Y4mError,
    downsample_half,
    load_y4m,
    parse_y4m,
    save_y4m,
    synth_sequence,
    SyntheticSpec,
    write_y4m,
)
from .lookahead import (
    FrameStats,
    GopSpan,
    LookaheadParams,
    MbAnalysis,
    analyze_frame,
    analyze_sequence,
    detect_scenecut,
    intra_cost,
    motion_search,
    sad,
    satd,
    segment_gops,
)
from .features import (
    FEATURE_NAMES,
    FeatureScaler,
    GopFeatures,
    aggregate_gop,
    apply_scaler,
    fit_scaler,
)
from .rate_model import (
    NnlsConvergenceError,
    RateModelParams,
    RateObservation,
    crf_for_bitrate,
    eval_crf_curve,
    fit_rate_model,
    nnls,
    solve_bitrate_for_crf,
)
from .network import (
    MlpModel,
    ModelFormatError,
    TrainConfig,
    TrainingSample,
    crf_set_loss,
    forward,
    gradients,
    load_model,
    save_model,
    train,
)
from .decision import EncodePlan, decide_crf, plan_sequence
from .metrics import (
    RdPoint,
    bd_rate,
    bitrate_error,
    error_cdf,
    fluctuation,
    pct_within,
    time_ratio,
    time_ratio_geomean,
)
from .orchestrator import (
    ClipRef,
    DatasetConfig,
    DatasetRecord,
    EncoderError,
    ExternalEncoder,
    SyntheticEncoder,
    build_dataset,
    execute_plan,
    run_crf_sweep,
)

__version__ = "0.1.0"
