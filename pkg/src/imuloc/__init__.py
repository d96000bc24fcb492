"""IMU-supervised indoor radio localization.

Simulates trajectories, smartphone-grade IMU readings and multipath CSI;
fits corrected trajectories between control points with the
forward-backward algorithm; trains CSI -> position regressors on the
resulting pseudo-labels and refines them iteratively.
"""
from .backend import NUMBA_ENABLED, backend_name
from .config import (
    CarrierConfig,
    ChannelConfig,
    ControlPointConfig,
    FitConfig,
    FloorConfig,
    ImuNoiseConfig,
    PipelineConfig,
    ScenarioConfig,
    SmootherConfig,
    TrainConfig,
    WalkerConfig,
    load_scenario,
)
from .sim import (
    ControlPoint,
    CsiDataset,
    ImuSeries,
    TrajectorySeries,
    place_control_points,
    simulate_imu,
    simulate_trajectory,
    synth_csi,
    train_test_split,
)
from .csi import (
    CirDataset,
    FeatureMatrix,
    align_los,
    augment_cir_shift,
    cfr_to_cir,
    compute_snr,
    detect_los_peak,
    filter_and_normalize,
)
from .fit import (
    FitResult,
    Segment,
    TrajectoryFit,
    dead_reckon,
    fb_loss,
    fit_segment,
    fit_trajectory,
    integrate_backward,
    integrate_forward,
)
from .model import (
    Adam,
    KnnModel,
    MlpModel,
    init_mlp,
    knn_predict,
    mlp_forward,
    smooth_l1,
    train_mlp,
)
from .evaluate import (
    ErrorReport,
    horizontal_error,
    refinement_loop,
    rts_smooth,
)

__version__ = "0.1.1"
