"""Few-shot photovoltaic power forecasting.

A numpy-based toolkit: a small reverse-mode autodiff engine, synthetic
PV benchmark data, kernel-distance source selection, median/MAD outlier
correction, neighbor-based feature ranking, an interpretable
dual-channel ensemble over eight sequence extractors with auxiliary
feature fusion, peak-penalized training, and a probe-and-decide
transfer strategy for stations with only a few days of history.
"""

from .autodiff import Tensor, ShapeError, tensor_op
from .config import (
    ChannelConfig,
    ConfigError,
    HampelConfig,
    LossConfig,
    MmdConfig,
    ModelConfig,
    PoolConfig,
    ReliefFConfig,
    RunConfig,
    SplitConfig,
    TrainConfig,
    TransferConfig,
    load_config,
    save_config,
)
from .data import (
    DataError,
    NormalizerParams,
    SplitSpec,
    StationSeries,
    SynthProfile,
    WindowSet,
    denormalize,
    load_csv,
    make_windows,
    normalize,
    synth_generate,
    write_csv,
)
from .ensemble import ChannelNet, EnsembleCoefficients, combine, explain, interpret_weights, select_gates
from .fusion import FConvNet, FusionLambda, HeadMlp, fuse
from .model import Forecaster
from .optim import AdamW, AdamWState, NumericError, adamw_step
from .pool import ExtractorKind, ModelPool, build_pool
from .preprocess import (
    FeatureRanking,
    HampelResult,
    SourceSelection,
    hampel_correct,
    mmd_squared,
    relieff_rank,
    select_features,
    select_source,
)
from .train import (
    BandStats,
    EpochStats,
    MetricsReport,
    band_stats,
    evaluate_metrics,
    evaluate_on_windows,
    fit,
    one_factor_sweep,
    penalized_mse,
    predict,
    sensitivity_std,
)
from .transfer import (
    TransferDecision,
    TransferReport,
    decide,
    fine_tune,
    pretrain,
    probe_and_decide,
    run_transfer,
)
from .checkpoint import CheckpointError, load_checkpoint, load_model, save_checkpoint, save_model

__version__ = "0.1.0"
