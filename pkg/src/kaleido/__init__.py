"""Train bounded-output MLPs to reconstruct their input and sample from them
by iterating the learned map."""

__version__ = "0.1.0"

from .data import Dataset, NormalizeTransform, load_csv, load_idx, normalize_for, synth_points, write_pgm
from .errors import (
    ConfigError,
    DataFormatError,
    DataRangeError,
    DivergenceError,
    EmptyDatasetError,
    EnumerationLimitError,
    KaleidoError,
    ModelFormatError,
    ShapeError,
)
from .mlp import (
    AdamState,
    MlpParams,
    MlpSpec,
    ParamGrads,
    adam_step,
    backward,
    deserialize_model,
    forward,
    init_params,
    input_gradient,
    reconstruction_loss,
    serialize_model,
)
from .profiler import corner_scan, flatness_curve, step_metric, sweep_1d, sweep_2d
from .sampler import (
    InitDistribution,
    SampleTrajectory,
    SamplerConfig,
    compose_apply,
    detect_burn_in,
    gradient_input_sampler,
    kaleidoscopic_sample,
    nearest_training_point,
)
from .tensor import ActivationKind, activation_derivative, apply_activation, matmul
from .trainer import TrainConfig, TrainReport, density_score, train_manifold, train_with_restarts
