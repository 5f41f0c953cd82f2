"""Sequence-learning toolkit for cuffless blood-pressure estimation.

Layering, bottom to top: :mod:`errors` and :mod:`rng`; :mod:`network`
and :mod:`backprop` (the hand-written model); :mod:`signals` and
:mod:`synth` (data in and data made); :mod:`training`, :mod:`gradcheck`,
:mod:`baselines`, :mod:`metrics`; :mod:`checkpoint` and :mod:`fileio`
(serialization); :mod:`evaluation`, :mod:`estimators`, and :mod:`cli`.
"""

__version__ = "0.1.0"

from .baselines import KalmanFilterModel, PttChen, PttPoon, RidgeRegression
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DataError, NumericalError, SeqpressError
from .estimators import DeepRnnRegressor, FeatureScaler, TargetMaxScaler
from .evaluation import (
    ablation_residual,
    comparison_report,
    evaluate_checkpoint,
    multiday_eval,
)
from .gradcheck import finite_difference_check, residual_gradient_decomposition_check
from .metrics import bland_altman, rmse
from .network import NetworkConfig, NetworkParams, forward_pass, init_network
from .backprop import backward_pass
from .signals import (
    FEATURE_NAMES,
    FeatureSequence,
    WaveformRecord,
    detect_ecg_r_peaks,
    detect_ppg_fiducials,
    extract_features,
    normalize_features,
)
from .synth import (
    MemorylessOracle,
    SynthConfig,
    generate_feature_cohort,
    generate_waveform_cohort,
)
from .training import (
    Checkpoint,
    SequenceRecord,
    SplitDataset,
    TrainConfig,
    TrainingSample,
    adam_step,
    batch_objective,
    clip_gradients,
    loss_and_gradients,
    make_windows,
    multitask_loss,
    multitask_vs_singletask_harness,
    normalize_targets,
    prepare_dataset,
    pretrain_finetune,
    split_dataset,
    train,
)

__all__ = [
    "__version__",
    "SeqpressError", "DataError", "NumericalError",
    "NetworkConfig", "NetworkParams", "init_network", "forward_pass",
    "backward_pass",
    "finite_difference_check", "residual_gradient_decomposition_check",
    "FEATURE_NAMES", "WaveformRecord", "FeatureSequence",
    "detect_ecg_r_peaks", "detect_ppg_fiducials", "extract_features",
    "normalize_features",
    "SynthConfig", "MemorylessOracle",
    "generate_feature_cohort", "generate_waveform_cohort",
    "TrainConfig", "TrainingSample", "SequenceRecord", "SplitDataset",
    "Checkpoint", "multitask_loss", "batch_objective", "loss_and_gradients",
    "adam_step", "clip_gradients", "normalize_targets", "make_windows",
    "split_dataset", "prepare_dataset", "train", "pretrain_finetune",
    "multitask_vs_singletask_harness",
    "PttChen", "PttPoon", "KalmanFilterModel", "RidgeRegression",
    "rmse", "bland_altman",
    "save_checkpoint", "load_checkpoint",
    "evaluate_checkpoint", "multiday_eval", "comparison_report",
    "ablation_residual",
    "DeepRnnRegressor", "FeatureScaler", "TargetMaxScaler",
]
