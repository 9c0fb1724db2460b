"""Primitive decoding, counting, and scoring for inertial recordings."""

__version__ = "0.1.0"

from .dataset import (
    CLASSES,
    N_CLASSES,
    ChannelManifest,
    DataError,
    DatasetSplit,
    IMURecording,
    LabeledRecording,
    PrimitiveClass,
    PrimitiveSegment,
    SubjectInfo,
    SynthSpec,
    default_manifest,
    load_dataset,
    load_recording,
    save_dataset,
    split_subjects,
    synthesize_dataset,
)
from .preprocess import (
    MAX_TOKENS,
    MIN_OVERLAP_FRAMES,
    NormalizationStats,
    Quaternion,
    TargetSequence,
    Window,
    WindowSpec,
    apply_normalization,
    derive_target_sequence,
    fit_normalization,
    make_windows,
    normalize_frames,
    sensor_centric_transform,
)
from .model import (
    EOS_TOKEN,
    SOS_TOKEN,
    EnsembleModel,
    ModelConfig,
    ModelParams,
    TrainConfig,
    TrainingData,
    TrainingError,
    decode_step,
    encode,
    grad_check,
    init_params,
    load_ensemble,
    load_member,
    loss_gradients,
    save_ensemble,
    save_member,
    sequence_loss,
    train_ensemble,
    train_member,
)
from .decoding import (
    CountingError,
    PrimitiveCounts,
    SessionPrediction,
    WindowPrediction,
    count,
    counting_error,
    decode_window,
    decode_windows,
    stitch_windows,
)
from .evaluation import (
    AlignmentOp,
    AlignmentRecord,
    ConfusionMatrix,
    GroupMetrics,
    Metrics,
    OutcomeTallies,
    aggregate,
    align,
    confusion_matrix,
    f1_score,
    metrics,
    spearman_rho,
    tally,
)
from .baseline import (
    KaiserSmoother,
    LogisticPointwise,
    PointwiseTrack,
    PointwiseTrainConfig,
    StatFeatures,
    collapse,
    collapse_windows,
    extract_features,
    kaiser_weights,
    smooth,
    train_pointwise,
)

__all__ = [
    "CLASSES",
    "EOS_TOKEN",
    "MAX_TOKENS",
    "MIN_OVERLAP_FRAMES",
    "N_CLASSES",
    "SOS_TOKEN",
    "AlignmentOp",
    "AlignmentRecord",
    "ChannelManifest",
    "ConfusionMatrix",
    "CountingError",
    "DataError",
    "DatasetSplit",
    "EnsembleModel",
    "GroupMetrics",
    "IMURecording",
    "KaiserSmoother",
    "LabeledRecording",
    "LogisticPointwise",
    "Metrics",
    "ModelConfig",
    "ModelParams",
    "NormalizationStats",
    "OutcomeTallies",
    "PointwiseTrack",
    "PointwiseTrainConfig",
    "PrimitiveClass",
    "PrimitiveCounts",
    "PrimitiveSegment",
    "Quaternion",
    "SessionPrediction",
    "SubjectInfo",
    "SynthSpec",
    "TargetSequence",
    "TrainConfig",
    "TrainingData",
    "TrainingError",
    "Window",
    "WindowPrediction",
    "WindowSpec",
    "aggregate",
    "align",
    "apply_normalization",
    "collapse",
    "collapse_windows",
    "confusion_matrix",
    "count",
    "counting_error",
    "decode_step",
    "decode_window",
    "decode_windows",
    "default_manifest",
    "derive_target_sequence",
    "encode",
    "extract_features",
    "f1_score",
    "fit_normalization",
    "grad_check",
    "init_params",
    "kaiser_weights",
    "load_dataset",
    "load_ensemble",
    "load_member",
    "load_recording",
    "loss_gradients",
    "make_windows",
    "metrics",
    "normalize_frames",
    "save_dataset",
    "save_ensemble",
    "save_member",
    "sensor_centric_transform",
    "sequence_loss",
    "smooth",
    "spearman_rho",
    "split_subjects",
    "stitch_windows",
    "synthesize_dataset",
    "tally",
    "train_ensemble",
    "train_member",
    "train_pointwise",
    "__version__",
]
