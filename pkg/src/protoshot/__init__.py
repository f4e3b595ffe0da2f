"""Prototype-based few-shot explanation toolkit for small CNNs.

The pipeline: load or train a model bundle, split it at its feature layer,
build class prototypes from seeded support sets, then score queries with a
weighted cosine similarity and explain them by occlusion attribution,
rotation sweeps, region ablation, and adversarial score analysis.
"""

from .architectures import (
    compact_digit_cnn,
    digit_cnn,
    fewshot_embedder,
    init_weights,
    vgg16,
)
from .data import (
    LabeledDataset,
    SupportSet,
    augment_rotations,
    read_idx,
    read_pgm_dir,
    select_support_set,
)
from .engine import (
    AttributionMap,
    Prototype,
    ScoreRecord,
    attribution_map,
    compute_prototype,
    exmatchina_star,
    normalize_for_display,
    protoshot_score,
    saliency_map,
)
from .errors import (
    FormatError,
    NonFiniteError,
    ProtoshotError,
    ShapeMismatchError,
    UnsupportedLayerError,
    ValidationError,
    WeightLookupError,
)
from .experiments import (
    RocCurve,
    SweepTrace,
    detector_roc,
    fgsm_generate,
    region_ablation,
    rotate_image,
    rotation_sweep,
    score_distributions,
)
from .model import (
    ClassHead,
    FeatureExtractor,
    ModelBundle,
    count_parameters,
    load_model,
    predict,
    save_model,
    split_model,
)
from .network import (
    finite_difference_gradient,
    input_gradient,
    network_forward,
)
from .rng import Rng
from .training import TrainConfig, evaluate_accuracy, train

__version__ = "0.1.0"

__all__ = [
    "AttributionMap",
    "ClassHead",
    "FeatureExtractor",
    "FormatError",
    "LabeledDataset",
    "ModelBundle",
    "NonFiniteError",
    "ProtoshotError",
    "Prototype",
    "Rng",
    "RocCurve",
    "ScoreRecord",
    "ShapeMismatchError",
    "SupportSet",
    "SweepTrace",
    "TrainConfig",
    "UnsupportedLayerError",
    "ValidationError",
    "WeightLookupError",
    "attribution_map",
    "augment_rotations",
    "compact_digit_cnn",
    "compute_prototype",
    "count_parameters",
    "detector_roc",
    "digit_cnn",
    "evaluate_accuracy",
    "exmatchina_star",
    "fewshot_embedder",
    "fgsm_generate",
    "finite_difference_gradient",
    "init_weights",
    "input_gradient",
    "load_model",
    "network_forward",
    "normalize_for_display",
    "predict",
    "protoshot_score",
    "read_idx",
    "read_pgm_dir",
    "region_ablation",
    "rotate_image",
    "rotation_sweep",
    "saliency_map",
    "save_model",
    "score_distributions",
    "select_support_set",
    "split_model",
    "train",
    "vgg16",
]
