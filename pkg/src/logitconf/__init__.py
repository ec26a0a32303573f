"""Confidence estimates for classifiers with Gaussian logits."""

from ._backend import available as available_backends
from ._backend import set_backend, use_backend
from .core import (
    METHODS,
    ClassGaussians,
    DeterministicStream,
    EstimatorConfig,
    FieldConfidence,
    GaussianField,
    QuadratureEstimate,
    ValidationError,
    WinProbabilities,
    confidence_joint_sampling,
    confidence_lower_bound,
    confidence_mc,
    confidence_quadrature,
    field_confidence,
    pairwise_win_prob,
    select_winner,
    softmax_avg_probs,
    std_normal_cdf,
    win_prob_all_classes,
)
from .ensemble import EnsembleField, ensemble_confidence, ensemble_predict
from .metrics import (
    BinStats,
    CalibrationReport,
    ConfusionMatrix,
    accumulate_confusion,
    ace,
    bin_predictions,
    calibration_report,
    ece,
    miou,
)

__version__ = "0.1.0"
