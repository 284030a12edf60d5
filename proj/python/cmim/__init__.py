"""Python bindings for the cmim C++ core."""

from ._cmim import (
    TrainConfig,
    class_centroid,
    class_cmi,
    cmi_alpha_derivative,
    cmi_profile,
    cross_entropy,
    dataset_cmi,
    distillability_verdict,
    generate_gaussian_mixture,
    kl_divergence,
    nll_covariance,
    nll_moments,
    power_transform,
    predict_probs,
    simplex_point,
    smooth_max,
    softmax,
    train,
)

__all__ = [
    "TrainConfig",
    "class_centroid",
    "class_cmi",
    "cmi_alpha_derivative",
    "cmi_profile",
    "cross_entropy",
    "dataset_cmi",
    "distillability_verdict",
    "generate_gaussian_mixture",
    "kl_divergence",
    "nll_covariance",
    "nll_moments",
    "power_transform",
    "predict_probs",
    "simplex_point",
    "smooth_max",
    "softmax",
    "train",
]
