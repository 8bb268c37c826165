"""Training binary segmentation networks from noisy masks, with a learned
mask corrector supervised by one-step hypergradients."""

from maskcorrect.autodiff import (
    DivergenceError,
    GradMap,
    Tensor,
    activation,
    bce_with_logits,
    concat_channels,
    conv2d,
    functional_sgd_step,
    grad,
    no_grad,
    spatial_resample,
    tensor,
)

__all__ = [
    "DivergenceError",
    "GradMap",
    "Tensor",
    "activation",
    "bce_with_logits",
    "concat_channels",
    "conv2d",
    "functional_sgd_step",
    "grad",
    "no_grad",
    "spatial_resample",
    "tensor",
]
