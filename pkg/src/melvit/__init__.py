"""melvit: a desk-scale mel-spectrogram audio classification workbench.

Dense tensors with reverse-mode autodiff, a log-mel frontend, ratio-driven
augmentations, a class-rebalancing oversampler, four end-to-end trained
architectures (CNN, SubSpectral classifier, ViT, vertical ViT), UAR
evaluation, and a TPE hyper-parameter search.
"""

from .autodiff import Tensor, backward
from .rng import Rng

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "Rng", "__version__"]
