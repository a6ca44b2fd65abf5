"""Class-specific VAE latent interpolation for augmenting small, imbalanced image datasets."""

from .errors import (
    ContractError,
    DataError,
    DimensionError,
    DomainError,
    InsufficientDataError,
    LatentAugError,
    ParseError,
    VersionError,
)
from .tensor import Tensor, backward, grad_check

__version__ = "0.1.0"
