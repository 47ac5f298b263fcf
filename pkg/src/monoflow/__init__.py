"""Particle flows rescaled by monotone functions of the log density ratio,
and the generator-training loops that simulate them."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DomainError,
    MonoFlowError,
    NoInteriorMaximum,
    NotMonotone,
    NotPositiveDefinite,
    NumericOverflow,
    Unbounded,
)
from .gaussian import MultivariateGaussian, kl_closed_form, make_rng, toy_init, toy_target  # noqa: E402
from .hfunctions import FDivergenceSpec, HFunction, monotone_registry, parse_h  # noqa: E402
from .ratio import RatioVariant, all_variants  # noqa: E402

__all__ = [
    "ConfigError", "DomainError", "MonoFlowError", "NoInteriorMaximum", "NotMonotone",
    "NotPositiveDefinite", "NumericOverflow", "Unbounded", "MultivariateGaussian", "kl_closed_form",
    "make_rng", "toy_init", "toy_target", "FDivergenceSpec", "HFunction", "monotone_registry",
    "parse_h", "RatioVariant", "all_variants",
]
