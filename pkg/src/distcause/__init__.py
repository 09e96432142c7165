"""Causal inference for distribution-valued outcomes.

Outcomes are represented by quantile functions on a fixed grid; causal maps
are estimated with cross-fitted doubly robust, inverse propensity weighted
and double machine learning estimators.
"""

__version__ = "0.1.0"

from .quantile_space import (  # noqa: E402
    EffectCurve,
    GridMismatchError,
    QuantileCurve,
    QuantileGrid,
    Sample,
    barycenter,
    empirical_quantile,
    wasserstein2,
)
from .basis import BSplineBasis  # noqa: E402
from .estimators import CausalMapEstimate, UnitData, cross_fit, effect, estimate  # noqa: E402
from .synthetic import DgpConfig, generate  # noqa: E402

__all__ = [
    "BSplineBasis",
    "CausalMapEstimate",
    "DgpConfig",
    "EffectCurve",
    "GridMismatchError",
    "QuantileCurve",
    "QuantileGrid",
    "Sample",
    "UnitData",
    "barycenter",
    "cross_fit",
    "effect",
    "empirical_quantile",
    "estimate",
    "generate",
    "wasserstein2",
]
