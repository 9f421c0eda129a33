"""Numpy Vision Transformer engine for binary wildfire image classification."""

from vitforge.errors import (
    ConfigError,
    DecodeError,
    DimensionError,
    FormatError,
    LabelError,
    NumericFault,
    StateError,
    UndefinedMetricError,
    VitForgeError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DecodeError",
    "DimensionError",
    "FormatError",
    "LabelError",
    "NumericFault",
    "StateError",
    "UndefinedMetricError",
    "VitForgeError",
]
