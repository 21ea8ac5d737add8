"""Unsupervised semantic segmentation pipeline for degraded grayscale tiles.

The pipeline turns class-agnostic mask proposals and frozen dense features
into pixel-wise pseudo-labels, trains a lightweight head against
confidence-weighted targets, refines predictions with a mean-field CRF,
and scores them with Hungarian-matched mIoU / overall accuracy.
"""

from unsupseg.errors import (
    ConfigError,
    DataError,
    FormatError,
    ManifestError,
    UnsupsegError,
)

__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "ManifestError",
    "UnsupsegError",
]

__version__ = "0.1.0"
