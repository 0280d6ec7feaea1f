"""Coherent-receiver toolkit: photonic hybrid model, balanced detection,
heterodyne QRNG with Toeplitz extraction, randomness tests and CV-QKD
key-rate analysis.
"""

from .errors import (
    AcceptanceError,
    CalibrationError,
    ConfigError,
    CutoffError,
    ExtractionError,
    FitError,
    InsufficientDataError,
    NumericalInstabilityError,
    PhysicalityError,
    QhrxError,
    RangeError,
)
from .pic_optics import PicState, TopsPoly
from .detector import DetectorModel, QuadratureFrame
from .dsp import DspConfig
from .qrng import CalibrationRecord, EntropyReport
from .toeplitz import ToeplitzExtractor
from .rngtests import TestReport, run_suite
from .cvqkd import Constellation, EstimationResult, GaussianState, QkdParams, SkrReport

__all__ = [
    "AcceptanceError",
    "CalibrationError",
    "CalibrationRecord",
    "ConfigError",
    "Constellation",
    "CutoffError",
    "DetectorModel",
    "DspConfig",
    "EntropyReport",
    "EstimationResult",
    "ExtractionError",
    "FitError",
    "GaussianState",
    "InsufficientDataError",
    "NumericalInstabilityError",
    "PhysicalityError",
    "PicState",
    "QhrxError",
    "QkdParams",
    "QuadratureFrame",
    "RangeError",
    "SkrReport",
    "TestReport",
    "ToeplitzExtractor",
    "TopsPoly",
    "run_suite",
]
