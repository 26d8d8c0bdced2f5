"""Simulation and analysis of a cold-atom quantum memory with telecom frequency conversion."""

from __future__ import annotations

from .errors import (
    ConfigError,
    DomainError,
    EmptyStreamsError,
    FitError,
    InfiniteEstimateError,
    MemQfcError,
    NoMaximumError,
    NumericalError,
    StreamFormatError,
)
from .qfc import QfcParams, device_efficiency, snr_predict
from .stats import PairNumberModel, g2_cross_ideal, predict_g2_after_conversion
from .streams import TagStream, read_stream, write_stream

__version__ = "0.1.0"
