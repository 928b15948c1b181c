"""Offline alignment of recordings from independent body-worn sensor devices.

Pressure traces decide whether two recordings overlap in time and give a
coarse constant lag; accelerometer magnitudes then refine it into a linear
clock model (offset and skew).
"""

from .model import (
    AlignmentReport,
    ClockModel,
    FifoReadout,
    LagEstimate,
    Method,
    Recording,
    SensorTrace,
    TraceKind,
    Verdict,
    WindowLag,
    compose_time_axes,
    lag_at,
)
from .pipeline import PipelineConfig, PipelineError, synchronize_group, synchronize_pair

__version__ = "0.1.0"

__all__ = [
    "AlignmentReport",
    "ClockModel",
    "FifoReadout",
    "LagEstimate",
    "Method",
    "PipelineConfig",
    "PipelineError",
    "Recording",
    "SensorTrace",
    "TraceKind",
    "Verdict",
    "WindowLag",
    "compose_time_axes",
    "lag_at",
    "synchronize_group",
    "synchronize_pair",
]
