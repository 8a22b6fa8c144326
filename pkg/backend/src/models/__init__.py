"""
Models package - plain domain types shared by the services
"""

from .detection import BoundingBox, Detection, DetectionClip
from .gaussian import FilterStep, GaussianBelief, KalmanParams, SmoothedTrajectory
from .mot import MotRow
from .track import Track, TrackState

__all__ = [
    "BoundingBox",
    "Detection",
    "DetectionClip",
    "FilterStep",
    "GaussianBelief",
    "KalmanParams",
    "MotRow",
    "SmoothedTrajectory",
    "Track",
    "TrackState",
]
