"""
Test factories for kalmatch.
"""

from .tracking_factories import (
    BoundingBoxFactory,
    DetectionFactory,
    MotRowFactory,
    SceneConfigFactory,
    moving_clip,
    permuted_clip,
    scene_detections,
)

__all__ = [
    "BoundingBoxFactory",
    "DetectionFactory",
    "MotRowFactory",
    "SceneConfigFactory",
    "moving_clip",
    "permuted_clip",
    "scene_detections",
]
