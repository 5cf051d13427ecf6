"""Spatial-temporal dynamic prompting on a frozen toy video-text model."""

from .encoders import FrozenClipModel, ModelConfig, baseline_video_encode, text_encode, verify_frozen
from .stopcore import Diagnostics, StopHyper, StopParams, stop_encode_batch, stop_video_encode

__version__ = "0.1.0"

__all__ = [
    "FrozenClipModel", "ModelConfig", "baseline_video_encode", "text_encode", "verify_frozen",
    "Diagnostics", "StopHyper", "StopParams", "stop_encode_batch", "stop_video_encode",
]
