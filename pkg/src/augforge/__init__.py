"""Weather augmentation kernels, detection/segmentation metrics and
experiment bookkeeping for adverse-condition robustness studies."""

from .errors import AugforgeError, IoError, ValidationError
from .kernels import AugmentationSpec, apply_spec
from .scene_io import BoxAnnotation, ScenePacket, load_scene, write_scene

__version__ = "0.1.0"

__all__ = [
    "AugforgeError",
    "AugmentationSpec",
    "BoxAnnotation",
    "IoError",
    "ScenePacket",
    "ValidationError",
    "apply_spec",
    "load_scene",
    "write_scene",
]
