"""Scene packets and their on-disk representation.

A scene is stored as up to four sibling files sharing the scene id::

    <id>.png          8-bit RGB image; condition tag kept in a PNG text chunk
    <id>_depth.pfm    single-channel little-endian PFM, meters
    <id>_seg.png      8-bit single-channel class indices
    <id>.jsonl        one box per line: class_id, x_min, y_min, x_max, y_max

Depth values that are not strictly positive mark invalid pixels; kernels
substitute a fill depth there.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, PngImagePlugin, UnidentifiedImageError

from .errors import DecodeError, DimensionMismatch, InvalidDepth, IoError, MalformedAnnotation, ValidationError

CONDITION_TAGS = ("clear", "rain", "fog", "other")
TAG_KEY = "condition_tag"

DEPTH_SUFFIX = "_depth.pfm"
SEG_SUFFIX = "_seg.png"


@dataclass(frozen=True)
class BoxAnnotation:
    class_id: int
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if isinstance(self.class_id, bool) or not isinstance(self.class_id, (int, np.integer)) or self.class_id < 0:
            raise MalformedAnnotation(f"class_id must be a non-negative integer, got {self.class_id!r}")
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(np.isfinite(c) for c in coords):
            raise MalformedAnnotation(f"non-finite box coordinates {coords}")
        if not self.x_min < self.x_max:
            raise MalformedAnnotation(f"x_min {self.x_min} must be < x_max {self.x_max}")
        if not self.y_min < self.y_max:
            raise MalformedAnnotation(f"y_min {self.y_min} must be < y_max {self.y_max}")

    def to_dict(self) -> dict:
        return {
            "class_id": int(self.class_id),
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoxAnnotation":
        try:
            return cls(
                class_id=d["class_id"],
                x_min=float(d["x_min"]),
                y_min=float(d["y_min"]),
                x_max=float(d["x_max"]),
                y_max=float(d["y_max"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MalformedAnnotation):
                raise
            raise MalformedAnnotation(f"bad annotation record {d!r}: {exc}") from exc

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x_min and self.x_max <= width and 0 <= self.y_min and self.y_max <= height


def _frozen(a: Optional[np.ndarray], dtype) -> Optional[np.ndarray]:
    if a is None:
        return None
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScenePacket:
    """Image plus optional depth (float32 meters), segmap (uint8) and boxes.

    Arrays are copied and made read-only on construction.
    """

    id: str
    image: np.ndarray
    depth: Optional[np.ndarray] = None
    segmap: Optional[np.ndarray] = None
    annotations: Optional[tuple] = None
    condition_tag: str = "clear"

    def __post_init__(self) -> None:
        image = np.asarray(self.image)
        if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
            raise ValidationError(f"image must be HxWx3 uint8, got shape {image.shape} dtype {image.dtype}")
        object.__setattr__(self, "image", _frozen(image, np.uint8))
        object.__setattr__(self, "depth", _frozen(self.depth, np.float32))
        object.__setattr__(self, "segmap", _frozen(self.segmap, np.uint8))
        if self.annotations is not None:
            object.__setattr__(self, "annotations", tuple(self.annotations))
        validate_scene(self)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def with_image(self, image: np.ndarray, condition_tag: Optional[str] = None) -> "ScenePacket":
        return replace(self, image=image, condition_tag=condition_tag or self.condition_tag)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScenePacket):
            return NotImplemented
        return (
            self.id == other.id
            and self.condition_tag == other.condition_tag
            and _arrays_equal(self.image, other.image)
            and _arrays_equal(self.depth, other.depth)
            and _arrays_equal(self.segmap, other.segmap)
            and self.annotations == other.annotations
        )

    __hash__ = None  # type: ignore[assignment]


def _arrays_equal(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


def validate_scene(scene: ScenePacket) -> None:
    h, w = scene.image.shape[:2]
    if scene.condition_tag not in CONDITION_TAGS:
        raise ValidationError(f"condition_tag must be one of {CONDITION_TAGS}, got {scene.condition_tag!r}")
    for name, raster in (("depth", scene.depth), ("segmap", scene.segmap)):
        if raster is None:
            continue
        if raster.ndim != 2 or raster.shape != (h, w):
            raise DimensionMismatch(f"{name} shape {raster.shape} differs from image {(h, w)}")
    if scene.depth is not None and not np.all(np.isfinite(scene.depth)):
        raise InvalidDepth("depth contains non-finite values")
    for box in scene.annotations or ():
        if not isinstance(box, BoxAnnotation):
            raise MalformedAnnotation(f"expected BoxAnnotation, got {type(box).__name__}")
        if not box.within(w, h):
            raise MalformedAnnotation(f"box {box.to_dict()} outside image bounds {w}x{h}")


def valid_depth_mask(depth: np.ndarray) -> np.ndarray:
    return np.isfinite(depth) & (depth > 0)


# ---------------------------------------------------------------- PFM

def read_pfm(path: os.PathLike) -> np.ndarray:
    """Read a single-channel PFM into a top-down float32 array."""
    try:
        with open(path, "rb") as fh:
            header = fh.readline().strip()
            if header != b"Pf":
                raise DecodeError(f"{path}: not a single-channel PFM (header {header!r})")
            dims = fh.readline().split()
            scale = float(fh.readline().strip())
            width, height = int(dims[0]), int(dims[1])
            data = fh.read()
    except IoError:
        raise
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    except (ValueError, IndexError) as exc:
        raise DecodeError(f"{path}: malformed PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    if len(data) != width * height * 4:
        raise DecodeError(f"{path}: expected {width * height * 4} data bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype=dtype).reshape(height, width)
    # PFM rows run bottom to top
    return np.flipud(arr).astype(np.float32)


def write_pfm(path: os.PathLike, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype="<f4")
    height, width = depth.shape
    try:
        with open(path, "wb") as fh:
            fh.write(b"Pf\n")
            fh.write(f"{width} {height}\n".encode("ascii"))
            fh.write(b"-1.0\n")
            fh.write(np.ascontiguousarray(np.flipud(depth)).tobytes())
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------- PNG

def _open_png(path: os.PathLike) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except FileNotFoundError as exc:
        raise IoError(f"{path}: no such file") from exc
    except (UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode image: {exc}") from exc
    except OSError as exc:
        raise DecodeError(f"{path}: {exc}") from exc


def read_image(path: os.PathLike) -> tuple:
    """Return ``(rgb uint8 array, condition_tag or None)``."""
    img = _open_png(path)
    if img.mode not in ("RGB", "RGBA", "L", "P", "LA"):
        raise DecodeError(f"{path}: mode {img.mode} is not 8-bit RGB")
    tag = img.info.get(TAG_KEY) if hasattr(img, "info") else None
    rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return rgb, tag


def read_segmap(path: os.PathLike) -> np.ndarray:
    img = _open_png(path)
    if img.mode not in ("L", "P"):
        raise DecodeError(f"{path}: segmap must be 8-bit single channel, got mode {img.mode}")
    return np.asarray(img, dtype=np.uint8)


def write_png(path: os.PathLike, array: np.ndarray, text: Optional[dict] = None) -> None:
    info = None
    if text:
        info = PngImagePlugin.PngInfo()
        for k, v in text.items():
            info.add_text(k, v)
    try:
        Image.fromarray(np.ascontiguousarray(array)).save(path, format="PNG", pnginfo=info)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------- JSONL

def read_jsonl(path: os.PathLike) -> list:
    records = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DecodeError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
    except IoError:
        raise
    except FileNotFoundError as exc:
        raise IoError(f"{path}: no such file") from exc
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    return records


def write_jsonl(path: os.PathLike, records: Sequence[dict]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def read_annotations(path: os.PathLike) -> list:
    return [BoxAnnotation.from_dict(rec) for rec in read_jsonl(path)]


# ---------------------------------------------------------------- scenes

def load_scene(
    image_path: os.PathLike,
    depth_path: Optional[os.PathLike] = None,
    segmap_path: Optional[os.PathLike] = None,
    annotation_path: Optional[os.PathLike] = None,
    scene_id: Optional[str] = None,
    condition_tag: Optional[str] = None,
) -> ScenePacket:
    image, stored_tag = read_image(image_path)
    depth = read_pfm(depth_path) if depth_path is not None else None
    segmap = read_segmap(segmap_path) if segmap_path is not None else None
    annotations = read_annotations(annotation_path) if annotation_path is not None else None
    return ScenePacket(
        id=scene_id or Path(image_path).stem,
        image=image,
        depth=depth,
        segmap=segmap,
        annotations=annotations,
        condition_tag=condition_tag or stored_tag or "clear",
    )


def scene_paths(directory: os.PathLike, scene_id: str) -> dict:
    d = Path(directory)
    return {
        "image": d / f"{scene_id}.png",
        "depth": d / f"{scene_id}{DEPTH_SUFFIX}",
        "segmap": d / f"{scene_id}{SEG_SUFFIX}",
        "annotations": d / f"{scene_id}.jsonl",
    }


def write_scene(scene: ScenePacket, out_dir: os.PathLike) -> list:
    """Write every present field of ``scene``; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"{out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise IoError(f"{out}: directory is not writable")
    paths = scene_paths(out, scene.id)
    written = []
    write_png(paths["image"], scene.image, {TAG_KEY: scene.condition_tag})
    written.append(paths["image"])
    if scene.depth is not None:
        write_pfm(paths["depth"], scene.depth)
        written.append(paths["depth"])
    if scene.segmap is not None:
        write_png(paths["segmap"], scene.segmap)
        written.append(paths["segmap"])
    if scene.annotations is not None:
        write_jsonl(paths["annotations"], [b.to_dict() for b in scene.annotations])
        written.append(paths["annotations"])
    return written


def load_scene_dir(directory: os.PathLike, scene_id: str) -> ScenePacket:
    """Load a scene written by :func:`write_scene`, picking up whichever
    optional sibling files exist."""
    paths = scene_paths(directory, scene_id)
    return load_scene(
        paths["image"],
        depth_path=paths["depth"] if paths["depth"].exists() else None,
        segmap_path=paths["segmap"] if paths["segmap"].exists() else None,
        annotation_path=paths["annotations"] if paths["annotations"].exists() else None,
        scene_id=scene_id,
    )


def discover_scenes(directory: os.PathLike) -> list:
    """Scene ids in ``directory``, sorted."""
    d = Path(directory)
    if not d.is_dir():
        raise IoError(f"{d}: not a directory")
    ids = [p.stem for p in d.glob("*.png") if not p.name.endswith(SEG_SUFFIX)]
    return sorted(ids)


def load_scenes(directory: os.PathLike) -> list:
    return [load_scene_dir(directory, sid) for sid in discover_scenes(directory)]
