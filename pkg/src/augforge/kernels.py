"""Physics-based, parameterizable augmentation kernels.

Every kernel is a pure function of ``(scene, params, seed)``. Colour math runs
in float32 on [0, 1] and is re-quantized to 8 bits with round-half-to-even at
the end of each kernel, so identical inputs give byte-identical outputs.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields, replace
from typing import Any, Mapping, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidParams, MissingSegmap, SpaceTooSmall, ValidationError
from .prng import SplitMix64, child_seed
from .scene_io import BoxAnnotation, ScenePacket, valid_depth_mask
from .search import ParamSpace, param_key

KERNELS = ("fog", "rain", "wet_reflection", "hflip", "composite")

# Cityscapes label id of "road"
DEFAULT_ROAD_CLASS_IDS = (7,)

STREAK_COLOR = np.float32(1.0)
RAIN_REFLECTION_ATTENUATION = 0.97
SEED_MASK = (1 << 64) - 1


def to_unit(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float32) / np.float32(255.0)


def quantize(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8, rounding half to even."""
    scaled = np.clip(image, 0.0, 1.0).astype(np.float32) * np.float32(255.0)
    return np.rint(scaled).astype(np.uint8)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise InvalidParams(msg)


# ---------------------------------------------------------------- parameters

@dataclass(frozen=True)
class FogParams:
    beta: float = 0.05
    airlight: tuple = (0.8, 0.8, 0.8)
    depth_fill: float = 1000.0

    def __post_init__(self) -> None:
        airlight = self.airlight
        if isinstance(airlight, (int, float)):
            airlight = (float(airlight),) * 3
        object.__setattr__(self, "airlight", tuple(float(a) for a in airlight))
        _check(math.isfinite(self.beta) and self.beta >= 0, f"fog beta must be >= 0, got {self.beta}")
        _check(len(self.airlight) == 3, "fog airlight must be an RGB triple")
        _check(all(0.0 <= a <= 1.0 for a in self.airlight), f"fog airlight channels must lie in [0,1], got {self.airlight}")
        _check(math.isfinite(self.depth_fill) and self.depth_fill > 0, f"fog depth_fill must be > 0, got {self.depth_fill}")


@dataclass(frozen=True)
class RainParams:
    streak_density: float = 200.0
    streak_length_px: float = 12.0
    streak_angle_deg: float = 10.0
    streak_alpha: float = 0.5
    drop_blur_sigma: float = 0.5
    wetness: float = 0.0
    reflectivity: float = 0.0
    road_class_ids: tuple = DEFAULT_ROAD_CLASS_IDS

    def __post_init__(self) -> None:
        object.__setattr__(self, "road_class_ids", tuple(int(c) for c in self.road_class_ids))
        _check(self.streak_density >= 0, f"streak_density must be >= 0, got {self.streak_density}")
        _check(self.streak_length_px > 0, f"streak_length_px must be > 0, got {self.streak_length_px}")
        _check(-45 <= self.streak_angle_deg <= 45, f"streak_angle_deg must lie in [-45,45], got {self.streak_angle_deg}")
        _check(0 <= self.streak_alpha <= 1, f"streak_alpha must lie in [0,1], got {self.streak_alpha}")
        _check(self.drop_blur_sigma >= 0, f"drop_blur_sigma must be >= 0, got {self.drop_blur_sigma}")
        _check(0 <= self.wetness <= 1, f"wetness must lie in [0,1], got {self.wetness}")
        _check(0 <= self.reflectivity <= 1, f"reflectivity must lie in [0,1], got {self.reflectivity}")
        _check(len(self.road_class_ids) > 0, "road_class_ids must be non-empty")


@dataclass(frozen=True)
class ReflectionParams:
    road_class_ids: tuple = DEFAULT_ROAD_CLASS_IDS
    reflectivity: float = 0.3
    blur_sigma: float = 1.0
    attenuation_per_row: float = 0.97

    def __post_init__(self) -> None:
        object.__setattr__(self, "road_class_ids", tuple(int(c) for c in self.road_class_ids))
        _check(len(self.road_class_ids) > 0, "road_class_ids must be non-empty")
        _check(0 <= self.reflectivity <= 1, f"reflectivity must lie in [0,1], got {self.reflectivity}")
        _check(self.blur_sigma >= 0, f"blur_sigma must be >= 0, got {self.blur_sigma}")
        _check(0 < self.attenuation_per_row <= 1, f"attenuation_per_row must lie in (0,1], got {self.attenuation_per_row}")


@dataclass(frozen=True)
class FlipParams:
    pass


PARAM_TYPES = {
    "fog": FogParams,
    "rain": RainParams,
    "wet_reflection": ReflectionParams,
    "hflip": FlipParams,
}

# tag an augmented packet carries after each kernel; None keeps the input's
KERNEL_TAGS = {"fog": "fog", "rain": "rain", "wet_reflection": "rain", "hflip": None}


def _params_to_dict(params: Any) -> dict:
    out = {}
    for f in fields(params):
        v = getattr(params, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def make_params(kernel: str, values: Optional[Mapping] = None):
    """Kernel defaults overridden by ``values`` (unknown names rejected)."""
    if kernel not in PARAM_TYPES:
        raise InvalidParams(f"unknown kernel {kernel!r}; expected one of {tuple(PARAM_TYPES)}")
    cls = PARAM_TYPES[kernel]
    values = dict(values or {})
    allowed = {f.name for f in fields(cls)}
    unknown = set(values) - allowed
    if unknown:
        raise InvalidParams(f"unknown {kernel} parameters {sorted(unknown)}; allowed {sorted(allowed)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise InvalidParams(f"bad {kernel} parameters: {exc}") from exc


@dataclass(frozen=True)
class AugmentationSpec:
    """A kernel, its fully bound parameters and a 64-bit seed.

    For ``composite`` the params are a tuple of child specs applied in order;
    child ``i`` runs with seed ``child_seed(seed, i)`` and its own seed field
    is ignored.
    """

    kernel: str
    params: Any
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kernel not in KERNELS:
            raise InvalidParams(f"unknown kernel {self.kernel!r}")
        if not 0 <= int(self.seed) <= SEED_MASK:
            raise InvalidParams(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.kernel == "composite":
            children = tuple(self.params)
            if not all(isinstance(c, AugmentationSpec) for c in children):
                raise InvalidParams("composite params must be a sequence of AugmentationSpec")
            object.__setattr__(self, "params", children)
        elif self.params is None:
            object.__setattr__(self, "params", PARAM_TYPES[self.kernel]())
        elif isinstance(self.params, Mapping):
            object.__setattr__(self, "params", make_params(self.kernel, self.params))
        elif not isinstance(self.params, PARAM_TYPES[self.kernel]):
            raise InvalidParams(f"{self.kernel} spec needs {PARAM_TYPES[self.kernel].__name__}, got {type(self.params).__name__}")

    def to_dict(self) -> dict:
        if self.kernel == "composite":
            params = {"children": [c.to_dict() for c in self.params]}
        else:
            params = _params_to_dict(self.params)
        return {"kernel": self.kernel, "params": params, "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AugmentationSpec":
        try:
            kernel = d["kernel"]
            params = d.get("params") or {}
            seed = int(d.get("seed", 0))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidParams(f"malformed augmentation spec {d!r}") from exc
        if kernel == "composite":
            return cls(kernel, tuple(cls.from_dict(c) for c in params.get("children", [])), seed)
        return cls(kernel, make_params(kernel, params), seed)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def spec_id(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------- fog

def koschmieder(intensity, airlight, beta, depth):
    """``I*t + A*(1-t)`` with transmission ``t = exp(-beta*d)``."""
    t = np.exp(-beta * depth)
    return intensity * t + airlight * (1 - t)


def effective_depth(scene: ScenePacket, depth_fill: float) -> np.ndarray:
    if scene.depth is None:
        return np.full((scene.height, scene.width), depth_fill, dtype=np.float32)
    return np.where(valid_depth_mask(scene.depth), scene.depth, np.float32(depth_fill)).astype(np.float32)


def apply_fog(scene: ScenePacket, params: FogParams) -> np.ndarray:
    d = effective_depth(scene, params.depth_fill)
    t = np.exp(-np.float32(params.beta) * d)[..., None]
    airlight = np.asarray(params.airlight, dtype=np.float32)
    out = to_unit(scene.image) * t + airlight * (np.float32(1.0) - t)
    return quantize(out)


# ---------------------------------------------------------------- reflection

def mirror_blend(
    image: np.ndarray,
    road_mask: np.ndarray,
    reflectivity: float,
    attenuation_per_row: float,
    blur_sigma: float = 0.0,
) -> tuple:
    """Float-level wet-road reflection.

    In each column with road pixels, let ``r0`` be the topmost road row. Road
    pixel ``r0 + k`` is blended with source pixel ``r0 - 1 - k`` (mirror about
    the road's upper edge) with weight ``reflectivity * attenuation**k``.
    Returns ``(blended float image, mask of pixels that received a blend)``.
    """
    img = np.asarray(image, dtype=np.float32)
    h, w = road_mask.shape
    has_road = road_mask.any(axis=0)
    r0 = np.argmax(road_mask, axis=0)
    rows = np.arange(h)[:, None]
    k = rows - r0[None, :]
    src = r0[None, :] - 1 - k
    touched = road_mask & has_road[None, :] & (k >= 0) & (src >= 0)

    cols = np.broadcast_to(np.arange(w)[None, :], (h, w))
    layer = img.copy()
    layer[touched] = img[src[touched], cols[touched]]
    if blur_sigma > 0:
        layer = gaussian_filter(layer, sigma=(blur_sigma, blur_sigma, 0), mode="nearest")

    weight = np.zeros((h, w), dtype=np.float32)
    kk = k[touched].astype(np.float64)
    weight[touched] = (reflectivity * np.power(float(attenuation_per_row), kk)).astype(np.float32)
    wgt = weight[..., None]
    out = img.copy()
    blend = img * (np.float32(1.0) - wgt) + layer * wgt
    out[touched] = blend[touched]
    return out, touched


def road_mask_of(scene: ScenePacket, road_class_ids: Sequence[int]) -> np.ndarray:
    return np.isin(scene.segmap, np.asarray(road_class_ids, dtype=np.int64))


def apply_wet_road_reflection(scene: ScenePacket, params: ReflectionParams) -> np.ndarray:
    if scene.segmap is None:
        raise MissingSegmap(f"scene {scene.id!r}: wet_reflection needs a segmentation map")
    mask = road_mask_of(scene, params.road_class_ids)
    blended, touched = mirror_blend(
        to_unit(scene.image), mask, params.reflectivity, params.attenuation_per_row, params.blur_sigma
    )
    out = scene.image.copy()
    out[touched] = quantize(blended[touched])
    return out


# ---------------------------------------------------------------- rain

def streak_count(height: int, width: int, density: float) -> int:
    return int(round(density * height * width / 1e6))


def rain_streak_anchors(height: int, width: int, params: RainParams, seed: int) -> np.ndarray:
    """Streak start points ``(x, y)`` drawn from SplitMix64(seed), x first."""
    n = streak_count(height, width, params.streak_density)
    rng = SplitMix64(seed)
    pts = np.empty((n, 2), dtype=np.float64)
    for i in range(n):
        pts[i, 0] = rng.random() * width
        pts[i, 1] = rng.random() * height
    return pts


def render_streak_layer(height: int, width: int, anchors: np.ndarray, params: RainParams) -> np.ndarray:
    """Anti-aliased streak coverage in [0, 1], blurred when requested.

    Each streak is sampled every <= 0.5 px along its length and splatted
    bilinearly; sample weight equals the step so coverage is ~1 per pixel.
    """
    layer = np.zeros(height * width, dtype=np.float64)
    if len(anchors):
        length = float(params.streak_length_px)
        theta = math.radians(params.streak_angle_deg)
        n_samples = max(2, int(math.ceil(2 * length)) + 1)
        t = np.linspace(0.0, length, n_samples)
        step = length / (n_samples - 1)
        # pixel centres sit at integer + 0.5
        px = (anchors[:, 0:1] + t[None, :] * math.sin(theta) - 0.5).ravel()
        py = (anchors[:, 1:2] + t[None, :] * math.cos(theta) - 0.5).ravel()
        x0 = np.floor(px).astype(np.int64)
        y0 = np.floor(py).astype(np.int64)
        fx = px - x0
        fy = py - y0
        for dx, dy, wgt in (
            (0, 0, (1 - fx) * (1 - fy)),
            (1, 0, fx * (1 - fy)),
            (0, 1, (1 - fx) * fy),
            (1, 1, fx * fy),
        ):
            xs, ys = x0 + dx, y0 + dy
            ok = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
            np.add.at(layer, ys[ok] * width + xs[ok], wgt[ok] * step)
    layer = np.clip(layer.reshape(height, width), 0.0, 1.0)
    if params.drop_blur_sigma > 0:
        layer = gaussian_filter(layer, sigma=params.drop_blur_sigma, mode="constant")
    return layer.astype(np.float32)


def apply_rain(scene: ScenePacket, params: RainParams, seed: int) -> np.ndarray:
    """Darken (and optionally reflect on) wet road, then composite streaks.

    Road pixels are scaled by ``1 - 0.5*wetness``; the wet-road mirror uses
    weight ``reflectivity * wetness`` so a dry road never reflects.
    """
    if params.wetness > 0 and scene.segmap is None:
        raise MissingSegmap(f"scene {scene.id!r}: rain wetness > 0 needs a segmentation map")
    base = to_unit(scene.image)
    if params.wetness > 0:
        road = road_mask_of(scene, params.road_class_ids)
        base[road] *= np.float32(1.0 - params.wetness * 0.5)
        strength = params.reflectivity * params.wetness
        if strength > 0:
            base, _ = mirror_blend(base, road, strength, RAIN_REFLECTION_ATTENUATION)
    anchors = rain_streak_anchors(scene.height, scene.width, params, seed)
    alpha = render_streak_layer(scene.height, scene.width, anchors, params) * np.float32(params.streak_alpha)
    a = alpha[..., None]
    out = base * (np.float32(1.0) - a) + STREAK_COLOR * a
    return quantize(out)


# ---------------------------------------------------------------- flip

def flip_box(box: BoxAnnotation, width: int) -> BoxAnnotation:
    return replace(box, x_min=width - box.x_max, x_max=width - box.x_min)


def horizontal_flip(scene: ScenePacket) -> ScenePacket:
    w = scene.width
    return replace(
        scene,
        image=scene.image[:, ::-1],
        depth=None if scene.depth is None else scene.depth[:, ::-1],
        segmap=None if scene.segmap is None else scene.segmap[:, ::-1],
        annotations=None if scene.annotations is None else tuple(flip_box(b, w) for b in scene.annotations),
    )


# ---------------------------------------------------------------- dispatch

def apply_spec(scene: ScenePacket, spec: AugmentationSpec) -> ScenePacket:
    if spec.kernel == "composite":
        for i, child in enumerate(spec.params):
            scene = apply_spec(scene, replace(child, seed=child_seed(spec.seed, i)))
        return scene
    if spec.kernel == "hflip":
        return horizontal_flip(scene)
    if spec.kernel == "fog":
        if spec.params.beta == 0:
            return scene  # no extinction: nothing to render, tag unchanged
        image = apply_fog(scene, spec.params)
    elif spec.kernel == "rain":
        image = apply_rain(scene, spec.params, spec.seed)
    else:
        image = apply_wet_road_reflection(scene, spec.params)
    return scene.with_image(image, KERNEL_TAGS[spec.kernel])


def draw_unique_specs(
    kernel: str,
    param_space: ParamSpace,
    k: int,
    seed: int,
    base_params: Optional[Mapping] = None,
) -> list:
    """``k`` specs whose parameter vectors are pairwise distinct draws from
    ``param_space``; spec ``i`` gets seed ``child_seed(seed, i)``."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if kernel not in PARAM_TYPES:
        raise InvalidParams(f"kernel {kernel!r} cannot be drawn from a parameter space")
    rng = SplitMix64(seed)
    size = param_space.discrete_size()
    if size is not None:
        if size < k:
            raise SpaceTooSmall(f"space has {size} distinct points, {k} requested")
        points = param_space.grid(1)
        rng.shuffle(points)
        draws = points[:k]
    else:
        draws, seen = [], set()
        attempts = 0
        while len(draws) < k:
            attempts += 1
            if attempts > 1000 * k:
                raise SpaceTooSmall(f"could not draw {k} distinct points")
            p = param_space.sample(rng)
            key = param_key(p)
            if key not in seen:
                seen.add(key)
                draws.append(p)
    base = dict(base_params or {})
    return [
        AugmentationSpec(kernel, make_params(kernel, {**base, **p}), child_seed(seed, i))
        for i, p in enumerate(draws)
    ]


def generate_k_unique(
    scene: ScenePacket,
    kernel: str,
    param_space: ParamSpace,
    k: int,
    seed: int,
    base_params: Optional[Mapping] = None,
) -> list:
    """Render ``k`` distinct augmentations of one scene as ``(spec, packet)``."""
    specs = draw_unique_specs(kernel, param_space, k, seed, base_params)
    return [(spec, apply_spec(scene, spec)) for spec in specs]
