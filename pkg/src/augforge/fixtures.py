"""Procedurally generated street scenes for smoke tests and demos.

Scenes have a sky, a building band and a road (Cityscapes label ids 23, 11,
7) with a few cars (label 26, class 0) and pedestrians (label 24, class 1)
standing on the road. Depth grows towards the horizon; sky depth is 0, the
invalid sentinel.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .metrics import Detection
from .prng import SplitMix64, derive_seed
from .scene_io import BoxAnnotation, ScenePacket, write_jsonl, write_scene

SKY, BUILDING, ROAD, PERSON, CAR = 23, 11, 7, 24, 26
CLASS_OF_LABEL = {CAR: 0, PERSON: 1}


def make_scene(scene_id: str, height: int = 64, width: int = 64, seed: int = 0, condition_tag: str = "clear") -> ScenePacket:
    rng = SplitMix64(seed)
    horizon = int(height * (0.40 + 0.1 * rng.random()))
    skyline = max(1, horizon - int(height * (0.1 + 0.1 * rng.random())))
    rows = np.arange(height, dtype=np.float32)[:, None]

    seg = np.full((height, width), ROAD, dtype=np.uint8)
    seg[:skyline] = SKY
    seg[skyline:horizon] = BUILDING

    img = np.zeros((height, width, 3), dtype=np.float32)
    sky_t = rows / max(horizon, 1)
    img[:] = np.concatenate([0.45 + 0.3 * sky_t, 0.6 + 0.2 * sky_t, 0.85 + 0.1 * sky_t], axis=1)[:, None, :]
    img[seg == BUILDING] = (0.55, 0.5, 0.45)
    img[seg == ROAD] = (0.35, 0.35, 0.37)
    for x in range(0, width, max(4, width // 8)):
        img[(seg[:, x] == ROAD), x] = (0.8, 0.8, 0.75)

    depth = np.zeros((height, width), dtype=np.float32)
    below = rows[horizon:] - horizon + 1
    depth[horizon:] = np.broadcast_to(200.0 / below, (height - horizon, width))
    depth[skyline:horizon] = 220.0

    boxes = []
    n_objects = 1 + rng.randbelow(3)
    for _ in range(n_objects):
        label = CAR if rng.random() < 0.6 else PERSON
        bottom = horizon + 4 + rng.randbelow(max(1, height - horizon - 4))
        scale = (bottom - horizon) / max(1, height - horizon)
        bw = max(3, int((0.35 if label == CAR else 0.12) * width * scale))
        bh = max(3, int((0.22 if label == CAR else 0.35) * height * scale))
        x0 = rng.randbelow(max(1, width - bw))
        y0 = max(horizon - bh // 2, bottom - bh)
        x1, y1 = min(width, x0 + bw), min(height, bottom)
        if y1 - y0 < 2 or x1 - x0 < 2:
            continue
        seg[y0:y1, x0:x1] = label
        color = (0.7 * rng.random(), 0.2 + 0.5 * rng.random(), 0.2 + 0.6 * rng.random())
        img[y0:y1, x0:x1] = color
        depth[y0:y1, x0:x1] = 200.0 / (y1 - horizon + 1)
        boxes.append(BoxAnnotation(CLASS_OF_LABEL[label], float(x0), float(y0), float(x1), float(y1)))

    image = np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8)
    return ScenePacket(scene_id, image, depth, seg, tuple(boxes), condition_tag)


def make_scenes(n: int = 10, height: int = 64, width: int = 64, seed: int = 0, n_rain: int = 3) -> list:
    scenes = []
    for i in range(n):
        tag = "rain" if i >= n - n_rain else "clear"
        scenes.append(make_scene(f"scene{i:03d}", height, width, derive_seed(seed, f"scene{i}"), tag))
    return scenes


def ground_truth(scenes) -> list:
    return [
        Detection(b.class_id, b.x_min, b.y_min, b.x_max, b.y_max, 1.0, s.id)
        for s in scenes
        for b in s.annotations or ()
    ]


def noisy_predictions(scenes, seed: int = 0, miss_every: int = 4, fp_every: int = 3) -> list:
    """Jittered copies of the ground truth, some dropped, some spurious."""
    rng = SplitMix64(seed)
    preds = []
    k = 0
    for idx, s in enumerate(scenes):
        for b in s.annotations or ():
            k += 1
            if miss_every and k % miss_every == 0:
                continue
            jx = (rng.random() - 0.5) * 2
            jy = (rng.random() - 0.5) * 2
            x0 = min(max(0.0, b.x_min + jx), b.x_max - 1)
            y0 = min(max(0.0, b.y_min + jy), b.y_max - 1)
            preds.append(Detection(b.class_id, x0, y0, b.x_max, b.y_max, round(0.5 + 0.5 * rng.random(), 4), s.id))
        if fp_every and idx % fp_every == 0:
            preds.append(Detection(0, 0.0, 0.0, 4.0, 4.0, round(0.3 + 0.6 * rng.random(), 4), s.id))
    return preds


def write_fixture(out_dir: os.PathLike, n: int = 10, size: int = 64, seed: int = 0) -> dict:
    """Write ``scenes/``, ``gts.jsonl``, ``preds.jsonl`` and
    ``perfect_preds.jsonl`` under ``out_dir``."""
    out = Path(out_dir)
    scenes = make_scenes(n, size, size, seed)
    for s in scenes:
        write_scene(s, out / "scenes")
    gts = ground_truth(scenes)
    write_jsonl(out / "gts.jsonl", [g.to_dict() for g in gts])
    write_jsonl(out / "preds.jsonl", [p.to_dict() for p in noisy_predictions(scenes, seed)])
    write_jsonl(out / "perfect_preds.jsonl", [g.to_dict() for g in gts])
    return {
        "scenes": str(out / "scenes"),
        "gts": str(out / "gts.jsonl"),
        "preds": str(out / "preds.jsonl"),
        "perfect_preds": str(out / "perfect_preds.jsonl"),
        "n_scenes": len(scenes),
    }
