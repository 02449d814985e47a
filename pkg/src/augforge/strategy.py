"""Dataset manifests for augmented training.

The manifest is the only interface to an external trainer: it lists real and
augmented entries with their split, mini-batch group and loss weight. All
selection is seeded with :class:`~augforge.prng.SplitMix64`; identical inputs
produce byte-identical manifest JSON.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from .errors import (
    DecodeError,
    EmptyDataset,
    InfeasibleRatio,
    InsufficientData,
    InvalidAlpha,
    IoError,
    SpaceTooSmall,
    TooFewItems,
    UnevenAugCount,
    ValidationError,
)
from .kernels import KERNEL_TAGS, AugmentationSpec, draw_unique_specs
from .prng import SplitMix64, derive_seed
from .search import ParamSpace

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")
ROLES = ("real", "augmented")


@dataclass(frozen=True)
class ManifestEntry:
    entry_id: str
    image_ref: str
    role: str = "real"
    parent_id: Optional[str] = None
    spec_ref: Optional[str] = None
    group_id: Optional[str] = None
    loss_weight: float = 1.0
    split: str = "train"
    condition_tag: str = "clear"
    hflip: bool = False

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValidationError(f"entry {self.entry_id}: role must be one of {ROLES}")
        if self.split not in SPLITS:
            raise ValidationError(f"entry {self.entry_id}: split must be one of {SPLITS}")
        if (self.role == "augmented") != (self.parent_id is not None):
            raise ValidationError(f"entry {self.entry_id}: parent_id must be set iff the entry is augmented")
        if not self.loss_weight > 0:
            raise ValidationError(f"entry {self.entry_id}: loss_weight must be > 0")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    ratio: Optional[tuple] = None  # (real, augmented)
    k_augs: Optional[int] = None
    alpha: Optional[float] = None
    seed: int = 0
    specs: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        validate_manifest(self)

    def by_id(self) -> dict:
        return {e.entry_id: e for e in self.entries}

    def children(self) -> dict:
        out: dict = {}
        for e in self.entries:
            if e.role == "augmented":
                out.setdefault(e.parent_id, []).append(e)
        return out

    def real_train(self) -> list:
        return [e for e in self.entries if e.role == "real" and e.split == "train"]

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "ratio": None if self.ratio is None else f"{self.ratio[0]}:{self.ratio[1]}",
            "k_augs": self.k_augs,
            "alpha": self.alpha,
            "seed": self.seed,
            "specs": {k: self.specs[k] for k in sorted(self.specs)},
            "entries": [asdict(e) for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetManifest":
        if d.get("version") != MANIFEST_VERSION:
            raise ValidationError(f"unsupported manifest version {d.get('version')!r}")
        ratio = parse_ratio(d["ratio"]) if d.get("ratio") else None
        try:
            entries = tuple(ManifestEntry(**e) for e in d["entries"])
        except TypeError as exc:
            raise ValidationError(f"malformed manifest entry: {exc}") from exc
        return cls(entries, ratio, d.get("k_augs"), d.get("alpha"), int(d.get("seed", 0)), dict(d.get("specs", {})))

    def save(self, path: os.PathLike) -> None:
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(self.to_json())
        except OSError as exc:
            raise IoError(f"{path}: {exc}") from exc

    @classmethod
    def load(cls, path: os.PathLike) -> "DatasetManifest":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError as exc:
            raise IoError(f"{path}: no such file") from exc
        except (json.JSONDecodeError, KeyError) as exc:
            raise DecodeError(f"{path}: not a manifest file ({exc})") from exc


def validate_manifest(m: DatasetManifest) -> None:
    ids = [e.entry_id for e in m.entries]
    if len(set(ids)) != len(ids):
        raise ValidationError("manifest entry ids must be unique")
    index = {e.entry_id: e for e in m.entries}
    for e in m.entries:
        if e.role == "augmented":
            parent = index.get(e.parent_id)
            if parent is None or parent.role != "real" or parent.split != "train":
                raise ValidationError(f"entry {e.entry_id}: parent {e.parent_id!r} is not a real train entry")
            if e.split != parent.split:
                raise ValidationError(f"entry {e.entry_id}: split differs from its parent")
    if m.ratio is not None:
        r, a = m.ratio
        n_real = sum(1 for e in m.entries if e.role == "real" and e.split == "train")
        n_aug = sum(1 for e in m.entries if e.role == "augmented" and e.split == "train")
        if n_real * a != n_aug * r:
            raise ValidationError(f"realized {n_real}:{n_aug} does not match declared ratio {r}:{a}")
    if m.alpha is not None and not 0 < m.alpha < 1:
        raise InvalidAlpha(f"alpha must lie in (0,1), got {m.alpha}")


def parse_ratio(text) -> tuple:
    """``"1:3"`` or ``(1, 3)`` to a ``(real, augmented)`` pair of positive ints."""
    if isinstance(text, str):
        parts = text.split(":")
        if len(parts) != 2:
            raise ValidationError(f"ratio must look like 'real:aug', got {text!r}")
        try:
            r, a = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValidationError(f"ratio components must be integers, got {text!r}") from None
    else:
        r, a = (int(x) for x in text)
    if r < 1 or a < 1:
        raise ValidationError(f"ratio components must be positive, got {r}:{a}")
    return r, a


def _seeded_order(ids: Iterable[str], seed: int) -> list:
    order = sorted(ids)
    SplitMix64(seed).shuffle(order)
    return order


def _apportion(n: int, fractions: Sequence[float]) -> list:
    """Largest-remainder split of ``n`` into parts proportional to ``fractions``;
    earlier parts win remainder ties."""
    quotas = [n * f for f in fractions]
    counts = [int(math.floor(q + 1e-9)) for q in quotas]
    rest = n - sum(counts)
    by_remainder = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in by_remainder[:rest]:
        counts[i] += 1
    return counts


def split_dataset(scene_ids_with_tags: Sequence[tuple], fractions: Sequence[float] = (0.5, 0.25, 0.25), seed: int = 0) -> dict:
    """Stratified train/val/test assignment ``{id: split}``.

    Within every condition tag the ids are sorted, shuffled and cut by
    largest-remainder counts, so each split's tag mix matches the population
    up to rounding.
    """
    items = list(scene_ids_with_tags)
    if not items:
        raise EmptyDataset("no scenes to split")
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f < 0 for f in fr) or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
        raise ValidationError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise ValidationError("scene ids must be unique")
    by_tag: dict = {}
    for sid, tag in items:
        by_tag.setdefault(tag, []).append(sid)
    out = {}
    for tag in sorted(by_tag):
        order = _seeded_order(by_tag[tag], derive_seed(seed, f"split:{tag}"))
        start = 0
        for split, count in zip(SPLITS, _apportion(len(order), fr)):
            for sid in order[start:start + count]:
                out[sid] = split
            start += count
    return out


def _default_ref(entry_id: str) -> str:
    return f"{entry_id}.png"


def build_ratio_manifest(
    train_ids: Sequence[str],
    ratio,
    kernel: str,
    param_space: ParamSpace,
    seed: int = 0,
    *,
    base_params: Optional[Mapping] = None,
    tags: Optional[Mapping[str, str]] = None,
    image_refs: Optional[Mapping[str, str]] = None,
    flip_prob: float = 0.0,
    available: Optional[Mapping[str, Sequence[tuple]]] = None,
) -> DatasetManifest:
    """Real train entries plus augmented children realizing ``real:aug``.

    Every image gets ``aug // real`` children; the remaining ``aug % real``
    children go one each to the first images of a seeded order. Children of
    one image have pairwise distinct parameter draws.

    ``available`` optionally maps an image id to pre-rendered
    ``(entry_id, image_ref, spec)`` triples (e.g. from ``generate-k``); they
    are used in order instead of fresh draws.
    """
    r, a = parse_ratio(ratio)
    ids = list(train_ids)
    if not ids:
        raise EmptyDataset("no training images")
    if len(set(ids)) != len(ids):
        raise ValidationError("train ids must be unique")
    if not 0 <= flip_prob <= 1:
        raise ValidationError(f"flip probability must lie in [0,1], got {flip_prob}")
    n_real = len(ids)
    if (n_real * a) % r:
        raise InfeasibleRatio(f"{n_real} real images cannot be matched exactly by ratio {r}:{a}")
    n_aug = n_real * a // r
    per_image, extra = divmod(n_aug, n_real)
    bonus = set(_seeded_order(ids, derive_seed(seed, "ratio-round-robin"))[:extra])
    need_max = per_image + (1 if extra else 0)
    size = param_space.discrete_size() if available is None else None
    if size is not None and size < need_max:
        raise InfeasibleRatio(f"ratio {r}:{a} needs {need_max} distinct augmentations per image, space has {size}")

    tags = dict(tags or {})
    refs = dict(image_refs or {})
    flip_rng = SplitMix64(derive_seed(seed, "flip"))
    entries, specs = [], {}
    for sid in ids:
        tag = tags.get(sid, "clear")
        entries.append(ManifestEntry(sid, refs.get(sid, _default_ref(sid)), condition_tag=tag, hflip=flip_rng.bernoulli(flip_prob) if flip_prob > 0 else False))
        count = per_image + (1 if sid in bonus else 0)
        if count == 0:
            continue
        if available is not None:
            pool = list(available.get(sid, ()))
            if len(pool) < count:
                raise InfeasibleRatio(f"image {sid!r} has {len(pool)} rendered augmentations, {count} needed")
            chosen = pool[:count]
        else:
            try:
                drawn = draw_unique_specs(kernel, param_space, count, derive_seed(seed, f"aug:{sid}"), base_params)
            except SpaceTooSmall as exc:
                raise InfeasibleRatio(str(exc)) from exc
            chosen = [(f"{sid}__aug{j}", f"aug/{sid}__aug{j}.png", spec) for j, spec in enumerate(drawn)]
        for entry_id, ref, spec in chosen:
            spec_id = spec.spec_id
            specs[spec_id] = spec.to_dict()
            entries.append(
                ManifestEntry(
                    entry_id,
                    ref,
                    role="augmented",
                    parent_id=sid,
                    spec_ref=spec_id,
                    condition_tag=_aug_tag(spec, tag),
                )
            )
    return DatasetManifest(tuple(entries), (r, a), per_image if not extra else None, None, seed, specs)


def _aug_tag(spec: AugmentationSpec, parent_tag: str) -> str:
    tag = parent_tag
    kernels = [c.kernel for c in spec.params] if spec.kernel == "composite" else [spec.kernel]
    for k in kernels:
        tag = KERNEL_TAGS.get(k) or tag
    return tag


def build_minibatch_groups(manifest: DatasetManifest, k: int) -> DatasetManifest:
    """Group each real train image with its ``k`` augmentations.

    Train entries are reordered so every group is contiguous, parent first;
    other splits keep their order after the train groups.
    """
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    children = manifest.children()
    ordered = []
    for parent in manifest.real_train():
        kids = children.get(parent.entry_id, [])
        if len(kids) != k:
            raise UnevenAugCount(f"image {parent.entry_id!r} has {len(kids)} augmentations, expected {k}")
        gid = f"grp-{parent.entry_id}"
        ordered.append(replace(parent, group_id=gid))
        ordered.extend(replace(c, group_id=gid) for c in kids)
    ordered.extend(e for e in manifest.entries if e.split != "train")
    return replace(manifest, entries=tuple(ordered), k_augs=k)


def assign_loss_weights(manifest: DatasetManifest, alpha: float) -> DatasetManifest:
    """``alpha`` on augmented or adverse-condition entries, ``1 - alpha`` on
    real clear ones. The entry count is unchanged."""
    if not 0 < alpha < 1:
        raise InvalidAlpha(f"alpha must lie strictly between 0 and 1, got {alpha}")
    entries = tuple(
        replace(e, loss_weight=alpha if (e.role == "augmented" or e.condition_tag != "clear") else 1 - alpha)
        for e in manifest.entries
    )
    return replace(manifest, entries=entries, alpha=alpha)


def balanced_validation(
    manifest: DatasetManifest,
    clear_ids: Sequence[str],
    adverse_ids: Sequence[str],
    n_each: int,
    seed: int = 0,
    adverse_tag: str = "rain",
    image_refs: Optional[Mapping[str, str]] = None,
) -> DatasetManifest:
    """Replace the validation split with ``n_each`` clear plus ``n_each``
    adverse images not used in train or test."""
    if n_each < 0:
        raise ValidationError(f"n_each must be >= 0, got {n_each}")
    taken = {e.entry_id for e in manifest.entries if e.split != "val"}
    refs = dict(image_refs or {})
    picked = []
    for kind, pool, tag in (("clear", clear_ids, "clear"), ("adverse", adverse_ids, adverse_tag)):
        candidates = [i for i in dict.fromkeys(pool) if i not in taken]
        if len(candidates) < n_each:
            raise InsufficientData(f"{kind} pool has {len(candidates)} unused ids, {n_each} requested")
        for sid in _seeded_order(candidates, derive_seed(seed, f"val:{kind}"))[:n_each]:
            weight = 1.0
            if manifest.alpha is not None:
                weight = manifest.alpha if tag != "clear" else 1 - manifest.alpha
            picked.append(ManifestEntry(sid, refs.get(sid, _default_ref(sid)), split="val", condition_tag=tag, loss_weight=weight))
    if len({e.entry_id for e in picked}) != len(picked):
        raise ValidationError("clear and adverse validation pools overlap")
    kept = tuple(e for e in manifest.entries if e.split != "val")
    return replace(manifest, entries=kept + tuple(picked))


def cv_folds(train_ids: Sequence[str], k_folds: int, seed: int = 0, parent_of: Optional[Mapping[str, str]] = None) -> list:
    """``k_folds`` ``(train_fold, holdout_fold)`` pairs of id lists.

    Ids listed as keys of ``parent_of`` are augmentations; they always land in
    their parent's fold. Fold sizes, counted in parent images, differ by at
    most one.
    """
    if k_folds < 2:
        raise TooFewItems(f"need at least 2 folds, got {k_folds}")
    parent_of = dict(parent_of or {})
    ids = list(dict.fromkeys(train_ids))
    units = [i for i in ids if i not in parent_of]
    if len(units) < k_folds:
        raise TooFewItems(f"{len(units)} items cannot fill {k_folds} folds")
    unit_set = set(units)
    for child, parent in parent_of.items():
        if child in ids and parent not in unit_set:
            raise ValidationError(f"augmentation {child!r} has parent {parent!r} outside the fold universe")
    order = _seeded_order(units, derive_seed(seed, "folds"))
    base, extra = divmod(len(order), k_folds)
    fold_of = {}
    start = 0
    for f in range(k_folds):
        size = base + (1 if f < extra else 0)
        for u in order[start:start + size]:
            fold_of[u] = f
        start += size
    for child in ids:
        if child in parent_of:
            fold_of[child] = fold_of[parent_of[child]]
    folds = []
    for f in range(k_folds):
        holdout = [i for i in ids if fold_of[i] == f]
        train = [i for i in ids if fold_of[i] != f]
        folds.append((train, holdout))
    return folds


def manifest_folds(manifest: DatasetManifest, k_folds: int, seed: int = 0) -> list:
    """Cross-validation folds over a manifest's train split."""
    train = [e for e in manifest.entries if e.split == "train"]
    parent_of = {e.entry_id: e.parent_id for e in train if e.role == "augmented"}
    return cv_folds([e.entry_id for e in train], k_folds, seed, parent_of)
