"""Latent-space scoring of augmentations.

A logistic-regression classifier separates embeddings of clear-weather images
(label 0) from embeddings of the target condition (label 1). An augmentation
is scored by the mean predicted probability that its images' embeddings
belong to the target condition.

Embedding files: ``N`` and ``D`` as little-endian uint32, then ``N*D``
little-endian float32 values in row-major order.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import DecodeError, DimensionMismatch, Diverged, IoError, MissingEmbeddings, ValidationError
from .search import param_key

EMBEDDING_SUFFIX = ".emb"


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    vectors: np.ndarray
    labels: Optional[np.ndarray] = None
    source_ids: Optional[tuple] = None

    def __post_init__(self) -> None:
        v = np.asarray(self.vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValidationError(f"embeddings must be an N x D matrix with N >= 1, got shape {v.shape}")
        object.__setattr__(self, "vectors", v)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (v.shape[0],) or not np.isin(labels, (0, 1)).all():
                raise ValidationError("labels must be one 0/1 value per row")
            object.__setattr__(self, "labels", labels)
        ids = self.source_ids if self.source_ids is not None else tuple(str(i) for i in range(v.shape[0]))
        if len(ids) != v.shape[0]:
            raise ValidationError("source_ids must have one entry per row")
        object.__setattr__(self, "source_ids", tuple(ids))

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def write_embeddings(path: os.PathLike, vectors: np.ndarray) -> None:
    v = np.ascontiguousarray(np.asarray(vectors, dtype="<f4"))
    if v.ndim != 2:
        raise ValidationError("embedding matrix must be 2-D")
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<II", v.shape[0], v.shape[1]))
            fh.write(v.tobytes())
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def read_embeddings(path: os.PathLike, labels: Optional[Sequence[int]] = None) -> EmbeddingSet:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise IoError(f"{path}: no such file") from exc
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    if len(data) < 8:
        raise DecodeError(f"{path}: truncated header")
    n, d = struct.unpack("<II", data[:8])
    if len(data) != 8 + 4 * n * d:
        raise DecodeError(f"{path}: header says {n}x{d} but payload has {len(data) - 8} bytes")
    vectors = np.frombuffer(data[8:], dtype="<f4").reshape(n, d).astype(np.float32)
    return EmbeddingSet(vectors, labels)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    max_iters: int = 1000
    l2: float = 1e-3
    tol: float = 1e-9
    seed: int = 0


@dataclass
class LinearClassifier:
    weights: np.ndarray
    bias: float
    iterations: int = 0
    final_loss: float = 0.0
    learning_rate: float = 0.0
    loss_history: list = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return len(self.weights)

    def decision(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, vectors: np.ndarray) -> np.ndarray:
        return expit(self.decision(vectors))

    def to_dict(self) -> dict:
        return {
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "training_meta": {
                "iterations": self.iterations,
                "final_loss": self.final_loss,
                "learning_rate": self.learning_rate,
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearClassifier":
        meta = d.get("training_meta", {})
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            bias=float(d["bias"]),
            iterations=int(meta.get("iterations", 0)),
            final_loss=float(meta.get("final_loss", 0.0)),
            learning_rate=float(meta.get("learning_rate", 0.0)),
        )

    def save(self, path: os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: os.PathLike) -> "LinearClassifier":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError as exc:
            raise IoError(f"{path}: no such file") from exc
        except (json.JSONDecodeError, KeyError) as exc:
            raise DecodeError(f"{path}: not a classifier file") from exc


def _loss(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2: float) -> float:
    z = X @ w + b
    # mean of log(1 + e^z) - y*z, the stable form of binary cross-entropy
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + l2 * np.dot(w, w))


def train_classifier(clear: EmbeddingSet, odd: EmbeddingSet, config: TrainConfig = TrainConfig()) -> LinearClassifier:
    """Full-batch gradient descent from zero weights.

    A step that would raise the loss is retried with half the step size, so
    the recorded loss never increases. Training stops after ``max_iters``
    steps or once the loss decrease falls below ``tol``.
    """
    if clear.dim != odd.dim:
        raise DimensionMismatch(f"clear embeddings have D={clear.dim}, target embeddings D={odd.dim}")
    if config.learning_rate <= 0 or config.max_iters < 1 or config.l2 < 0 or config.tol < 0:
        raise ValidationError(f"invalid training config {config}")
    X = np.vstack([clear.vectors, odd.vectors]).astype(np.float64)
    y = np.concatenate([np.zeros(clear.n), np.ones(odd.n)])
    w = np.zeros(X.shape[1])
    b = 0.0
    lr = config.learning_rate
    loss = _loss(X, y, w, b, config.l2)
    history = [loss]
    it = 0
    while it < config.max_iters:
        it += 1
        resid = expit(X @ w + b) - y
        grad_w = X.T @ resid / len(y) + 2 * config.l2 * w
        grad_b = float(np.mean(resid))
        while True:
            w_new = w - lr * grad_w
            b_new = b - lr * grad_b
            new_loss = _loss(X, y, w_new, b_new, config.l2)
            if not np.isfinite(new_loss) or not np.all(np.isfinite(w_new)):
                raise Diverged(f"loss became non-finite at iteration {it}")
            if new_loss <= loss or lr < 1e-12:
                break
            lr *= 0.5
        decrease = loss - new_loss
        if new_loss <= loss:
            w, b, loss = w_new, b_new, new_loss
            history.append(loss)
        if decrease < config.tol:
            break
    return LinearClassifier(w, b, it, loss, config.learning_rate, history)


def odd_score(classifier: LinearClassifier, embeddings: EmbeddingSet) -> float:
    if embeddings.dim != classifier.dim:
        raise DimensionMismatch(f"embeddings have D={embeddings.dim}, classifier expects D={classifier.dim}")
    return float(np.mean(classifier.predict_proba(embeddings.vectors)))


def param_hash(params: Mapping) -> str:
    """File stem under which embeddings for ``params`` are stored."""
    return hashlib.sha256(param_key(params).encode("utf-8")).hexdigest()[:16]


class EmbeddingDirectory:
    """Loads ``<root>/<param_hash(params)>.emb``."""

    def __init__(self, root: os.PathLike) -> None:
        self.root = Path(root)

    def path_for(self, params: Mapping) -> Path:
        return self.root / f"{param_hash(params)}{EMBEDDING_SUFFIX}"

    def __call__(self, params: Mapping) -> EmbeddingSet:
        path = self.path_for(params)
        if not path.exists():
            raise MissingEmbeddings(f"no embeddings for {param_key(params)} (expected {path})")
        return read_embeddings(path)

    def register(self, params: Mapping, vectors: np.ndarray) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path_for(params)
        write_embeddings(path, vectors)
        return path


def latent_objective(classifier: LinearClassifier, embedding_loader: Callable[[Mapping], EmbeddingSet]) -> Callable[[dict], float]:
    def objective(params: dict) -> float:
        return odd_score(classifier, embedding_loader(params))

    return objective
