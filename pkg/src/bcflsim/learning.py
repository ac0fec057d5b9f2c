"""Toy federated-learning core: synthetic data, softmax regression, FedAvg.

The classifier is multinomial logistic regression.  Parameters are a ``K x d``
weight matrix and a length-``K`` bias; the canonical flat order is the
row-major weights followed by the bias.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_MAGIC = b"BCFM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sHII")

BATCH_SIZE = 32


class MalformedModel(ValueError):
    def __init__(self, detail: str = ""):
        super().__init__("malformed model blob" + (f": {detail}" if detail else ""))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""
    seed: int | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be 2-D and labels 1-D")
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray, name: str = "") -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, name or self.name, self.seed)

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<qqq", len(self), self.dim, self.num_classes))
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()

    def to_csv(self, path: str | Path) -> None:
        cols = [f"x{i}" for i in range(self.dim)] + ["label"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row, label in zip(self.features, self.labels):
                fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


@dataclass
class ModelParams:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be K x d and bias length K")

    @classmethod
    def zeros(cls, num_classes: int, dim: int) -> ModelParams:
        return cls(np.zeros((num_classes, dim)), np.zeros(num_classes))

    @classmethod
    def from_flat(cls, flat: np.ndarray, num_classes: int, dim: int) -> ModelParams:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (num_classes * dim + num_classes,):
            raise ValueError("flat vector has the wrong length")
        return cls(flat[: num_classes * dim].reshape(num_classes, dim).copy(),
                   flat[num_classes * dim:].copy())

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def copy(self) -> ModelParams:
        return ModelParams(self.weights.copy(), self.bias.copy())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.bias, other.bias))


@dataclass(frozen=True)
class EvalResult:
    loss: float
    accuracy: float
    correct: int = 0
    total: int = 0

    def to_dict(self) -> dict:
        return {"loss": self.loss, "accuracy": self.accuracy}


# -- data ---------------------------------------------------------------------


def class_means(num_classes: int, dim: int, seed: int, separation: float = 3.0) -> np.ndarray:
    """Class centres: random orthonormal-ish directions scaled to ``separation``."""
    rng = np.random.default_rng([seed, 0x6D65616E])
    raw = rng.standard_normal((max(num_classes, dim), dim))
    if num_classes <= dim:
        q, _ = np.linalg.qr(raw.T)
        dirs = q.T[:num_classes]
    else:
        dirs = raw[:num_classes] / np.linalg.norm(raw[:num_classes], axis=1, keepdims=True)
    return separation * dirs


def make_synthetic(num_classes: int, dim: int, n_per_class: int, seed: int,
                   separation: float = 3.0, noise: float = 1.0) -> Dataset:
    """Gaussian mixture with one isotropic cluster per class, ``n_per_class`` points each."""
    if num_classes < 2 or dim < 1:
        raise ValueError("need num_classes >= 2 and dim >= 1")
    means = class_means(num_classes, dim, seed, separation)
    rng = np.random.default_rng([seed, 0x73616D70])
    labels = np.repeat(np.arange(num_classes), n_per_class)
    features = means[labels] + noise * rng.standard_normal((len(labels), dim))
    return Dataset(features, labels, num_classes, f"synthetic-{seed}", seed)


def holdout_split(dataset: Dataset, n_test_per_class: int, seed: int) -> tuple[Dataset, Dataset]:
    """Split off ``n_test_per_class`` examples of each class as a test set."""
    rng = np.random.default_rng([seed, 0x686F6C64])
    test_idx = []
    for k in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == k)
        if len(idx) < n_test_per_class:
            raise ValueError(f"class {k} has fewer than {n_test_per_class} examples")
        test_idx.append(rng.permutation(idx)[:n_test_per_class])
    test_idx = np.sort(np.concatenate(test_idx))
    mask = np.ones(len(dataset), dtype=bool)
    mask[test_idx] = False
    return (dataset.subset(np.flatnonzero(mask), dataset.name + "-train"),
            dataset.subset(test_idx, dataset.name + "-test"))


def partition_noniid(dataset: Dataset, n_parts: int, alpha: float, seed: int,
                     min_size: int = 1, max_tries: int = 1000) -> list[Dataset]:
    """Split ``dataset`` into disjoint parts with Dirichlet(alpha) class skew.

    For each class, the class's examples are divided among parts according to
    a Dirichlet draw.  Draws are repeated until every part holds at least
    ``min_size`` examples.
    """
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if n_parts == 1:
        return [dataset.subset(np.arange(len(dataset)), dataset.name + "-part0")]
    if min_size * n_parts > len(dataset):
        raise ValueError("dataset too small for the requested parts")
    rng = np.random.default_rng([seed, 0x70617274])
    for _ in range(max_tries):
        parts: list[list[np.ndarray]] = [[] for _ in range(n_parts)]
        for k in range(dataset.num_classes):
            idx = rng.permutation(np.flatnonzero(dataset.labels == k))
            props = rng.dirichlet(np.full(n_parts, alpha))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
            for j, chunk in enumerate(np.split(idx, cuts)):
                parts[j].append(chunk)
        merged = [np.sort(np.concatenate(p)) for p in parts]
        if min(len(m) for m in merged) >= min_size:
            return [dataset.subset(m, f"{dataset.name}-part{j}") for j, m in enumerate(merged)]
    raise ValueError("could not satisfy min_size; lower it or raise alpha")


def label_flip(dataset: Dataset, permutation: Sequence[int] | None = None) -> Dataset:
    """Relabel through ``permutation``; defaults to the cyclic shift y -> y+1 mod K."""
    k = dataset.num_classes
    perm = np.asarray(permutation if permutation is not None else (np.arange(k) + 1) % k, dtype=np.int64)
    if perm.shape != (k,) or sorted(perm.tolist()) != list(range(k)):
        raise ValueError("permutation must be a bijection on range(K)")
    return Dataset(dataset.features.copy(), perm[dataset.labels], k, dataset.name + "-flipped", dataset.seed)


# -- model --------------------------------------------------------------------


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(model: ModelParams, x: np.ndarray, y: np.ndarray) -> tuple[float, ModelParams]:
    """Mean softmax cross-entropy and its gradient with respect to the parameters."""
    n = len(y)
    logp = _log_softmax(x @ model.weights.T + model.bias)
    loss = -logp[np.arange(n), y].mean()
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return float(loss), ModelParams(delta.T @ x, delta.sum(axis=0))


def _check_dims(model: ModelParams, data: Dataset) -> None:
    if model.num_classes != data.num_classes or model.dim != data.dim:
        raise ValueError(f"model {model.shape} does not match data (K={data.num_classes}, d={data.dim})")


def train_local(model: ModelParams, data: Dataset, epochs: int, learning_rate: float,
                seed: int, batch_size: int = BATCH_SIZE) -> ModelParams:
    """Plain mini-batch SGD, reshuffling every epoch with a seeded generator."""
    _check_dims(model, data)
    out = model.copy()
    if epochs <= 0 or len(data) == 0:
        return out
    rng = np.random.default_rng([seed, 0x73676400])
    for _ in range(epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            _, grad = loss_and_grad(out, data.features[batch], data.labels[batch])
            out.weights -= learning_rate * grad.weights
            out.bias -= learning_rate * grad.bias
    return out


def evaluate(model: ModelParams, data: Dataset) -> EvalResult:
    _check_dims(model, data)
    n = len(data)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logp = _log_softmax(data.features @ model.weights.T + model.bias)
    loss = float(-logp[np.arange(n), data.labels].mean())
    # np.argmax returns the first maximum: ties go to the lowest class index
    correct = int((np.argmax(logp, axis=1) == data.labels).sum())
    return EvalResult(loss, correct / n, correct, n)


def fedavg(models: Sequence[ModelParams], weights: Sequence[float] | None = None) -> ModelParams:
    if not models:
        raise ValueError("fedavg needs at least one model")
    shape = models[0].shape
    if any(m.shape != shape for m in models):
        raise ValueError("models differ in shape")
    w = np.ones(len(models)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(models),) or (w < 0).any() or not np.isfinite(w).all():
        raise ValueError("weights must be finite, non-negative, one per model")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must not all be zero")
    w = w / total
    stacked = np.stack([m.flat() for m in models])
    return ModelParams.from_flat(w @ stacked, *shape)


# -- serialization ------------------------------------------------------------


def serialize_model(model: ModelParams) -> bytes:
    k, d = model.shape
    return _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, k, d) + model.flat().astype("<f8").tobytes()


def deserialize_model(blob: bytes) -> ModelParams:
    if len(blob) < _HEADER.size:
        raise MalformedModel("truncated header")
    magic, version, k, d = _HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise MalformedModel("bad magic")
    if version != MODEL_VERSION:
        raise MalformedModel(f"unsupported version {version}")
    expected = _HEADER.size + 8 * (k * d + k)
    if len(blob) != expected:
        raise MalformedModel(f"expected {expected} bytes, got {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return ModelParams.from_flat(flat, k, d)


def model_header(blob: bytes) -> dict:
    """Header fields of a model blob, for inspection."""
    if len(blob) < _HEADER.size:
        raise MalformedModel("truncated header")
    magic, version, k, d = _HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise MalformedModel("bad magic")
    return {"version": version, "num_classes": k, "dim": d, "bytes": len(blob)}
