"""Client representations and the distances between them.

A representation is the compact per-client feature the coordinator clusters
on: a label histogram, a mean input embedding, or a gradient sketch taken
against a shared model snapshot.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np


class RepresentationError(ValueError):
    """Invalid input to a representation or distance computation."""


class NumericalError(ArithmeticError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class Metric(str, enum.Enum):
    L1 = "l1"
    JENSEN_SHANNON = "js"
    SQUARED_EUCLIDEAN = "sqeuclidean"

    @classmethod
    def parse(cls, value: Union[str, "Metric"]) -> "Metric":
        if isinstance(value, Metric):
            return value
        aliases = {"jensenshannon": "js", "jensen_shannon": "js", "squaredeuclidean": "sqeuclidean",
                   "squared_euclidean": "sqeuclidean"}
        key = str(value).lower()
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class LabelHistogram:
    probs: np.ndarray
    count: int

    kind = "histogram"

    @property
    def values(self) -> np.ndarray:
        return self.probs


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    source_model_id: str = "frozen-extractor"

    kind = "embedding"


@dataclass(frozen=True)
class GradientSketch:
    values: np.ndarray
    model_round: int = 0

    kind = "gradient"


Payload = Union[LabelHistogram, EmbeddingVector, GradientSketch]


@dataclass(frozen=True)
class Representation:
    client_id: int
    payload: Payload
    round_collected: int = 0

    @property
    def kind(self) -> str:
        return self.payload.kind

    @property
    def vector(self) -> np.ndarray:
        return self.payload.values


def compute_label_histogram(labels: Sequence[int], num_labels: int) -> LabelHistogram:
    """Empirical label distribution of ``labels`` over ``num_labels`` classes."""
    if num_labels < 1:
        raise RepresentationError("num_labels must be >= 1")
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size and (y.min() < 0 or y.max() >= num_labels):
        bad = int(y[(y < 0) | (y >= num_labels)][0])
        raise RepresentationError(f"label {bad} outside [0, {num_labels})")
    counts = np.bincount(y, minlength=num_labels).astype(np.float64)
    total = int(y.size)
    probs = counts / total if total else counts
    return LabelHistogram(probs=probs, count=total)


class FrozenExtractor:
    """Seeded random two-layer tanh projection, fixed for the whole run."""

    def __init__(self, input_dim: int, embed_dim: int = 16, hidden: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.input_dim = input_dim
        self.embed_dim = embed_dim
        self.w1 = rng.normal(0.0, 1.0 / np.sqrt(input_dim), size=(hidden, input_dim))
        self.b1 = rng.normal(0.0, 0.1, size=hidden)
        self.w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(embed_dim, hidden))
        self.model_id = f"frozen-tanh-{input_dim}x{hidden}x{embed_dim}-s{seed}"

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.tanh(X @ self.w1.T + self.b1) @ self.w2.T


def compute_embedding(samples: np.ndarray, extractor: Callable[[np.ndarray], np.ndarray],
                      aggregator: str = "mean") -> EmbeddingVector:
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise RepresentationError("cannot embed an empty sample set")
    if aggregator != "mean":
        raise RepresentationError(f"unsupported aggregator {aggregator!r}")
    feats = extractor(X)
    return EmbeddingVector(values=feats.mean(axis=0),
                           source_model_id=getattr(extractor, "model_id", "extractor"))


class JLProjection:
    """Seeded Johnson-Lindenstrauss projection used for oversized gradients."""

    def __init__(self, dim: int, sketch_dim: int = 512, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.matrix = rng.normal(0.0, 1.0 / np.sqrt(sketch_dim), size=(sketch_dim, dim))

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v


def compute_gradient_sketch(loss_and_grad: Callable[[np.ndarray], tuple], shared_params: np.ndarray,
                            model_round: int = 0, projection: Optional[Callable] = None,
                            max_full_dim: int = 4096, sketch_dim: int = 512,
                            projection_seed: int = 0) -> GradientSketch:
    """Full-batch gradient at ``shared_params``.

    ``loss_and_grad`` closes over the client's data and returns ``(loss, grad)``.
    Gradients longer than ``max_full_dim`` are projected; pass ``projection``
    explicitly to keep one matrix for the whole run.
    """
    _, grad = loss_and_grad(np.asarray(shared_params, dtype=np.float64))
    grad = np.asarray(grad, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericalError(f"non-finite gradient at parameter {bad[0]}", int(bad[0]))
    if projection is None and grad.size > max_full_dim:
        projection = JLProjection(grad.size, sketch_dim, projection_seed)
    if projection is not None:
        grad = projection(grad)
    return GradientSketch(values=grad, model_round=model_round)


def _as_vector(x) -> tuple[np.ndarray, Optional[str], Optional[int]]:
    if isinstance(x, Representation):
        x = x.payload
    if isinstance(x, LabelHistogram):
        return np.asarray(x.probs, dtype=np.float64), "histogram", x.count
    if isinstance(x, (EmbeddingVector, GradientSketch)):
        return np.asarray(x.values, dtype=np.float64), x.kind, None
    return np.asarray(x, dtype=np.float64), None, None


def _check_probability(v: np.ndarray) -> None:
    if np.any(v < -1e-12) or abs(v.sum() - 1.0) > 1e-9:
        raise RepresentationError("Jensen-Shannon distance needs probability vectors")


def js_distance(p: np.ndarray, q: np.ndarray) -> float:
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_p = np.where(p > 0, p * np.log2(p / m), 0.0).sum()
        kl_q = np.where(q > 0, q * np.log2(q / m), 0.0).sum()
    div = 0.5 * (kl_p + kl_q)
    return float(np.sqrt(min(max(div, 0.0), 1.0)))


def distance(a, b, metric: Union[str, Metric] = Metric.L1) -> float:
    """Distance between two representations (or raw vectors).

    L1 and squared Euclidean are computed on the raw vectors. Jensen-Shannon
    uses base-2 logs so the value lies in [0, 1].
    """
    metric = Metric.parse(metric)
    va, ka, ca = _as_vector(a)
    vb, kb, cb = _as_vector(b)
    if ka is not None and kb is not None and ka != kb:
        raise RepresentationError(f"representation kind mismatch: {ka} vs {kb}")
    if va.shape != vb.shape:
        raise RepresentationError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    if metric is Metric.L1:
        return float(np.abs(va - vb).sum())
    if metric is Metric.SQUARED_EUCLIDEAN:
        d = va - vb
        return float(d @ d)
    if ka not in (None, "histogram") or kb not in (None, "histogram"):
        raise RepresentationError("Jensen-Shannon distance is only defined for histograms")
    if ca == 0 or cb == 0:
        raise RepresentationError("Jensen-Shannon distance needs non-empty histograms")
    _check_probability(va)
    _check_probability(vb)
    # order the arguments so d(a, b) == d(b, a) bit-for-bit
    if tuple(va) > tuple(vb):
        va, vb = vb, va
    return js_distance(va, vb)


def pairwise_distances(X: np.ndarray, Y: Optional[np.ndarray] = None,
                       metric: Union[str, Metric] = Metric.L1) -> np.ndarray:
    """Dense distance matrix between the rows of ``X`` and ``Y``."""
    metric = Metric.parse(metric)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise RepresentationError("dimension mismatch")
    if metric is Metric.L1:
        return np.abs(X[:, None, :] - Y[None, :, :]).sum(axis=2)
    if metric is Metric.SQUARED_EUCLIDEAN:
        diff = X[:, None, :] - Y[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    P = X[:, None, :]
    Q = Y[None, :, :]
    M = 0.5 * (P + Q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kp = np.where(P > 0, P * np.log2(P / M), 0.0).sum(axis=2)
        kq = np.where(Q > 0, Q * np.log2(Q / M), 0.0).sum(axis=2)
    return np.sqrt(np.clip(0.5 * (kp + kq), 0.0, 1.0))


def stack(reps: Sequence[Representation]) -> np.ndarray:
    """Stack representation vectors after checking they share kind and length."""
    if not reps:
        return np.zeros((0, 0))
    kinds = {r.kind for r in reps}
    if len(kinds) > 1:
        raise RepresentationError(f"mixed representation kinds: {sorted(kinds)}")
    dims = {r.vector.shape for r in reps}
    if len(dims) > 1:
        raise RepresentationError(f"mixed representation dimensions: {sorted(dims)}")
    return np.vstack([r.vector for r in reps]).astype(np.float64)
