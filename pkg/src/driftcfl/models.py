"""Small models for the synthetic tasks, with exact gradients."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np


class ModelError(ArithmeticError):
    pass


@dataclass
class ModelParams:
    """Flat parameter vector tagged with the (round, cluster) that produced it."""

    values: np.ndarray
    version: Tuple[int, int] = (0, 0)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), self.version)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    # non-finite logits propagate as NaN and are rejected by the callers
    with np.errstate(invalid="ignore", over="ignore"):
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class SoftmaxModel:
    """Multinomial logistic regression; parameters are W (row-major) then b."""

    kind = "softmax"

    def __init__(self, input_dim: int, num_labels: int):
        self.input_dim = input_dim
        self.num_labels = num_labels
        self.dim = num_labels * (input_dim + 1)

    def unpack(self, params: np.ndarray):
        C, D = self.num_labels, self.input_dim
        return params[:C * D].reshape(C, D), params[C * D:]

    def init_params(self, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
        return rng.normal(0.0, scale, size=self.dim)

    def logits(self, params: np.ndarray, X: np.ndarray) -> np.ndarray:
        W, b = self.unpack(params)
        return X @ W.T + b

    def loss_and_grad(self, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
        if len(y) == 0:
            raise ModelError("empty batch")
        n = len(y)
        logp = _log_softmax(self.logits(params, X))
        loss = float(-logp[np.arange(n), y].mean())
        if not np.isfinite(loss):
            raise ModelError("non-finite loss")
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grad = np.concatenate([(delta.T @ X).ravel(), delta.sum(axis=0)])
        return loss, grad


class MlpModel:
    """One tanh hidden layer of width ``hidden`` and a softmax head.

    Layout: W1 (hidden x input_dim), b1, W2 (num_labels x hidden), b2.
    """

    kind = "mlp"

    def __init__(self, input_dim: int, num_labels: int, hidden: int = 32):
        self.input_dim = input_dim
        self.num_labels = num_labels
        self.hidden = hidden
        self.dim = hidden * (input_dim + 1) + num_labels * (hidden + 1)

    def unpack(self, params: np.ndarray):
        h, D, C = self.hidden, self.input_dim, self.num_labels
        i = 0
        W1 = params[i:i + h * D].reshape(h, D); i += h * D
        b1 = params[i:i + h]; i += h
        W2 = params[i:i + C * h].reshape(C, h); i += C * h
        b2 = params[i:i + C]
        return W1, b1, W2, b2

    def init_params(self, rng: np.random.Generator, scale: float = 0.0) -> np.ndarray:
        h, D, C = self.hidden, self.input_dim, self.num_labels
        return np.concatenate([
            rng.normal(0.0, 1.0 / np.sqrt(D), size=h * D), np.zeros(h),
            rng.normal(0.0, 1.0 / np.sqrt(h), size=C * h), np.zeros(C),
        ])

    def logits(self, params: np.ndarray, X: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self.unpack(params)
        return np.tanh(X @ W1.T + b1) @ W2.T + b2

    def loss_and_grad(self, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
        if len(y) == 0:
            raise ModelError("empty batch")
        n = len(y)
        W1, b1, W2, b2 = self.unpack(params)
        H = np.tanh(X @ W1.T + b1)
        logp = _log_softmax(H @ W2.T + b2)
        loss = float(-logp[np.arange(n), y].mean())
        if not np.isfinite(loss):
            raise ModelError("non-finite loss")
        d_out = np.exp(logp)
        d_out[np.arange(n), y] -= 1.0
        d_out /= n
        d_hidden = (d_out @ W2) * (1.0 - H ** 2)
        grad = np.concatenate([
            (d_hidden.T @ X).ravel(), d_hidden.sum(axis=0),
            (d_out.T @ H).ravel(), d_out.sum(axis=0),
        ])
        return loss, grad


Model = Union[SoftmaxModel, MlpModel]


def build_model(kind: str, input_dim: int, num_labels: int, hidden: int = 32) -> Model:
    if kind == "softmax":
        return SoftmaxModel(input_dim, num_labels)
    if kind == "mlp":
        return MlpModel(input_dim, num_labels, hidden)
    raise ValueError(f"unknown model kind {kind!r}")


def predict(model: Model, params: np.ndarray, X: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest label on ties
    return np.argmax(model.logits(params, X), axis=1)


def evaluate(model: Model, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Top-1 accuracy."""
    if len(y) == 0:
        raise ModelError("empty test set")
    return float(np.mean(predict(model, params, X) == np.asarray(y)))


_HEADER_LEN = struct.Struct("<Q")


def save_params(path: Union[str, Path], params: ModelParams, kind: str) -> None:
    """Write a JSON header (dim, kind, version) then raw little-endian float64."""
    header = json.dumps({"dim": params.dim, "kind": kind, "version": list(params.version)},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_HEADER_LEN.pack(len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(params.values, dtype="<f8").tobytes())


def load_params(path: Union[str, Path]) -> Tuple[ModelParams, str]:
    with open(path, "rb") as fh:
        (n,) = _HEADER_LEN.unpack(fh.read(_HEADER_LEN.size))
        header = json.loads(fh.read(n))
        values = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    if values.shape[0] != header["dim"]:
        raise ModelError(f"{path}: expected {header['dim']} values, found {values.shape[0]}")
    return ModelParams(values, tuple(header["version"])), header["kind"]
