import numpy as np
import pytest

from driftcfl.representations import LabelHistogram, Representation


def make_blobs(seed, n_per=20, sigma=0.01, dim=4):
    """Three tight blobs whose centers are at least 1 apart in L1."""
    rng = np.random.default_rng(seed)
    centers = np.zeros((3, dim))
    centers[1, 0] = 1.0
    centers[2, 1] = 1.0
    X = np.vstack([c + rng.normal(0, sigma, size=(n_per, dim)) for c in centers])
    truth = np.repeat(np.arange(3), n_per)
    perm = rng.permutation(len(X))
    return X[perm], truth[perm]


def as_reps(X, ids=None):
    ids = range(len(X)) if ids is None else ids
    return [Representation(int(i), LabelHistogram(np.asarray(x, dtype=float), 1)) for i, x in zip(ids, X)]


@pytest.fixture
def tmp_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("DRIFTCFL_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


def fd_gradient(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def gradient_case(kind, seed):
    """Random model, batch and parameters; returns (relative error, dim)."""
    from driftcfl.models import build_model

    rng = np.random.default_rng(seed)
    D, C, H = int(rng.integers(1, 7)), int(rng.integers(2, 6)), int(rng.integers(1, 6))
    model = build_model(kind, D, C, H)
    n = int(rng.integers(1, 12))
    X, y = rng.normal(size=(n, D)), rng.integers(0, C, n)
    params = rng.normal(0, 0.5, model.dim)
    _, g = model.loss_and_grad(params, X, y)
    fd = fd_gradient(lambda p: model.loss_and_grad(p, X, y)[0], params)
    scale = max(np.linalg.norm(fd), np.linalg.norm(g), 1e-8)
    return float(np.linalg.norm(g - fd) / scale), model.dim
