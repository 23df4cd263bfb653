"""K-means over client representations, silhouette-based K selection and
intra-cluster heterogeneity ("mean client distance")."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .representations import Metric, Representation, pairwise_distances, stack

MAX_LLOYD_ITERATIONS = 100


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    client_to_cluster: Dict[int, int]
    centers: np.ndarray
    objective_history: List[float] = field(default_factory=list, repr=False, compare=False)

    @property
    def K(self) -> int:
        return int(self.centers.shape[0])

    def members(self, k: int) -> List[int]:
        return sorted(c for c, j in self.client_to_cluster.items() if j == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(np.fromiter(self.client_to_cluster.values(), dtype=np.int64, count=len(self.client_to_cluster)),
                           minlength=self.K)

    def labels_for(self, client_ids: Sequence[int]) -> np.ndarray:
        return np.array([self.client_to_cluster[c] for c in client_ids], dtype=np.int64)

    def copy(self) -> "ClusterAssignment":
        return ClusterAssignment(dict(self.client_to_cluster), self.centers.copy())

    def to_json(self) -> dict:
        return {"client_to_cluster": {str(c): int(k) for c, k in sorted(self.client_to_cluster.items())},
                "centers": self.centers.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "ClusterAssignment":
        return cls({int(c): int(k) for c, k in d["client_to_cluster"].items()},
                   np.asarray(d["centers"], dtype=np.float64).reshape(len(d["centers"]), -1))


@dataclass
class HeterogeneityReport:
    mean_client_distance: float
    per_cluster_mean: np.ndarray
    global_mean: float


def _sorted_arrays(reps: Sequence[Representation]) -> Tuple[np.ndarray, np.ndarray]:
    order = sorted(range(len(reps)), key=lambda i: reps[i].client_id)
    reps = [reps[i] for i in order]
    ids = np.array([r.client_id for r in reps], dtype=np.int64)
    if len(set(ids.tolist())) != len(ids):
        raise ClusteringError("duplicate client ids")
    return ids, stack(reps)


def cluster_means(X: np.ndarray, labels: np.ndarray, K: int) -> np.ndarray:
    centers = np.zeros((K, X.shape[1]))
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    np.add.at(centers, labels, X)
    nz = counts > 0
    centers[nz] /= counts[nz, None]
    return centers


def kmeans_plus_plus(X: np.ndarray, K: int, metric: Metric, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = pairwise_distances(X, X[chosen], metric)[:, 0]
    for _ in range(1, K):
        weight = closest if metric is Metric.SQUARED_EUCLIDEAN else closest ** 2
        total = weight.sum()
        if total > 0:
            idx = int(rng.choice(n, p=weight / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, pairwise_distances(X, X[idx:idx + 1], metric)[:, 0])
    return X[chosen].copy()


def lloyd(X: np.ndarray, K: int, metric: Metric, rng: np.random.Generator,
          max_iter: int = MAX_LLOYD_ITERATIONS) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """Lloyd iterations from k-means++ seeds.

    Assignment uses ``metric``; centers are arithmetic means. Returns
    ``(labels, centers, objective_history)``; the objective is the sum of
    member-to-center distances after each center update.
    """
    n = X.shape[0]
    centers = kmeans_plus_plus(X, K, metric, rng)
    prev = None
    history: List[float] = []
    rows = np.arange(n)
    for _ in range(max_iter):
        D = pairwise_distances(X, centers, metric)
        labels = np.argmin(D, axis=1)
        counts = np.bincount(labels, minlength=K)
        for k in np.flatnonzero(counts == 0):
            own = D[rows, labels].copy()
            own[counts[labels] < 2] = -np.inf
            far = int(np.argmax(own))
            counts[labels[far]] -= 1
            labels[far] = k
            counts[k] = 1
            centers[k] = X[far]
        centers = cluster_means(X, labels, K)
        history.append(float(pairwise_distances(X, centers, metric)[rows, labels].sum()))
        if prev is not None and np.array_equal(prev, labels):
            break
        prev = labels.copy()
    return labels, centers, history


def canonical_relabel(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters in order of first appearance (rows are id-sorted)."""
    mapping: Dict[int, int] = {}
    for lab in labels.tolist():
        if lab not in mapping:
            mapping[lab] = len(mapping)
    return np.array([mapping[l] for l in labels.tolist()], dtype=np.int64)


def kmeans_arrays(ids: np.ndarray, X: np.ndarray, K: int, metric: Union[str, Metric],
                  seed: int) -> ClusterAssignment:
    metric = Metric.parse(metric)
    n = X.shape[0]
    if K < 1:
        raise ClusteringError("K must be >= 1")
    if K > n:
        raise ClusteringError(f"K={K} exceeds number of clients {n}")
    rng = np.random.default_rng(seed)
    labels, _, history = lloyd(X, K, metric, rng)
    labels = canonical_relabel(labels)
    K_final = int(labels.max()) + 1
    centers = cluster_means(X, labels, K_final)
    out = ClusterAssignment({int(c): int(l) for c, l in zip(ids, labels)}, centers)
    out.objective_history = history
    return out


def kmeans(reps: Sequence[Representation], K: int, metric: Union[str, Metric] = Metric.L1,
           seed: int = 0) -> ClusterAssignment:
    """Cluster representations into K groups; deterministic given ``seed``.

    Inputs are sorted by client id first, so the result does not depend on
    the order of ``reps``.
    """
    if not reps:
        raise ClusteringError("no representations to cluster")
    ids, X = _sorted_arrays(reps)
    return kmeans_arrays(ids, X, K, metric, seed)


def silhouette_from_matrix(D: np.ndarray, labels: np.ndarray) -> float:
    K = int(labels.max()) + 1
    if K < 2:
        raise ClusteringError("silhouette needs at least 2 clusters")
    n = len(labels)
    sizes = np.bincount(labels, minlength=K).astype(np.float64)
    onehot = np.zeros((n, K))
    onehot[np.arange(n), labels] = 1.0
    sums = D @ onehot  # sum of distances from each point to each cluster
    own = sizes[labels]
    a = np.where(own > 1, sums[np.arange(n), labels] / np.maximum(own - 1, 1), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / sizes
    means[np.arange(n), labels] = np.inf
    means[:, sizes == 0] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(s.mean())


def silhouette_score(assignment: ClusterAssignment, reps: Sequence[Representation],
                     metric: Union[str, Metric] = Metric.L1) -> float:
    """Mean silhouette over clients; singleton clusters score 0."""
    if assignment.K < 2:
        raise ClusteringError("silhouette needs at least 2 clusters")
    ids, X = _sorted_arrays(reps)
    labels = assignment.labels_for(ids.tolist())
    return silhouette_from_matrix(pairwise_distances(X, X, metric), labels)


def default_k_range(n: int) -> Tuple[int, int]:
    k_max = min(20, n // 10, n - 1)
    return 2, max(2, k_max)


def choose_k_arrays(ids: np.ndarray, X: np.ndarray, metric: Union[str, Metric], seed: int,
                    k_min: Optional[int] = None, k_max: Optional[int] = None) -> ClusterAssignment:
    metric = Metric.parse(metric)
    n = X.shape[0]
    lo, hi = default_k_range(n)
    k_min = lo if k_min is None else k_min
    k_max = hi if k_max is None else k_max
    if not (2 <= k_min <= k_max <= n):
        raise ClusteringError(f"invalid K range [{k_min}, {k_max}] for {n} clients")
    D = pairwise_distances(X, X, metric)
    best, best_score = None, -np.inf
    for K in range(k_min, k_max + 1):
        cand = kmeans_arrays(ids, X, K, metric, seed)
        if cand.K < 2:
            continue
        score = silhouette_from_matrix(D, cand.labels_for(ids.tolist()))
        if score > best_score:
            best, best_score = cand, score
    if best is None:
        raise ClusteringError("no candidate clustering with at least 2 clusters")
    return best


def choose_k(reps: Sequence[Representation], metric: Union[str, Metric] = Metric.L1,
             k_min: Optional[int] = None, k_max: Optional[int] = None, seed: int = 0) -> ClusterAssignment:
    """Run k-means for every K in ``[k_min, k_max]`` and keep the best
    silhouette; ties go to the smaller K."""
    ids, X = _sorted_arrays(reps)
    return choose_k_arrays(ids, X, metric, seed, k_min, k_max)


def mean_client_distance_arrays(X: np.ndarray, labels: np.ndarray,
                                metric: Union[str, Metric] = Metric.L1) -> HeterogeneityReport:
    n = X.shape[0]
    if n == 0:
        return HeterogeneityReport(0.0, np.zeros(0), 0.0)
    D = pairwise_distances(X, X, metric)
    K = int(labels.max()) + 1
    per_client = np.zeros(n)
    for k in range(K):
        idx = np.flatnonzero(labels == k)
        if idx.size > 1:
            per_client[idx] = D[np.ix_(idx, idx)].sum(axis=1) / (idx.size - 1)
    per_cluster = np.array([per_client[labels == k].mean() if np.any(labels == k) else 0.0
                            for k in range(K)])
    global_mean = float(D.sum() / (n * (n - 1))) if n > 1 else 0.0
    return HeterogeneityReport(float(per_client.mean()), per_cluster, global_mean)


def mean_client_distance(assignment: ClusterAssignment, reps: Sequence[Representation],
                         metric: Union[str, Metric] = Metric.L1) -> HeterogeneityReport:
    """Average over clients of each client's mean distance to its
    same-cluster peers, plus the same quantity with every client in one
    global cluster."""
    ids, X = _sorted_arrays(reps)
    return mean_client_distance_arrays(X, assignment.labels_for(ids.tolist()), metric)
