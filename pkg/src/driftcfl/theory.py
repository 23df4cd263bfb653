"""Executable checks of the convergence bounds for clustered SGD under drift.

Every instance is built from quadratics that share one Hessian ``H``, so all
cluster-average minimizers are plain means of the client centers and every
constant (smoothness, PL, representation ratio) is known exactly. Each check
first verifies its instance against the assumptions it relies on and raises
:class:`TheorySetupError` if the construction is invalid.

Client representation is ``r_i = (a_i, b_i)`` with
``rho(r_i, r_j) = ||a_i - a_j||_2 + |b_i - b_j|``. On an axis-aligned box of
diameter ``D`` the ratio ``|f_i - f_j| / rho`` is at most
``max(lambda_max(H) * D, 1)``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as rngs

logger = logging.getLogger(__name__)

SLACK = 1e-12


class TheorySetupError(ValueError):
    """A constructed instance violates an assumption its check relies on."""


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class TheoryParams:
    L_smooth: float
    mu_pl: float
    sigma_sq: float = 0.0
    theta_lip: float = 0.0
    Delta: float = 0.0
    delta_drift: float = 0.0

    def __post_init__(self):
        if not self.mu_pl > 0:
            raise TheorySetupError("mu_pl must be positive")
        if self.L_smooth < self.mu_pl:
            raise TheorySetupError("L_smooth must be >= mu_pl")
        for name in ("sigma_sq", "theta_lip", "Delta", "delta_drift"):
            if getattr(self, name) < 0:
                raise TheorySetupError(f"{name} must be non-negative")


@dataclass
class QuadraticClient:
    """``f(x) = 0.5 (x-a)^T H (x-a) + b + amp * sin(freq . x)``.

    The sine term is zero by default and is used only to build non-linear
    objective differences for the gradient-difference check.
    """

    H: np.ndarray
    a: np.ndarray
    b: float = 0.0
    sin_amp: float = 0.0
    sin_freq: Optional[np.ndarray] = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=np.float64))
        self.a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        if self.H.shape != (self.a.size, self.a.size):
            raise TheorySetupError(f"H shape {self.H.shape} does not match center of size {self.a.size}")
        if not np.allclose(self.H, self.H.T):
            raise TheorySetupError("H must be symmetric")
        if self.sin_freq is not None:
            self.sin_freq = np.asarray(self.sin_freq, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.a.size

    def value(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        D = X - self.a
        out = 0.5 * np.einsum("ni,ij,nj->n", D, self.H, D) + self.b
        if self.sin_amp:
            out = out + self.sin_amp * np.sin(X @ self.sin_freq)
        return out

    def grad(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        G = (X - self.a) @ self.H
        if self.sin_amp:
            G = G + self.sin_amp * np.cos(X @ self.sin_freq)[:, None] * self.sin_freq[None, :]
        return G

    def smoothness(self) -> float:
        L = float(np.linalg.eigvalsh(self.H)[-1])
        if self.sin_amp:
            L += abs(self.sin_amp) * float(self.sin_freq @ self.sin_freq)
        return L

    def representation(self) -> np.ndarray:
        return np.concatenate([self.a, [self.b]])


def rep_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    return float(np.linalg.norm(r1[:-1] - r2[:-1]) + abs(r1[-1] - r2[-1]))


def curvature(H: np.ndarray) -> Tuple[float, float]:
    """``(L_smooth, mu_pl)`` of a quadratic with Hessian ``H``."""
    ev = np.linalg.eigvalsh(np.asarray(H, dtype=np.float64))
    if ev[0] <= 0:
        raise TheorySetupError("H must be positive definite")
    return float(ev[-1]), float(ev[0])


def box_theta(H: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Representation ratio valid on the box ``[lo, hi]`` when every center lies inside it."""
    L, _ = curvature(H)
    return max(L * float(np.linalg.norm(np.asarray(hi) - np.asarray(lo))), 1.0)


def bounding_box(points: np.ndarray, margin: float) -> Tuple[np.ndarray, np.ndarray]:
    points = np.atleast_2d(points)
    return points.min(axis=0) - margin, points.max(axis=0) + margin


def cluster_minimizer(clients: Sequence[QuadraticClient]) -> np.ndarray:
    """Minimizer of the average of quadratics sharing one Hessian: the mean center."""
    return np.mean([c.a for c in clients], axis=0)


def verify_representation_ratio(clients: Sequence[QuadraticClient], theta: float, lo, hi,
                                n_points: int = 500, seed: int = 0) -> float:
    """Sample the box and confirm ``|f_i - f_j| <= theta * rho`` for all pairs.
    Returns the largest observed ratio."""
    rng = rngs.stream(seed, "theory-ratio")
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    P = rng.uniform(lo, hi, size=(n_points, lo.size))
    P = np.vstack([P, lo, hi])
    values = np.vstack([c.value(P) for c in clients])
    reps = [c.representation() for c in clients]
    worst = 0.0
    for i in range(len(clients)):
        for j in range(i + 1, len(clients)):
            rho = rep_distance(reps[i], reps[j])
            gap = float(np.max(np.abs(values[i] - values[j])))
            if rho == 0.0:
                if gap > 1e-9:
                    raise TheorySetupError(f"clients {i},{j} share a representation but differ by {gap}")
                continue
            worst = max(worst, gap / rho)
    if worst > theta * (1 + 1e-9):
        raise TheorySetupError(f"representation ratio {worst:.6g} exceeds theta {theta:.6g}")
    return worst


def max_diameter(reps: np.ndarray, labels: np.ndarray) -> float:
    worst = 0.0
    for k in np.unique(labels):
        R = reps[labels == k]
        for i in range(len(R)):
            for j in range(i + 1, len(R)):
                worst = max(worst, rep_distance(R[i], R[j]))
    return worst


@dataclass
class CheckResult:
    name: str
    passed: bool
    empirical: float
    bound: float
    trials: int
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["passed"] = bool(self.passed)
        return d


def _gap(client: QuadraticClient, X: np.ndarray) -> np.ndarray:
    D = X - client.a
    return 0.5 * np.einsum("ni,ij,nj->n", D, client.H, D)


def check_sgd_bound(client: QuadraticClient, eta: float, T_steps: int, sigma_sq: float, trials: int = 2000,
                    x0: Optional[np.ndarray] = None, seed: int = 0, tolerance: float = 0.05) -> CheckResult:
    """Monte-Carlo check of ``E[f(x_T) - f*] <= (1-eta mu)^T gap_0 + L eta sigma^2 / (2 mu)``.

    Stochastic gradients add isotropic Gaussian noise with total variance
    ``sigma_sq``.
    """
    L, mu = curvature(client.H)
    if eta > 1.0 / L + SLACK:
        raise PreconditionError(f"eta={eta} exceeds 1/L={1.0 / L}")
    d = client.dim
    x0 = client.a + np.ones(d) if x0 is None else np.asarray(x0, dtype=np.float64)
    gap0 = float(_gap(client, x0[None])[0])
    rng = rngs.stream(seed, "theory-sgd")
    X = np.repeat(x0[None, :], trials, axis=0)
    scale = np.sqrt(sigma_sq / d)
    curve = [gap0]
    for _ in range(T_steps):
        G = (X - client.a) @ client.H
        if sigma_sq:
            G = G + rng.normal(0.0, scale, size=X.shape)
        X = X - eta * G
        curve.append(float(_gap(client, X).mean()))
    empirical = curve[-1]
    first = (1.0 - eta * mu) ** T_steps * gap0
    bound = first + L * eta * sigma_sq / (2.0 * mu)
    passed = empirical <= bound * (1.0 + tolerance) + SLACK
    return CheckResult("sgd_bound", bool(passed), empirical, bound, trials,
                       {"L_smooth": L, "mu_pl": mu, "eta": eta, "T": T_steps, "sigma_sq": sigma_sq,
                        "first_term": first, "curve": curve})


def check_grad_diff_bound(ci: QuadraticClient, cj: QuadraticClient, theta_lip: float, Delta: float,
                          points: Optional[np.ndarray] = None, lo=None, hi=None, n_points: int = 1000,
                          seed: int = 0, L_smooth: Optional[float] = None) -> CheckResult:
    """Check ``||grad f_i - grad f_j|| <= sqrt(8 L theta Delta)`` on a point set.

    The premise ``|f_i - f_j| <= theta * Delta`` is verified on the same
    points first. Points default to ``n_points`` uniform draws in ``[lo, hi]``.
    """
    if points is None:
        if lo is None or hi is None:
            raise TheorySetupError("need either points or a box")
        rng = rngs.stream(seed, "theory-grid")
        lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
        points = rng.uniform(lo, hi, size=(n_points, lo.size))
    points = np.atleast_2d(points)
    L = max(ci.smoothness(), cj.smoothness()) if L_smooth is None else L_smooth
    if L + SLACK < max(ci.smoothness(), cj.smoothness()):
        raise TheorySetupError("L_smooth below the clients' smoothness")
    premise = float(np.max(np.abs(ci.value(points) - cj.value(points))))
    if premise > theta_lip * Delta * (1 + 1e-9) + SLACK:
        raise TheorySetupError(f"objective gap {premise:.6g} exceeds theta*Delta={theta_lip * Delta:.6g}")
    diff = np.linalg.norm(ci.grad(points) - cj.grad(points), axis=1)
    empirical = float(diff.max())
    bound = float(np.sqrt(8.0 * L * theta_lip * Delta))
    return CheckResult("grad_diff_bound", bool(empirical <= bound + SLACK), empirical, bound, len(points),
                       {"L_smooth": L, "theta_delta": theta_lip * Delta, "max_objective_gap": premise})


def linear_difference_pair(H, a_i, a_j, lo, hi, b_i: float = 0.0, b_j: float = 0.0
                           ) -> Tuple[QuadraticClient, QuadraticClient, float]:
    """Two quadratics and the exact supremum of ``|f_i - f_j|`` over the box.

    With a shared Hessian the difference is affine, so its extremes sit at
    box corners and are found coordinate-wise.
    """
    ci, cj = QuadraticClient(H, a_i, b_i), QuadraticClient(H, a_j, b_j)
    H = ci.H
    g = H @ (cj.a - ci.a)
    c0 = 0.5 * float(ci.a @ H @ ci.a - cj.a @ H @ cj.a) + b_i - b_j
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    top = c0 + float(np.sum(np.maximum(g * lo, g * hi)))
    bottom = c0 + float(np.sum(np.minimum(g * lo, g * hi)))
    return ci, cj, max(abs(top), abs(bottom))


def check_recluster_bound(before: Sequence[QuadraticClient], after: Sequence[QuadraticClient],
                          before_labels: Sequence[int], before_models: np.ndarray, after_labels: Sequence[int],
                          theta_lip: float, Delta: float, delta: float, lo=None, hi=None,
                          tol: float = 1e-9) -> CheckResult:
    """Evaluate both sides of the re-clustering inequality.

    Left: average suboptimality right after re-clustering, where each new
    cluster model is the mean of its members' previous cluster models.
    Right: average suboptimality before the drift plus ``3 theta (Delta + delta)``.
    """
    N = len(before)
    if len(after) != N:
        raise TheorySetupError("before/after populations differ in size")
    bl, al = np.asarray(before_labels), np.asarray(after_labels)
    models = np.atleast_2d(np.asarray(before_models, dtype=np.float64))
    rb = np.vstack([c.representation() for c in before])
    ra = np.vstack([c.representation() for c in after])
    drift = max(rep_distance(rb[i], ra[i]) for i in range(N))
    if drift > delta + 1e-12:
        raise TheorySetupError(f"drift {drift:.6g} exceeds delta {delta:.6g}")
    diam = max(max_diameter(rb, bl), max_diameter(ra, al))
    if diam > Delta + 1e-12:
        raise TheorySetupError(f"cluster diameter {diam:.6g} exceeds Delta {Delta:.6g}")
    if lo is not None:
        verify_representation_ratio(list(before) + list(after), theta_lip, lo, hi)

    x = models[bl]
    right = 0.0
    for k in np.unique(bl):
        members = [before[i] for i in np.flatnonzero(bl == k)]
        star = cluster_minimizer(members)
        right += sum(float(c.value(models[k])[0] - c.value(star)[0]) for c in members)
    right = right / N + 3.0 * theta_lip * (Delta + delta)
    left = 0.0
    for l in np.unique(al):
        idx = np.flatnonzero(al == l)
        model = x[idx].mean(axis=0)
        members = [after[i] for i in idx]
        star = cluster_minimizer(members)
        left += sum(float(c.value(model)[0] - c.value(star)[0]) for c in members)
    left /= N
    return CheckResult("recluster_bound", bool(left <= right + tol), left, right, 1,
                       {"theta_lip": theta_lip, "Delta": Delta, "delta": delta, "observed_drift": drift,
                        "observed_diameter": diam})


def k_center(reps: np.ndarray, K: int) -> np.ndarray:
    """Farthest-first traversal starting from the lowest index; points join
    the nearest chosen center, ties to the earliest center."""
    n = len(reps)
    K = min(K, n)
    centers = [0]
    dist = np.array([rep_distance(reps[0], r) for r in reps])
    while len(centers) < K:
        nxt = int(np.argmax(dist))
        centers.append(nxt)
        dist = np.minimum(dist, [rep_distance(reps[nxt], r) for r in reps])
    D = np.array([[rep_distance(reps[c], r) for c in centers] for r in reps])
    return np.argmin(D, axis=1)


def _relabel(labels: np.ndarray) -> np.ndarray:
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = {int(labels[first[o]]): i for i, o in enumerate(order)}
    return np.array([remap[int(l)] for l in labels])


@dataclass
class TrajectoryInstance:
    H: np.ndarray
    centers: List[np.ndarray]  # one (N, d) array per event
    x0: np.ndarray
    K: int
    initial_labels: np.ndarray


def build_trajectory_instance(seed: int = 0, num_clients: int = 30, K: int = 3, dim: int = 2, events: int = 8,
                              separation: float = 4.0, spread: float = 0.25, jitter: float = 0.05,
                              jump_events: Sequence[int] = (3,), jump_fraction: float = 0.1,
                              H: Optional[np.ndarray] = None) -> TrajectoryInstance:
    """Clustered quadratic centers with a deterministic drift script.

    Every event each center takes a random step of norm ``jitter``; at
    ``jump_events`` a fraction of clients relocate to another cluster's
    neighborhood.
    """
    rng = rngs.stream(seed, "theory-instance")
    H = np.diag(np.linspace(1.0, 2.0, dim)) if H is None else np.asarray(H, dtype=np.float64)
    truth_centers = np.zeros((K, dim))
    for k in range(K):
        truth_centers[k, k % dim] = separation * (1 + k // dim)
    truth = np.arange(num_clients) % K
    offsets = rng.normal(size=(num_clients, dim))
    offsets *= (spread * rng.uniform(0, 1, size=num_clients) / np.linalg.norm(offsets, axis=1))[:, None]
    A = truth_centers[truth] + offsets
    snapshots = [A.copy()]
    for t in range(1, events):
        step = rng.normal(size=A.shape)
        step *= (jitter / np.linalg.norm(step, axis=1))[:, None]
        A = A + step
        if t in jump_events:
            movers = rng.choice(num_clients, size=max(1, int(round(jump_fraction * num_clients))), replace=False)
            for i in movers:
                dest = (truth[i] + 1 + rng.integers(0, K - 1)) % K if K > 1 else truth[i]
                A[i] = A[i] - truth_centers[truth[i]] + truth_centers[dest]
                truth[i] = dest
        snapshots.append(A.copy())
    x0 = np.full(dim, -1.0)
    labels = _relabel(k_center(np.hstack([snapshots[0], np.zeros((num_clients, 1))]), K))
    return TrajectoryInstance(H, snapshots, x0, K, labels)


def _suboptimality(H: np.ndarray, A: np.ndarray, labels: np.ndarray, models: np.ndarray) -> np.ndarray:
    """Average client suboptimality of the cluster models, one value per trial
    (``models`` has shape ``(trials, K, d)``)."""
    total = np.zeros(models.shape[0])
    for k in range(models.shape[1]):
        members = A[labels == k]
        if len(members) == 0:
            continue
        star = members.mean(axis=0)
        for a in members:
            Dm, Ds = models[:, k, :] - a, star - a
            total += 0.5 * np.einsum("ti,ij,tj->t", Dm, H, Dm) - 0.5 * float(Ds @ H @ Ds)
    return total / len(A)


def check_theorem_trajectory(instance: TrajectoryInstance, eta: float, rounds_per_event: int, participants: int,
                             sigma_sq: float, trials: int = 500, seed: int = 0, tolerance: float = 0.05,
                             delta_trigger: Optional[float] = None, box_margin: float = 2.0) -> CheckResult:
    """Run the analyzed algorithm (fixed K, k-center re-clustering on a
    pairwise-diameter trigger, with-replacement sampling, one local step per
    round) vectorized over trials, and compare the per-event average cluster
    suboptimality with the accumulated bound

        B_{t+1} = (1-eta mu)^R (B_t + 3 theta (Delta + delta))
                  + (L eta^2 / 2) V sum_{i<R} (1-eta mu)^i,
        V = (sigma^2 + 8 L theta Delta) / (M / K).

    The closed-form bound is reported alongside for reference.
    """
    H, K = instance.H, instance.K
    L, mu = curvature(H)
    if eta > 1.0 / L + SLACK:
        raise PreconditionError(f"eta={eta} exceeds 1/L={1.0 / L}")
    T, R = len(instance.centers), rounds_per_event
    N, d = instance.centers[0].shape
    m = max(1, participants // K)
    pad = lambda A: np.hstack([A, np.zeros((len(A), 1))])  # noqa: E731

    # clustering depends only on representations, so it is shared by all trials
    labels_per_event, triggers = [], []
    labels = instance.initial_labels.copy()
    delta_trig = delta_trigger
    if delta_trig is None:
        delta_trig = max_diameter(pad(instance.centers[0]), labels) * 1.5
    for t in range(T):
        reps = pad(instance.centers[t])
        prev = labels
        if t > 0:
            means = np.vstack([instance.centers[t][prev == k].mean(axis=0) for k in range(K) if np.any(prev == k)])
            live = [k for k in range(K) if np.any(prev == k)]
            D = np.linalg.norm(instance.centers[t][:, None, :] - means[None, :, :], axis=2)
            labels = np.array([live[j] for j in np.argmin(D, axis=1)])
        fired = max_diameter(reps, labels) > delta_trig
        new_labels = _relabel(k_center(reps, K)) if fired else labels
        labels_per_event.append((labels, new_labels))
        triggers.append(bool(fired))
        labels = new_labels

    # constants of the bound, measured on the instance itself
    all_a = np.vstack(instance.centers + [instance.x0[None]])
    lo, hi = bounding_box(all_a, box_margin)
    theta = box_theta(H, lo, hi)
    delta = max((float(np.max(np.linalg.norm(instance.centers[t] - instance.centers[t - 1], axis=1)))
                 for t in range(1, T)), default=0.0)
    diam = max([max_diameter(pad(instance.centers[0]), instance.initial_labels)]
               + [max_diameter(pad(instance.centers[t]), lab[1]) for t, lab in enumerate(labels_per_event)]
               + [max_diameter(pad(instance.centers[t - 1]), labels_per_event[t - 1][1]) for t in range(1, T)])
    Delta = max(delta_trig, diam)

    rng = rngs.stream(seed, "theory-trajectory")
    models = np.repeat(instance.x0[None, None, :], trials, axis=0).repeat(K, axis=1)
    client_models = np.repeat(instance.x0[None, None, :], trials, axis=0).repeat(N, axis=1)
    initial = float(_suboptimality(H, instance.centers[0], instance.initial_labels, models).mean())
    contraction = (1.0 - eta * mu) ** R
    noise_sum = sum((1.0 - eta * mu) ** i for i in range(R))
    V = (sigma_sq + 8.0 * L * theta * Delta) / m
    bound = initial
    measured_curve, bound_curve, closed_curve = [initial], [initial], [initial]
    outside = 0
    for t in range(T):
        A = instance.centers[t]
        reassigned, labels = labels_per_event[t]
        if t > 0:
            client_models = models[:, reassigned, :]
        live = [k for k in range(K) if np.any(labels == k)]
        models = np.stack([client_models[:, labels == k, :].mean(axis=1) if k in live
                           else np.repeat(instance.x0[None], trials, axis=0) for k in range(K)], axis=1)
        for _ in range(R):
            for k in live:
                members = np.flatnonzero(labels == k)
                picks = members[rng.integers(0, len(members), size=(trials, m))]
                target = A[picks].mean(axis=1)
                G = (models[:, k, :] - target) @ H
                if sigma_sq:
                    G = G + rng.normal(0.0, np.sqrt(sigma_sq / (d * m)), size=G.shape)
                models[:, k, :] -= eta * G
        outside += int(np.sum(np.any((models < lo) | (models > hi), axis=2)))
        measured = float(_suboptimality(H, A, labels, models).mean())
        bound = contraction * (bound + 3.0 * theta * (Delta + delta)) + 0.5 * L * eta ** 2 * V * noise_sum
        closed = (contraction ** (t + 1)) * initial + (L * eta / (2.0 * mu)) * (V + 3.0 * theta * (Delta + delta)
                                                                             * contraction)
        measured_curve.append(measured)
        bound_curve.append(bound)
        closed_curve.append(closed)
    ok = all(mv <= bv * (1.0 + tolerance) + SLACK for mv, bv in zip(measured_curve, bound_curve))
    return CheckResult("theorem_trajectory", bool(ok), measured_curve[-1], bound_curve[-1], trials,
                       {"L_smooth": L, "mu_pl": mu, "theta_lip": theta, "Delta": Delta, "delta": delta,
                        "delta_trigger": delta_trig, "triggers": triggers, "per_event_measured": measured_curve,
                        "per_event_bound": bound_curve, "closed_form_bound": closed_curve,
                        "closed_form_holds": bool(all(mv <= cv * (1 + tolerance) + SLACK
                                                      for mv, cv in zip(measured_curve, closed_curve))),
                        "models_outside_box": outside, "eta": eta, "R": R, "M": participants, "K": K,
                        "sigma_sq": sigma_sq})


@dataclass
class TheorySuiteConfig:
    seed: int = 0
    dim: int = 2
    sgd_eta: float = 0.25
    sgd_steps: int = 200
    sgd_trials: int = 2000
    sigma_sq: float = 0.1
    grid_points: int = 1000
    num_clients: int = 30
    num_clusters: int = 3
    events: int = 8
    rounds_per_event: int = 10
    participants: int = 9
    eta: float = 0.2
    trajectory_trials: int = 500
    tolerance: float = 0.05

    @classmethod
    def from_dict(cls, data: dict) -> "TheorySuiteConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown theory parameters: {unknown}")
        return cls(**data)


def _recluster_instance(seed: int, num_clients: int = 30, K: int = 3, dim: int = 2):
    inst = build_trajectory_instance(seed=seed, num_clients=num_clients, K=K, dim=dim, events=2,
                                     jump_events=(1,), jump_fraction=0.1)
    H = inst.H
    before = [QuadraticClient(H, a) for a in inst.centers[0]]
    after = [QuadraticClient(H, a) for a in inst.centers[1]]
    bl = inst.initial_labels
    reps_after = np.vstack([c.representation() for c in after])
    al = _relabel(k_center(reps_after, K))
    rng = rngs.stream(seed, "theory-recluster-models")
    models = np.vstack([cluster_minimizer([before[i] for i in np.flatnonzero(bl == k)]) for k in range(K)])
    models = models + rng.normal(0.0, 0.5, size=models.shape)
    rb = np.vstack([c.representation() for c in before])
    Delta = max(max_diameter(rb, bl), max_diameter(reps_after, al))
    delta = max(rep_distance(rb[i], reps_after[i]) for i in range(num_clients))
    lo, hi = bounding_box(np.vstack([rb[:, :-1], reps_after[:, :-1], models]), 1.0)
    theta = box_theta(H, lo, hi)
    return before, after, bl, models, al, theta, Delta, delta, lo, hi


def run_suite(cfg: Optional[TheorySuiteConfig] = None) -> dict:
    """Run all four checks and return a JSON-ready report."""
    cfg = cfg or TheorySuiteConfig()
    started = time.perf_counter()
    results: List[CheckResult] = []

    H = np.diag(np.linspace(1.0, 4.0, cfg.dim))
    client = QuadraticClient(H, np.ones(cfg.dim))
    results.append(check_sgd_bound(client, cfg.sgd_eta, cfg.sgd_steps, cfg.sigma_sq, cfg.sgd_trials,
                                   x0=np.full(cfg.dim, 3.0), seed=cfg.seed, tolerance=cfg.tolerance))

    lo, hi = np.full(cfg.dim, -5.0), np.full(cfg.dim, 5.0)
    ci, cj, sup_gap = linear_difference_pair(H, np.zeros(cfg.dim), np.full(cfg.dim, 0.5), lo, hi)
    lin = check_grad_diff_bound(ci, cj, theta_lip=1.0, Delta=sup_gap, lo=lo, hi=hi, n_points=cfg.grid_points,
                                seed=cfg.seed)
    lin.name = "grad_diff_bound_linear"
    results.append(lin)
    freq = np.full(cfg.dim, 1.0)
    amp = 0.5
    si = QuadraticClient(H, np.zeros(cfg.dim))
    sj = QuadraticClient(H, np.zeros(cfg.dim), sin_amp=amp, sin_freq=freq)
    sine = check_grad_diff_bound(si, sj, theta_lip=1.0, Delta=amp, lo=lo, hi=hi, n_points=cfg.grid_points,
                                 seed=cfg.seed)
    sine.name = "grad_diff_bound_sine"
    results.append(sine)

    before, after, bl, models, al, theta, Delta, delta, blo, bhi = _recluster_instance(
        cfg.seed, cfg.num_clients, cfg.num_clusters, cfg.dim)
    results.append(check_recluster_bound(before, after, bl, models, al, theta, Delta, delta, blo, bhi))

    inst = build_trajectory_instance(seed=cfg.seed, num_clients=cfg.num_clients, K=cfg.num_clusters, dim=cfg.dim,
                                     events=cfg.events)
    results.append(check_theorem_trajectory(inst, cfg.eta, cfg.rounds_per_event, cfg.participants, cfg.sigma_sq,
                                            cfg.trajectory_trials, cfg.seed, cfg.tolerance))
    elapsed = time.perf_counter() - started
    for r in results:
        logger.info("%s: %s (empirical %.6g, bound %.6g)", r.name, "pass" if r.passed else "FAIL",
                    r.empirical, r.bound)
    return {"checks": [r.to_json() for r in results], "all_passed": all(r.passed for r in results),
            "runtime_s": elapsed, "config": asdict(cfg)}
