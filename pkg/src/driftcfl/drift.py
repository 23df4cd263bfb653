"""Drift handling: per-client reassignment plus selective global re-clustering."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .clustering import ClusterAssignment, choose_k_arrays, cluster_means, default_k_range
from .models import ModelParams
from .representations import Metric, Representation, RepresentationError, distance, pairwise_distances
from .training import ClusterState

logger = logging.getLogger(__name__)


class DriftMode(str, enum.Enum):
    HYBRID = "hybrid"
    MOVE_INDIVIDUALS_ONLY = "move_individuals_only"
    GLOBAL_EVERY_EVENT = "global_every_event"
    RECLUSTER_SELECTED_ONLY = "recluster_selected_only"
    STATIC = "static"


@dataclass
class DriftPolicy:
    mode: DriftMode = DriftMode.HYBRID
    tau_fraction: float = 1.0 / 3.0
    pairwise_variant: bool = False
    pairwise_delta: float = 0.1
    pairwise_c: float = 0.1
    epsilon: float = 1e-6

    def __post_init__(self):
        self.mode = DriftMode(self.mode)
        if self.tau_fraction < 0:
            raise ValueError("tau_fraction must be non-negative")
        if self.pairwise_delta < 0 or self.pairwise_c <= 0:
            raise ValueError("pairwise_delta must be >= 0 and pairwise_c > 0")


@dataclass
class DriftOutcome:
    moved_clients: List[Tuple[int, int, int]]
    global_recluster_triggered: bool
    max_center_shift: float
    theta: float
    new_assignment: ClusterAssignment
    new_models: List[ModelParams]
    forced: bool = False

    def log_record(self, round_index: int) -> dict:
        return {"round": round_index, "moved_count": len(self.moved_clients),
                "triggered": bool(self.global_recluster_triggered),
                "theta": None if not np.isfinite(self.theta) else float(self.theta),
                "max_shift": float(self.max_center_shift), "new_K": self.new_assignment.K,
                "forced": bool(self.forced)}


def _vec(rep) -> np.ndarray:
    return rep.vector if isinstance(rep, Representation) else np.asarray(rep, dtype=np.float64)


def detect_drift(client_id: int, old_rep, new_rep, metric=Metric.L1, epsilon: float = 1e-6) -> bool:
    """True when the representation moved by more than ``epsilon``."""
    if old_rep is None:
        return True
    return distance(old_rep, new_rep, metric) > epsilon


def _compact(labels: Dict[int, int], K: int) -> Tuple[Dict[int, int], List[int]]:
    used = sorted(set(labels.values()))
    remap = {old: new for new, old in enumerate(used)}
    return {c: remap[k] for c, k in labels.items()}, used


def _centers_from(labels: Mapping[int, int], reps: Mapping[int, np.ndarray], K: int) -> np.ndarray:
    ids = sorted(labels)
    X = np.vstack([_vec(reps[c]) for c in ids])
    return cluster_means(X, np.array([labels[c] for c in ids]), K)


def reassign_drifted(drifted: Sequence[Tuple[int, object]], state: Union[ClusterState, ClusterAssignment],
                     metric=Metric.L1, reps: Optional[Mapping[int, object]] = None
                     ) -> Tuple[ClusterAssignment, List[Tuple[int, int, int]], List[int]]:
    """Move every drifted client to its nearest *frozen* center.

    Centers are those in force before the batch, so processing order cannot
    matter; ties go to the lowest cluster index. Centers are recomputed once
    after all moves from ``reps`` (the full current representation table);
    a client missing from ``reps`` stands in with its old cluster's center.
    Emptied clusters are dropped. Returns ``(assignment, moves, kept_old_indices)``.
    """
    assignment = state.assignment if isinstance(state, ClusterState) else state
    metric = Metric.parse(metric)
    centers = assignment.centers
    table = {c: centers[k] for c, k in assignment.client_to_cluster.items()}
    table.update(reps or {})
    labels = dict(assignment.client_to_cluster)
    moves = []
    for cid, rep in sorted(drifted, key=lambda t: t[0]):
        v = _vec(rep)
        table[cid] = v
        k_new = int(np.argmin(pairwise_distances(v[None, :], centers, metric)[0]))
        k_old = labels.get(cid)
        if k_old != k_new:
            moves.append((cid, -1 if k_old is None else k_old, k_new))
        labels[cid] = k_new
    labels, kept = _compact(labels, assignment.K)
    if len(kept) < assignment.K:
        dropped = sorted(set(range(assignment.K)) - set(kept))
        logger.info("clusters %s emptied by reassignment", dropped)
    new_centers = _centers_from(labels, table, len(kept))
    return ClusterAssignment(labels, new_centers), moves, kept


def center_shift_check(old_centers: np.ndarray, new_centers: np.ndarray, metric=Metric.L1,
                       tau_fraction: float = 1.0 / 3.0) -> Tuple[bool, float, float]:
    """``(triggered, theta, max_shift)`` where theta is the mean pairwise
    distance of the new centers and the trigger is ``max_shift >= tau*theta``.
    With one cluster theta is undefined and the check always triggers."""
    old_centers = np.atleast_2d(np.asarray(old_centers, dtype=np.float64))
    new_centers = np.atleast_2d(np.asarray(new_centers, dtype=np.float64))
    if old_centers.shape != new_centers.shape:
        raise RepresentationError(f"center arrays differ: {old_centers.shape} vs {new_centers.shape}")
    metric = Metric.parse(metric)
    K = new_centers.shape[0]
    shifts = np.array([distance(o, n, metric) if metric is not Metric.JENSEN_SHANNON
                       else pairwise_distances(o[None], n[None], metric)[0, 0]
                       for o, n in zip(old_centers, new_centers)])
    max_shift = float(shifts.max()) if shifts.size else 0.0
    if K < 2:
        return True, float("nan"), max_shift
    D = pairwise_distances(new_centers, new_centers, metric)
    iu = np.triu_indices(K, k=1)
    theta = float(D[iu].mean())
    return bool(max_shift >= tau_fraction * theta), theta, max_shift


def pairwise_trigger_check(assignment: ClusterAssignment, reps: Mapping[int, object], metric=Metric.L1,
                           delta: float = 0.1) -> bool:
    """True iff two clients in the same cluster are more than ``delta`` apart."""
    for k in range(assignment.K):
        members = [c for c in assignment.members(k) if c in reps]
        if len(members) < 2:
            continue
        X = np.vstack([_vec(reps[c]) for c in members])
        if pairwise_distances(X, X, metric).max() > delta:
            return True
    return False


def update_adaptive_delta(delta: float, c: float, last_two_events_triggered: bool) -> float:
    """Double the pairwise threshold after two consecutive triggers,
    otherwise set it to ``min(c, delta - c)`` floored at zero."""
    if last_two_events_triggered:
        return 2.0 * delta
    return max(0.0, min(c, delta - c))


def rebuild_models(prior_labels: Mapping[int, int], prior_models: Sequence[ModelParams],
                   new_assignment: ClusterAssignment, round_index: int = 0) -> List[ModelParams]:
    """Each new cluster model is the unweighted mean, over its members, of
    the model each member held before re-clustering."""
    out = []
    for k in range(new_assignment.K):
        members = new_assignment.members(k)
        stacked = np.vstack([prior_models[prior_labels[c]].values for c in members])
        out.append(ModelParams(stacked.mean(axis=0), (round_index, k)))
    return out


def global_recluster(reps: Mapping[int, object], metric: Metric, seed: int,
                      k_range: Optional[Tuple[int, int]]) -> ClusterAssignment:
    ids = np.array(sorted(reps), dtype=np.int64)
    X = np.vstack([_vec(reps[c]) for c in ids])
    lo, hi = k_range if k_range else default_k_range(len(ids))
    hi = min(hi, len(ids))
    if len(ids) < 2:
        return ClusterAssignment({int(c): 0 for c in ids}, X.mean(axis=0, keepdims=True))
    return choose_k_arrays(ids, X, metric, seed, min(lo, hi), hi)


def _recluster_selected(drifted, state: ClusterState, metric: Metric, seed: int, reps: Mapping[int, object],
                        selected: Sequence[int], k_range, round_index: int) -> DriftOutcome:
    old = state.assignment
    table = dict(reps)
    for cid, rep in drifted:
        table[cid] = _vec(rep)
    sel = sorted({c for c in selected if c in table})
    if len(sel) < 3:
        return _noop(state)
    lo, hi = k_range if k_range else default_k_range(len(sel))
    hi = min(hi, len(sel) - 1)
    sel_ids = np.array(sel, dtype=np.int64)
    sub = choose_k_arrays(sel_ids, np.vstack([_vec(table[c]) for c in sel]), metric, seed, min(lo, hi), hi)
    match = np.argmin(pairwise_distances(old.centers, sub.centers, metric), axis=1)
    labels = {}
    for cid in sorted(table):
        if cid in sub.client_to_cluster:
            labels[cid] = sub.client_to_cluster[cid]
        elif cid in old.client_to_cluster:
            labels[cid] = int(match[old.client_to_cluster[cid]])
        else:
            labels[cid] = int(np.argmin(pairwise_distances(_vec(table[cid])[None], sub.centers, metric)[0]))
    labels, _ = _compact(labels, sub.K)
    K = max(labels.values()) + 1
    new_assignment = ClusterAssignment(labels, _centers_from(labels, table, K))
    prior = {c: old.client_to_cluster[c] for c in labels if c in old.client_to_cluster}
    models = []
    for k in range(K):
        members = [c for c in new_assignment.members(k) if c in prior]
        if members:
            models.append(ModelParams(np.vstack([state.models[prior[c]].values for c in members]).mean(axis=0),
                                      (round_index, k)))
        else:
            models.append(ModelParams(np.mean([m.values for m in state.models], axis=0), (round_index, k)))
    moves = [(c, old.client_to_cluster.get(c, -1), k) for c, k in sorted(labels.items())
             if old.client_to_cluster.get(c, -1) != k]
    return DriftOutcome(moves, True, float("nan"), float("nan"), new_assignment, models)


def _noop(state: ClusterState) -> DriftOutcome:
    return DriftOutcome([], False, 0.0, float("nan"), state.assignment.copy(), [m.copy() for m in state.models])


def handle_drift_event(drifted: Sequence[Tuple[int, object]], state: ClusterState, policy: DriftPolicy,
                       metric=Metric.L1, seed: int = 0, reps: Optional[Mapping[int, object]] = None,
                       selected_last_round: Sequence[int] = (), k_range: Optional[Tuple[int, int]] = None,
                       round_index: int = 0) -> DriftOutcome:
    """Process one batch of drifted clients under ``policy``.

    ``reps`` is the coordinator's full representation table (drifted clients'
    entries are overridden by ``drifted``). The returned outcome carries the
    new assignment and one model per new cluster; ``state`` is not mutated.
    """
    metric = Metric.parse(metric)
    if not drifted:
        return _noop(state)
    table: Dict[int, np.ndarray] = {c: _vec(r) for c, r in (reps or {}).items()}
    for cid, rep in drifted:
        table[cid] = _vec(rep)
    mode = policy.mode

    if mode is DriftMode.RECLUSTER_SELECTED_ONLY:
        return _recluster_selected(drifted, state, metric, seed, table, selected_last_round, k_range, round_index)

    if mode is DriftMode.STATIC:
        newcomers = [(c, r) for c, r in drifted if c not in state.assignment.client_to_cluster]
        if not newcomers:
            return _noop(state)
        old_table = {c: table[c] for c in state.assignment.client_to_cluster}
        inter, moves, kept = reassign_drifted(newcomers, state.assignment, metric, old_table)
        return DriftOutcome(moves, False, 0.0, float("nan"), inter, [state.models[k].copy() for k in kept])

    inter, moves, kept = reassign_drifted(drifted, state.assignment, metric, table)
    models = [state.models[k].copy() for k in kept]
    triggered, theta, max_shift = center_shift_check(state.assignment.centers[kept], inter.centers, metric,
                                                     policy.tau_fraction)
    forced = inter.K < 2
    if mode is DriftMode.MOVE_INDIVIDUALS_ONLY:
        triggered = False
    elif mode is DriftMode.GLOBAL_EVERY_EVENT:
        triggered = True
    elif policy.pairwise_variant:
        triggered = pairwise_trigger_check(inter, table, metric, policy.pairwise_delta)
    triggered = triggered or forced
    if not triggered:
        return DriftOutcome(moves, False, max_shift, theta, inter, models)

    new_assignment = global_recluster(table, metric, seed, k_range)
    new_models = rebuild_models(inter.client_to_cluster, models, new_assignment, round_index)
    return DriftOutcome(moves, True, max_shift, theta, new_assignment, new_models, forced)


def apply_outcome(state: ClusterState, outcome: DriftOutcome) -> ClusterState:
    """Install the outcome's clusters and models. Server optimizer state is
    kept for clusters that survived unchanged and reset otherwise."""
    if outcome.global_recluster_triggered or outcome.new_assignment.K != state.assignment.K:
        servers = [{} for _ in outcome.new_models]
    else:
        servers = state.server_states
    state.assignment = outcome.new_assignment
    state.models = outcome.new_models
    state.server_states = servers
    return state
