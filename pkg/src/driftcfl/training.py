"""Per-cluster federated training: local SGD, aggregation and the round loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import rng as rngs
from .clustering import ClusterAssignment
from .models import Model, ModelError, ModelParams
from .selection import ClientProfile, Selector
from .simulation import ClientSnapshot, DeviceTimeModel, simulate_round_time

logger = logging.getLogger(__name__)

AGGREGATIONS = ("fedavg", "fedprox", "fedyogi", "qfedavg")


class DivergedClientError(ArithmeticError):
    def __init__(self, round_index: int, client_id: int):
        super().__init__(f"client {client_id} diverged in round {round_index}")
        self.round_index = round_index
        self.client_id = client_id


@dataclass
class AggregationConfig:
    method: str = "fedprox"
    mu_prox: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    eta_server: float = 0.01
    tau_adapt: float = 1e-3
    q: float = 1.0


@dataclass
class TrainingConfig:
    eta: float = 0.05
    local_steps: int = 20
    participants_per_round: int = 20
    rounds_per_event: int = 20
    total_events: int = 10
    batch_size: int = 20
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    sampling_with_replacement: bool = False

    @property
    def mu_prox(self) -> float:
        return self.aggregation.mu_prox if self.aggregation.method == "fedprox" else 0.0


@dataclass
class ClusterState:
    assignment: ClusterAssignment
    models: List[ModelParams]
    round: int = 0
    sim_time: float = 0.0
    server_states: List[dict] = field(default_factory=list)

    def __post_init__(self):
        if len(self.models) != self.assignment.K:
            raise ValueError(f"{len(self.models)} models for {self.assignment.K} clusters")
        if not self.server_states:
            self.server_states = [{} for _ in self.models]

    def model_of(self, client_id: int) -> ModelParams:
        return self.models[self.assignment.client_to_cluster[client_id]]


@dataclass
class LocalResult:
    params: ModelParams
    start_loss: float
    last_loss: float


def local_sgd(model: Model, start: ModelParams, X: np.ndarray, y: np.ndarray, config: TrainingConfig,
              rng: np.random.Generator, client_id: int = -1, round_index: int = 0) -> LocalResult:
    n = len(y)
    if n == 0:
        raise ValueError(f"client {client_id} has no training data")
    x0 = start.values
    x = x0.copy()
    mu = config.mu_prox
    start_loss = last_loss = float("nan")
    for step in range(config.local_steps):
        if n <= config.batch_size:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=config.batch_size, replace=False)
        try:
            loss, grad = model.loss_and_grad(x, X[idx], y[idx])
        except ModelError:
            raise DivergedClientError(round_index, client_id) from None
        if mu:
            grad = grad + mu * (x - x0)
        if step == 0:
            start_loss = loss
        last_loss = loss
        x = x - config.eta * grad
        if not np.all(np.isfinite(x)):
            raise DivergedClientError(round_index, client_id)
    return LocalResult(ModelParams(x, start.version), start_loss, last_loss)


def local_update(model: Model, start: ModelParams, X: np.ndarray, y: np.ndarray, config: TrainingConfig,
                 rng: np.random.Generator, client_id: int = -1, round_index: int = 0) -> ModelParams:
    """``local_steps`` mini-batch SGD steps from ``start`` (with the FedProx
    proximal term when the aggregation is FedProx)."""
    return local_sgd(model, start, X, y, config, rng, client_id, round_index).params


def aggregate(cluster_model: ModelParams, client_models: Sequence[ModelParams], method: AggregationConfig,
              server_state: Optional[dict] = None, client_losses: Optional[Sequence[float]] = None,
              local_eta: float = 0.05) -> Tuple[ModelParams, dict]:
    """Combine client models into the next cluster model.

    FedAvg/FedProx take the unweighted mean. FedYogi treats the mean client
    delta as a pseudo-gradient for an adaptive server step, keeping its
    moments in ``server_state``. q-FedAvg reweights client deltas by
    ``loss**q`` with the Lipschitz-estimate normalizer, using ``1/local_eta``
    as the Lipschitz constant; ``client_losses`` are losses at the cluster
    model.
    """
    if not client_models:
        raise ValueError("no client models to aggregate")
    dims = {m.dim for m in client_models} | {cluster_model.dim}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch in aggregation: {sorted(dims)}")
    state = dict(server_state or {})
    stacked = np.vstack([m.values for m in client_models])
    base = cluster_model.values
    name = method.method
    if name in ("fedavg", "fedprox"):
        new = stacked.mean(axis=0)
    elif name == "fedyogi":
        delta = stacked.mean(axis=0) - base
        m = state.get("m", np.zeros_like(base))
        v = state.get("v", np.full_like(base, method.tau_adapt ** 2))
        m = method.beta1 * m + (1.0 - method.beta1) * delta
        d2 = delta * delta
        v = v - (1.0 - method.beta2) * d2 * np.sign(v - d2)
        new = base + method.eta_server * m / (np.sqrt(v) + method.tau_adapt)
        state["m"], state["v"] = m, v
    elif name == "qfedavg":
        if client_losses is None or len(client_losses) != len(client_models):
            raise ValueError("q-FedAvg needs one loss per client model")
        lip = 1.0 / local_eta
        q = method.q
        num = np.zeros_like(base)
        h = 0.0
        for vals, loss in zip(stacked, client_losses):
            f = float(loss) + 1e-10
            dw = lip * (base - vals)
            num += f ** q * dw
            h += q * f ** (q - 1.0) * float(dw @ dw) + lip * f ** q
        new = base - num / h
    else:
        raise ValueError(f"unknown aggregation {name!r}")
    return ModelParams(new, cluster_model.version), state


def cluster_budgets(sizes: Sequence[int], M: int) -> List[int]:
    """Per-cluster sample counts: ``max(1, M // K)`` each, with the leftover
    ``M - K * (M // K)`` handed out one apiece to the largest clusters."""
    K = len(sizes)
    if K == 0:
        return []
    base = max(1, M // K)
    budgets = [base] * K
    leftover = max(0, M - K * (M // K)) if M >= K else 0
    for k in sorted(range(K), key=lambda k: (-sizes[k], k))[:leftover]:
        budgets[k] += 1
    return budgets


@dataclass
class ClusterRoundResult:
    cluster: int
    selected: List[int]
    aggregated: List[int]
    dropped: List[int]
    diverged: List[int]
    round_time: float
    losses: Dict[int, float]


def run_cluster_round(k: int, state: ClusterState, config: TrainingConfig, selector: Selector,
                      time_model: DeviceTimeModel, rng: np.random.Generator, model: Model,
                      data: Mapping[int, ClientSnapshot], profiles: Mapping[int, ClientProfile],
                      n_select: int, seed: int = 0, reps: Optional[Mapping[int, np.ndarray]] = None,
                      ) -> ClusterRoundResult:
    """One round for cluster ``k``: select, train locally, drop stragglers,
    aggregate. Updates ``state.models[k]`` in place."""
    r = state.round
    members = [c for c in state.assignment.members(k) if c in data and len(data[c].y_train) > 0]
    if not members:
        logger.warning("round %d: cluster %d has no trainable members, skipping", r, k)
        return ClusterRoundResult(k, [], [], [], [], 0.0, {})
    n = n_select if config.sampling_with_replacement else min(n_select, len(members))
    selected = selector.select(members, n, rng, round_index=r, profiles=profiles,
                               center=state.assignment.centers[k], reps=reps)
    timing = simulate_round_time(selected, config, time_model)
    start = state.models[k]
    results: List[Tuple[int, LocalResult]] = []
    diverged = []
    for slot, c in enumerate(selected):
        if c in timing.dropped:
            continue
        crng = rngs.stream(seed, "local", r, c, slot)
        snap = data[c]
        try:
            res = local_sgd(model, start, snap.X_train, snap.y_train, config, crng, c, r)
        except DivergedClientError as err:
            logger.warning("%s; dropped from aggregation", err)
            diverged.append(c)
            continue
        results.append((c, res))
    if results:
        new, sstate = aggregate(start, [res.params for _, res in results], config.aggregation,
                                state.server_states[k], [res.start_loss for _, res in results], config.eta)
        state.models[k] = ModelParams(new.values, (r, k))
        state.server_states[k] = sstate
    return ClusterRoundResult(k, list(selected), [c for c, _ in results], sorted(timing.dropped), diverged,
                              timing.round_time, {c: res.start_loss for c, res in results})


def run_round(state: ClusterState, config: TrainingConfig, selector: Selector, time_model: DeviceTimeModel,
              model: Model, data: Mapping[int, ClientSnapshot], profiles: Mapping[int, ClientProfile],
              seed: int = 0, reps: Optional[Mapping[int, np.ndarray]] = None) -> List[ClusterRoundResult]:
    """Train every cluster for one round. Clusters are independent; results
    are reduced in cluster-index order and the simulated clock advances by
    the slowest cluster."""
    sizes = [len([c for c in state.assignment.members(k) if c in data and len(data[c].y_train)])
             for k in range(state.assignment.K)]
    budgets = cluster_budgets(sizes, config.participants_per_round)
    out = []
    for k in range(state.assignment.K):
        out.append(run_cluster_round(k, state, config, selector, time_model,
                                     rngs.stream(seed, "selection", state.round, k), model, data, profiles,
                                     budgets[k], seed, reps))
    for res in out:
        for c in res.selected:
            if c in profiles:
                profiles[c].last_selected_round = state.round
        for c, loss in res.losses.items():
            if c in profiles:
                profiles[c].last_loss = loss
    state.sim_time += max((res.round_time for res in out), default=0.0)
    state.round += 1
    return out


def run_event_block(state: ClusterState, config: TrainingConfig, selector: Selector, time_model: DeviceTimeModel,
                    model: Model, data: Mapping[int, ClientSnapshot], profiles: Mapping[int, ClientProfile],
                    seed: int = 0, reps: Optional[Mapping[int, np.ndarray]] = None, start_offset: int = 0,
                    on_round: Optional[Callable[[ClusterState, List[ClusterRoundResult]], None]] = None,
                    ) -> ClusterState:
    """Run the remaining ``rounds_per_event - start_offset`` rounds of an event."""
    for _ in range(start_offset, config.rounds_per_event):
        results = run_round(state, config, selector, time_model, model, data, profiles, seed, reps)
        if on_round is not None:
            on_round(state, results)
    return state
