"""Synthetic clusterable tasks, scripted drift traces and the device time model.

A population is a set of clients whose samples are generated in time order,
one segment at a time, from a per-segment concept. Trace builders turn the
samples into timed arrival/retirement events; :class:`TraceReplay` answers
"what does client ``c`` hold at round ``r``".
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import rng as rngs

logger = logging.getLogger(__name__)

ARRIVE = "arrive_bucket"
RETIRE = "retire"
SWAP = "swap_labels"
PERMUTE = "permute_reported_histogram"
EVENT_KINDS = (ARRIVE, RETIRE, SWAP, PERMUTE)


@dataclass
class SyntheticTask:
    """Concepts are (label prior, per-label Gaussian input mean) pairs.

    The first ``num_initial_concepts`` concepts populate clients at time 0;
    any extra concepts are only reachable through scripted switches.
    """

    num_labels: int
    input_dim: int
    label_priors: np.ndarray  # (concepts, labels)
    means: np.ndarray  # (concepts, labels, input_dim)
    shared_means: np.ndarray  # (labels, input_dim), concept-free
    noise: float = 1.0
    label_noise: float = 0.0
    num_initial_concepts: int = 0

    def __post_init__(self):
        if self.num_initial_concepts <= 0:
            self.num_initial_concepts = self.label_priors.shape[0]
        if not np.allclose(self.label_priors.sum(axis=1), 1.0) or np.any(self.label_priors < 0):
            raise ValueError("label priors must be probability vectors")

    @property
    def num_concepts(self) -> int:
        return int(self.label_priors.shape[0])


def make_task(num_labels: int = 10, input_dim: int = 32, num_concepts: int = 4, extra_concepts: int = 0,
              labels_per_concept: int = 3, prior_floor: float = 0.1, concept_shift: float = 1.0,
              class_sep: float = 1.0, noise: float = 1.0, label_noise: float = 0.0, seed: int = 0,
              split_extra_labels: bool = False) -> SyntheticTask:
    """Random task with ``num_concepts`` initial and ``extra_concepts`` later concepts.

    Concept ``c`` puts ``1 - prior_floor`` of its label mass uniformly on
    ``labels_per_concept`` labels. Its class means are a shared class layout
    plus a concept-specific offset of scale ``concept_shift``, so a single
    linear model cannot fit every concept at once. With ``split_extra_labels``
    initial concepts draw their labels from the lower half of the label space
    and extra concepts from the upper half.
    """
    if num_labels < 1:
        raise ValueError("num_labels must be >= 1")
    rng = rngs.stream(seed, "task")
    total = num_concepts + extra_concepts
    m = min(labels_per_concept, num_labels)
    priors = np.full((total, num_labels), prior_floor / num_labels)
    half = (num_labels + 1) // 2
    for c in range(total):
        if split_extra_labels and num_labels >= 2:
            pool = np.arange(half) if c < num_concepts else np.arange(half, num_labels)
            chosen = rng.choice(pool, size=min(m, pool.size), replace=False)
        else:
            chosen = rng.choice(num_labels, size=m, replace=False)
        m_c = chosen.size
        priors[c, chosen] += (1.0 - prior_floor) / m_c
    priors /= priors.sum(axis=1, keepdims=True)
    shared = rng.normal(0.0, class_sep, size=(num_labels, input_dim))
    offsets = rng.normal(0.0, 1.0, size=(total, num_labels, input_dim))
    means = shared[None] + concept_shift * offsets
    return SyntheticTask(num_labels, input_dim, priors, means, shared, noise, label_noise, num_concepts)


@dataclass
class ClientData:
    client_id: int
    X: np.ndarray
    y: np.ndarray
    concept: np.ndarray  # generating concept per sample; -1 for shared samples
    segment: np.ndarray  # time segment per sample; -1 for shared samples
    test_mask: np.ndarray

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


@dataclass(frozen=True)
class ConceptSwitch:
    """At ``at_segment`` a ``fraction`` of clients switch concept.

    ``target`` is ``"rotate"`` (c -> c+1 among the initial concepts) or
    ``"new"`` (uniformly among the extra concepts).
    """

    at_segment: int
    fraction: float = 1.0
    target: str = "new"


@dataclass
class Population:
    clients: List[ClientData]
    concept_labels: np.ndarray  # initial concept of each client (ground truth)
    schedule: np.ndarray  # (clients, segments) concept per segment
    client_priors: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.clients)

    def by_id(self) -> Dict[int, ClientData]:
        return {c.client_id: c for c in self.clients}


def stratified_counts(n: int, probs: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding of ``n * probs`` to integers summing to n."""
    raw = n * probs
    counts = np.floor(raw).astype(np.int64)
    remainder = n - counts.sum()
    if remainder > 0:
        order = np.lexsort((np.arange(len(probs)), -(raw - counts)))
        counts[order[:remainder]] += 1
    return counts


def _client_prior(task: SyntheticTask, concept: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    base = task.label_priors[concept]
    if math.isinf(alpha):
        return base.copy()
    return rng.dirichlet(np.maximum(alpha * task.num_labels * base, 1e-6))


def generate_population(task: SyntheticTask, num_clients: int, samples_per_client: int, dirichlet_alpha: float,
                        seed: int, num_segments: int = 1, switches: Sequence[ConceptSwitch] = (),
                        test_fraction: float = 0.2) -> Population:
    """Clients drawn from the initial concepts, round-robin so every concept
    is used; ``switches`` script concept changes between segments."""
    K = task.num_initial_concepts
    if num_clients < K:
        raise ValueError(f"need at least {K} clients for {K} concepts")
    rng = rngs.stream(seed, "population")
    concepts = np.arange(num_clients) % K
    rng.shuffle(concepts)
    schedule = np.repeat(concepts[:, None], num_segments, axis=1)
    for sw in switches:
        srng = rngs.stream(seed, "switch", sw.at_segment)
        chosen = srng.permutation(num_clients)[:int(round(sw.fraction * num_clients))]
        for c in sorted(chosen.tolist()):
            cur = schedule[c, sw.at_segment]
            if sw.target == "rotate":
                new = (cur + 1) % K if cur < K else int(srng.integers(K))
            elif sw.target == "new":
                if task.num_concepts <= K:
                    raise ValueError("switch target 'new' needs extra concepts in the task")
                new = int(srng.integers(K, task.num_concepts))
            else:
                raise ValueError(f"unknown switch target {sw.target!r}")
            schedule[c, sw.at_segment:] = new
    seg_sizes = stratified_counts(samples_per_client, np.full(num_segments, 1.0 / num_segments))
    stride = max(1, int(round(1.0 / test_fraction))) if test_fraction > 0 else 0
    priors: Dict[Tuple[int, int], np.ndarray] = {}
    clients = []
    for cid in range(num_clients):
        crng = rngs.stream(seed, "client", cid)
        Xs, ys, cs, ss, ts = [], [], [], [], []
        for s in range(num_segments):
            concept = int(schedule[cid, s])
            if (cid, concept) not in priors:
                priors[(cid, concept)] = _client_prior(task, concept, dirichlet_alpha,
                                                       rngs.stream(seed, "prior", cid, concept))
            counts = stratified_counts(int(seg_sizes[s]), priors[(cid, concept)])
            y = np.repeat(np.arange(task.num_labels), counts)
            crng.shuffle(y)
            X = task.means[concept, y] + task.noise * crng.normal(size=(len(y), task.input_dim))
            if task.label_noise > 0:
                flip = crng.random(len(y)) < task.label_noise
                y = np.where(flip, crng.integers(0, task.num_labels, size=len(y)), y)
            test = np.zeros(len(y), dtype=bool)
            if stride:
                test[stride - 1::stride] = True
            Xs.append(X); ys.append(y); cs.append(np.full(len(y), concept)); ss.append(np.full(len(y), s)); ts.append(test)
        clients.append(ClientData(cid, np.vstack(Xs), np.concatenate(ys).astype(np.int64),
                                  np.concatenate(cs), np.concatenate(ss), np.concatenate(ts)))
    return Population(clients, concepts.copy(), schedule, priors)


@dataclass(frozen=True)
class TraceEvent:
    round: int
    client_id: int
    kind: str
    payload: dict

    def to_json(self) -> dict:
        return {"round": self.round, "client_id": self.client_id, "kind": self.kind, "payload": self.payload}


@dataclass
class DriftTrace:
    events: List[TraceEvent]
    retention_rounds: int = 100
    warmup_rounds_of_data: int = 100

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: (e.round, e.client_id, EVENT_KINDS.index(e.kind)))

    def extend(self, more: Iterable[TraceEvent]) -> "DriftTrace":
        return DriftTrace(self.events + list(more), self.retention_rounds, self.warmup_rounds_of_data)

    def for_client(self, client_id: int) -> List[TraceEvent]:
        return [e for e in self.events if e.client_id == client_id]

    def write_jsonl(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"retention_rounds": self.retention_rounds,
                                 "warmup_rounds_of_data": self.warmup_rounds_of_data, "kind": "header"}) + "\n")
            for e in self.events:
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path: Union[str, Path]) -> "DriftTrace":
        events, meta = [], {}
        with open(path) as fh:
            for line in fh:
                d = json.loads(line)
                if d.get("kind") == "header":
                    meta = d
                    continue
                events.append(TraceEvent(int(d["round"]), int(d["client_id"]), d["kind"], d["payload"]))
        return cls(events, meta.get("retention_rounds", 100), meta.get("warmup_rounds_of_data", 100))


def _arrival_events(client_id: int, buckets: List[np.ndarray], rounds_between: int, retention: int,
                    retire: bool) -> List[TraceEvent]:
    out = []
    for b, idx in enumerate(buckets):
        if idx.size == 0:
            continue
        samples = sorted(int(i) for i in idx)
        out.append(TraceEvent(b * rounds_between, client_id, ARRIVE, {"bucket": b, "samples": samples}))
        if retire:
            out.append(TraceEvent(b * rounds_between + retention, client_id, RETIRE, {"bucket": b, "samples": samples}))
    return out


def build_interval_trace(clients: Sequence[ClientData], num_intervals: int = 10, rounds_between: int = 30,
                         seed: int = 0, retention_rounds: int = 100, warmup_rounds_of_data: int = 100) -> DriftTrace:
    """Split each client's time-ordered samples into ``num_intervals``
    contiguous buckets; bucket ``b`` arrives at round ``b * rounds_between``
    and retires ``retention_rounds`` later. One interval means static data."""
    events = []
    for cd in clients:
        order = np.flatnonzero(cd.segment >= 0)
        buckets = np.array_split(order, num_intervals)
        events += _arrival_events(cd.client_id, buckets, rounds_between, retention_rounds, num_intervals > 1)
    return DriftTrace(events, retention_rounds, warmup_rounds_of_data)


def build_label_bucket_trace(clients: Sequence[ClientData], num_buckets: int = 10, rounds_between: int = 50,
                             seed: int = 0, retention_rounds: int = 100,
                             warmup_rounds_of_data: int = 100) -> DriftTrace:
    """Partition each client's labels (not samples) into buckets; a bucket's
    arrival brings every sample of its labels."""
    events = []
    for cd in clients:
        rng = rngs.stream(seed, "label-buckets", cd.client_id)
        own = np.flatnonzero(cd.segment >= 0)
        labels = np.unique(cd.y[own])
        rng.shuffle(labels)
        groups = np.array_split(labels, num_buckets)
        buckets = [own[np.isin(cd.y[own], g)] for g in groups]
        events += _arrival_events(cd.client_id, buckets, rounds_between, retention_rounds, num_buckets > 1)
    return DriftTrace(events, retention_rounds, warmup_rounds_of_data)


def build_concept_drift_events(clients: Sequence[ClientData], fraction: float = 0.5, at_rounds: Sequence[int] = (),
                               seed: int = 0, num_labels: Optional[int] = None) -> List[TraceEvent]:
    """Each chosen client swaps all samples of two distinct labels."""
    events = []
    ids = sorted(cd.client_id for cd in clients)
    by_id = {cd.client_id: cd for cd in clients}
    for r in at_rounds:
        rng = rngs.stream(seed, "concept-drift", r)
        chosen = rng.permutation(len(ids))[:int(round(fraction * len(ids)))]
        for i in sorted(chosen.tolist()):
            cid = ids[i]
            present = np.unique(by_id[cid].y)
            pool = present if present.size >= 2 else np.arange(num_labels or int(by_id[cid].y.max()) + 2)
            a, b = rng.choice(pool, size=2, replace=False)
            events.append(TraceEvent(int(r), cid, SWAP, {"a": int(a), "b": int(b)}))
    return events


def apply_malicious(clients: Sequence[ClientData], fraction: float, seed: int, num_labels: int) -> List[TraceEvent]:
    """Chosen clients report a fixed non-identity permutation of their
    label histogram from registration onwards."""
    if fraction <= 0 or num_labels < 2:
        return []
    rng = rngs.stream(seed, "malicious")
    ids = sorted(cd.client_id for cd in clients)
    chosen = sorted(rng.permutation(len(ids))[:int(round(fraction * len(ids)))].tolist())
    events = []
    identity = np.arange(num_labels)
    for i in chosen:
        perm = rng.permutation(num_labels)
        while np.array_equal(perm, identity):
            perm = rng.permutation(num_labels)
        events.append(TraceEvent(0, ids[i], PERMUTE, {"permutation": perm.tolist()}))
    return events


SHARED_LEVELS = ("half", "one", "two")


def inject_shared_dataset(population: Population, level: str, task: SyntheticTask, seed: int = 0) -> Population:
    """Append one common set of concept-free samples to every client.

    ``half``: one sample for each of the least represented 50% of labels
    (population-wide counts); ``one``: one per label; ``two``: two per label.
    Shared samples are always held and never used for testing.
    """
    level = level.lower()
    if task.num_labels < 1:
        raise ValueError("empty label space")
    if level not in SHARED_LEVELS:
        raise ValueError(f"unknown shared level {level!r}")
    if level == "half":
        totals = np.zeros(task.num_labels, dtype=np.int64)
        for cd in population.clients:
            totals += np.bincount(cd.y, minlength=task.num_labels)
        order = np.lexsort((np.arange(task.num_labels), totals))
        labels = np.sort(order[:max(1, task.num_labels // 2)])
    else:
        labels = np.repeat(np.arange(task.num_labels), 1 if level == "one" else 2)
    rng = rngs.stream(seed, "shared", SHARED_LEVELS.index(level))
    Xs = task.shared_means[labels] + task.noise * rng.normal(size=(len(labels), task.input_dim))
    out = []
    for cd in population.clients:
        k = len(labels)
        out.append(ClientData(cd.client_id, np.vstack([cd.X, Xs]), np.concatenate([cd.y, labels]).astype(np.int64),
                              np.concatenate([cd.concept, np.full(k, -1)]),
                              np.concatenate([cd.segment, np.full(k, -1)]),
                              np.concatenate([cd.test_mask, np.zeros(k, dtype=bool)])))
    return Population(out, population.concept_labels, population.schedule, population.client_priors)


@dataclass
class ClientSnapshot:
    client_id: int
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    y_all: np.ndarray
    X_all: np.ndarray
    report_permutation: Optional[np.ndarray] = None

    @property
    def num_samples(self) -> int:
        return int(self.y_all.shape[0])


class TraceReplay:
    """Replays a trace against a population, round by round."""

    def __init__(self, population: Population, trace: DriftTrace):
        self.population = population
        self.trace = trace
        self.clients = population.by_id()
        W = trace.retention_rounds
        self._arrive: Dict[int, np.ndarray] = {}
        self._retire: Dict[int, np.ndarray] = {}
        self._swaps: Dict[int, List[Tuple[int, int, int]]] = {}
        self._perm: Dict[int, Tuple[int, np.ndarray]] = {}
        for cid, cd in self.clients.items():
            arrive = np.full(cd.n, np.iinfo(np.int64).max, dtype=np.int64)
            arrive[cd.segment < 0] = 0
            self._arrive[cid] = arrive
            self._retire[cid] = np.full(cd.n, np.iinfo(np.int64).max, dtype=np.int64)
        for e in trace.events:
            if e.kind == ARRIVE:
                idx = np.asarray(e.payload["samples"], dtype=np.int64)
                eff = 0 if e.round < trace.warmup_rounds_of_data else e.round
                self._arrive[e.client_id][idx] = eff
            elif e.kind == RETIRE:
                self._retire[e.client_id][np.asarray(e.payload["samples"], dtype=np.int64)] = e.round
            elif e.kind == SWAP:
                self._swaps.setdefault(e.client_id, []).append((e.round, e.payload["a"], e.payload["b"]))
            elif e.kind == PERMUTE:
                self._perm[e.client_id] = (e.round, np.asarray(e.payload["permutation"], dtype=np.int64))

    def active_mask(self, client_id: int, round_index: int) -> np.ndarray:
        return (self._arrive[client_id] <= round_index) & (round_index < self._retire[client_id])

    def label_map(self, client_id: int, round_index: int, num_labels: int) -> np.ndarray:
        mapping = np.arange(num_labels)
        for r, a, b in self._swaps.get(client_id, []):
            if r <= round_index:
                ia, ib = mapping == a, mapping == b
                mapping[ia], mapping[ib] = b, a
        return mapping

    def snapshot(self, client_id: int, round_index: int, num_labels: int) -> ClientSnapshot:
        cd = self.clients[client_id]
        active = self.active_mask(client_id, round_index)
        y = self.label_map(client_id, round_index, num_labels)[cd.y]
        train = active & ~cd.test_mask
        test = active & cd.test_mask
        perm = None
        if client_id in self._perm and self._perm[client_id][0] <= round_index:
            perm = self._perm[client_id][1]
        return ClientSnapshot(client_id, cd.X[train], y[train], cd.X[test], y[test], y[active], cd.X[active], perm)

    def snapshots(self, round_index: int, num_labels: int) -> Dict[int, ClientSnapshot]:
        return {cid: self.snapshot(cid, round_index, num_labels) for cid in sorted(self.clients)}


# --- device time model -------------------------------------------------------

@dataclass
class DeviceTimeModel:
    speed: Dict[int, float]
    bw_up: Dict[int, float]
    bw_down: Dict[int, float]
    model_bytes: float
    round_deadline: Optional[float] = None

    def __post_init__(self):
        for name in ("speed", "bw_up", "bw_down"):
            if any(v <= 0 for v in getattr(self, name).values()):
                raise ValueError(f"{name} rates must be positive")

    def client_time(self, client_id: int, work_samples: int) -> float:
        return (self.model_bytes / self.bw_down[client_id] + work_samples / self.speed[client_id]
                + self.model_bytes / self.bw_up[client_id])


BANDWIDTH_CHOICES = (2.5e5, 1e6, 4e6)


def sample_device_profiles(client_ids: Sequence[int], seed: int, speed_median: float = 200.0,
                           speed_sigma: float = 0.5, bandwidths: Sequence[float] = BANDWIDTH_CHOICES,
                           model_bytes: float = 8.0 * 330, round_deadline: Optional[float] = None) -> DeviceTimeModel:
    """Lognormal compute speeds and a small discrete set of link speeds."""
    rng = rngs.stream(seed, "devices")
    ids = sorted(client_ids)
    speeds = speed_median * np.exp(speed_sigma * rng.normal(size=len(ids)))
    up = rng.choice(np.asarray(bandwidths), size=len(ids))
    down = rng.choice(np.asarray(bandwidths), size=len(ids)) * 2.0
    return DeviceTimeModel(dict(zip(ids, speeds.tolist())), dict(zip(ids, up.tolist())),
                           dict(zip(ids, down.tolist())), model_bytes, round_deadline)


def save_device_profiles(path: Union[str, Path], tm: DeviceTimeModel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client_id", "speed", "bw_up", "bw_down"])
        for c in sorted(tm.speed):
            w.writerow([c, repr(tm.speed[c]), repr(tm.bw_up[c]), repr(tm.bw_down[c])])


def load_device_profiles(path: Union[str, Path], model_bytes: float,
                         round_deadline: Optional[float] = None) -> DeviceTimeModel:
    speed, up, down = {}, {}, {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            c = int(row["client_id"])
            speed[c], up[c], down[c] = float(row["speed"]), float(row["bw_up"]), float(row["bw_down"])
    return DeviceTimeModel(speed, up, down, model_bytes, round_deadline)


@dataclass
class RoundTiming:
    round_time: float
    per_client: Dict[int, float]
    dropped: set


def simulate_round_time(selected: Sequence[int], config, time_model: DeviceTimeModel) -> RoundTiming:
    """Download + compute + upload per client; the round lasts as long as the
    slowest client, capped at the deadline, and clients past the deadline
    are dropped."""
    work = config.local_steps * config.batch_size
    per = {c: time_model.client_time(c, work) for c in selected}
    if not per:
        return RoundTiming(0.0, {}, set())
    slowest = max(per.values())
    deadline = time_model.round_deadline
    if deadline is not None and slowest > deadline:
        dropped = {c for c, t in per.items() if t > deadline}
        if dropped:
            logger.debug("dropping %d stragglers past %.3fs", len(dropped), deadline)
        return RoundTiming(float(deadline), per, dropped)
    return RoundTiming(float(slowest), per, set())


def time_to_accuracy(records, target_accuracy: float) -> Optional[float]:
    """Earliest simulated time after which accuracy never falls below target.

    ``records`` is a sequence of ``(time, accuracy)`` pairs or of objects with
    ``sim_time_s`` and ``mean_accuracy``.
    """
    pairs = [(r.sim_time_s, r.mean_accuracy) if hasattr(r, "sim_time_s") else (r[0], r[1]) for r in records]
    if not pairs:
        return None
    below = [i for i, (_, acc) in enumerate(pairs) if acc < target_accuracy]
    if not below:
        return float(pairs[0][0])
    last = below[-1]
    if last == len(pairs) - 1:
        return None
    return float(pairs[last + 1][0])
