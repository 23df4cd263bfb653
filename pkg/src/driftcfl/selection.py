"""Client selection inside a cluster."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .representations import Metric, pairwise_distances

logger = logging.getLogger(__name__)


@dataclass
class ClientProfile:
    client_id: int
    data_size: int
    last_loss: float = 1.0
    device_speed: float = 100.0  # samples / second
    bandwidth: float = 1e6  # bytes / second
    last_selected_round: int = -1

    def to_json(self) -> dict:
        return dict(self.__dict__)


def select_random(members: Sequence[int], n: int, rng: np.random.Generator,
                  with_replacement: bool = False) -> List[int]:
    members = sorted(members)
    if n <= 0 or not members:
        return []
    if with_replacement:
        return [members[i] for i in rng.integers(0, len(members), size=n)]
    if n >= len(members):
        return list(members)
    idx = rng.choice(len(members), size=n, replace=False)
    return [members[i] for i in idx]


def expected_round_time(profile: ClientProfile, work_samples: int, model_bytes: float) -> float:
    return 2.0 * model_bytes / profile.bandwidth + work_samples / profile.device_speed


def utility_scores(profiles: Sequence[ClientProfile], work_samples: int, model_bytes: float,
                   deadline: Optional[float] = None, penalty_exponent: float = 2.0) -> np.ndarray:
    times = np.array([expected_round_time(p, work_samples, model_bytes) for p in profiles])
    if deadline is None:
        deadline = float(np.percentile(times, 80)) if len(times) else 0.0
    stat = np.array([np.sqrt(max(p.data_size, 0)) * p.last_loss for p in profiles])
    penalty = np.where(times > deadline, (deadline / np.maximum(times, 1e-12)) ** penalty_exponent, 1.0)
    return stat * penalty


def select_utility(members: Sequence[int], profiles: Mapping[int, ClientProfile], n: int,
                   round_index: int, explore_fraction: float, rng: np.random.Generator,
                   work_samples: int = 400, model_bytes: float = 8.0 * 330,
                   deadline: Optional[float] = None) -> List[int]:
    """Skeletal Oort-style selection.

    Statistical utility is ``sqrt(data_size) * last_loss``; clients whose
    expected round time exceeds the deadline (default: 80th percentile of the
    members) are down-weighted by ``(deadline / time) ** 2``. The top
    ``n - round(explore_fraction * n)`` clients by score are exploited, with
    random tie-breaking, and the rest are drawn uniformly from clients that
    were never selected, falling back to the least recently selected. This is
    a simplification of Oort, not a reproduction of its scoring internals.
    """
    members = sorted(members)
    n = min(n, len(members))
    if n <= 0:
        return []
    profs = [profiles[c] for c in members]
    scores = utility_scores(profs, work_samples, model_bytes, deadline)
    n_explore = int(round(explore_fraction * n))
    n_exploit = n - n_explore
    tiebreak = rng.random(len(members))
    order = np.lexsort((tiebreak, -scores))
    chosen = [members[i] for i in order[:n_exploit]]
    if n_explore:
        taken = set(chosen)
        rest = [c for c in members if c not in taken]
        last = np.array([profiles[c].last_selected_round for c in rest])
        threshold = np.sort(last)[n_explore - 1]
        pool = [c for c, l in zip(rest, last) if l <= threshold]
        pick = rng.choice(len(pool), size=n_explore, replace=False)
        chosen.extend(pool[i] for i in sorted(pick))
    return chosen


def select_distance(members: Sequence[int], center: np.ndarray, reps: Mapping[int, np.ndarray],
                    metric=Metric.L1, n: int = 1) -> List[int]:
    """The ``n`` members closest to ``center``; ties go to the lower client id."""
    members = sorted(members)
    if n <= 0 or not members:
        return []
    X = np.vstack([reps[c] for c in members])
    d = pairwise_distances(X, np.asarray(center)[None, :], metric)[:, 0]
    order = np.lexsort((np.array(members), d))
    return [members[i] for i in order[:n]]


class Selector:
    name = "base"

    def params(self) -> dict:
        return {}

    def select(self, members: Sequence[int], n: int, rng: np.random.Generator, *, round_index: int = 0,
               profiles: Optional[Mapping[int, ClientProfile]] = None, center: Optional[np.ndarray] = None,
               reps: Optional[Mapping[int, np.ndarray]] = None) -> List[int]:
        raise NotImplementedError


class RandomSelector(Selector):
    name = "random"

    def __init__(self, with_replacement: bool = False):
        self.with_replacement = with_replacement

    def params(self) -> dict:
        return {"with_replacement": self.with_replacement}

    def select(self, members, n, rng, **_):
        return select_random(members, n, rng, self.with_replacement)


class UtilitySelector(Selector):
    name = "utility"

    def __init__(self, explore_fraction: float = 0.1, work_samples: int = 400,
                 model_bytes: float = 8.0 * 330, deadline: Optional[float] = None):
        self.explore_fraction = explore_fraction
        self.work_samples = work_samples
        self.model_bytes = model_bytes
        self.deadline = deadline

    def params(self) -> dict:
        return {"explore_fraction": self.explore_fraction, "deadline": self.deadline,
                "note": "skeletal Oort: sqrt(data_size)*loss x deadline penalty + exploration"}

    def select(self, members, n, rng, *, round_index=0, profiles=None, **_):
        return select_utility(members, profiles, n, round_index, self.explore_fraction, rng,
                              self.work_samples, self.model_bytes, self.deadline)


class DistanceSelector(Selector):
    name = "distance"

    def __init__(self, metric=Metric.L1):
        self.metric = Metric.parse(metric)

    def params(self) -> dict:
        return {"metric": self.metric.value}

    def select(self, members, n, rng, *, center=None, reps=None, **_):
        return select_distance(members, center, reps, self.metric, n)


def build_selector(name: str, **kwargs) -> Selector:
    table: Dict[str, type] = {"random": RandomSelector, "utility": UtilitySelector, "oort": UtilitySelector,
                              "distance": DistanceSelector}
    if name not in table:
        raise ValueError(f"unknown selector {name!r}")
    return table[name](**kwargs)
