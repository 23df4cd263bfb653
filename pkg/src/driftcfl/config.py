"""Experiment configuration: TOML file -> validated dataclasses.

Validation collects every offending field before raising, so a bad config
is reported in one pass.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .drift import DriftMode
from .representations import Metric
from .simulation import SHARED_LEVELS
from .training import AGGREGATIONS

REPRESENTATION_KINDS = ("histogram", "embedding", "gradient")
TRACE_KINDS = ("interval", "label_bucket", "static")
SELECTORS = ("random", "utility", "distance")


class ConfigError(ValueError):
    def __init__(self, problems: List[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class TaskSection:
    num_labels: int = 10
    input_dim: int = 32
    num_concepts: int = 4
    extra_concepts: int = 0
    labels_per_concept: int = 3
    prior_floor: float = 0.1
    concept_shift: float = 1.0
    class_sep: float = 1.0
    noise: float = 1.0
    label_noise: float = 0.0
    model: str = "softmax"
    hidden: int = 32
    split_extra_labels: bool = False


@dataclass
class SwitchSection:
    at_segment: int = 1
    fraction: float = 1.0
    target: str = "new"


@dataclass
class PopulationSection:
    num_clients: int = 200
    samples_per_client: int = 100
    dirichlet_alpha: float = 0.5
    num_segments: int = 10
    test_fraction: float = 0.2
    switches: List[SwitchSection] = field(default_factory=list)
    shared_level: str = "none"
    malicious_fraction: float = 0.0


@dataclass
class TraceSection:
    kind: str = "interval"
    num_intervals: int = 10
    rounds_between: int = 30
    retention_rounds: int = 100
    warmup_rounds_of_data: int = 100
    concept_swap_fraction: float = 0.0
    concept_swap_rounds: List[int] = field(default_factory=list)


@dataclass
class PolicySection:
    mode: str = "hybrid"
    tau_fraction: float = 1.0 / 3.0
    pairwise_variant: bool = False
    pairwise_delta: float = 0.1
    pairwise_c: float = 0.1
    epsilon: float = 1e-6
    initial_clustering: bool = True
    k_min: int = 0
    k_max: int = 0


@dataclass
class AggregationSection:
    method: str = "fedprox"
    mu_prox: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    eta_server: float = 0.01
    tau_adapt: float = 1e-3
    q: float = 1.0


@dataclass
class TrainingSection:
    eta: float = 0.05
    local_steps: int = 20
    participants_per_round: int = 20
    rounds_per_event: int = 30
    total_events: int = 10
    batch_size: int = 20
    sampling_with_replacement: bool = False
    aggregation: AggregationSection = field(default_factory=AggregationSection)


@dataclass
class SelectionSection:
    name: str = "random"
    explore_fraction: float = 0.1
    deadline: Optional[float] = None


@dataclass
class RepresentationSection:
    kind: str = "histogram"
    metric: str = "l1"
    embed_dim: int = 16
    sketch_dim: int = 512
    max_full_dim: int = 4096


@dataclass
class TimeModelSection:
    speed_median: float = 200.0
    speed_sigma: float = 0.5
    bandwidths: List[float] = field(default_factory=lambda: [2.5e5, 1e6, 4e6])
    round_deadline: Optional[float] = None
    profile_file: Optional[str] = None


@dataclass
class RunSection:
    name: str = "run"
    seed: int = 0
    output_dir: str = ""
    checkpoint_every: int = 0
    accuracy_targets: List[float] = field(default_factory=lambda: [0.5, 0.6, 0.7])
    final_window: int = 10


@dataclass
class ExperimentConfig:
    task: TaskSection = field(default_factory=TaskSection)
    population: PopulationSection = field(default_factory=PopulationSection)
    trace: TraceSection = field(default_factory=TraceSection)
    policy: PolicySection = field(default_factory=PolicySection)
    training: TrainingSection = field(default_factory=TrainingSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    representation: RepresentationSection = field(default_factory=RepresentationSection)
    time_model: TimeModelSection = field(default_factory=TimeModelSection)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Hash of everything that affects results (output location excluded)."""
        d = self.to_dict()
        d["run"] = {k: v for k, v in d["run"].items() if k not in ("output_dir", "name")}
        blob = json.dumps(d, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **sections) -> "ExperimentConfig":
        return dataclasses.replace(self, **sections)

    def with_override(self, dotted: str, value: Any) -> "ExperimentConfig":
        """Copy with one ``section.field`` (or ``training.aggregation.field``) changed."""
        d = self.to_dict()
        node = d
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError([f"{dotted}: unknown field"])
        node[parts[-1]] = value
        return from_dict(d)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _coerce(cls, data: dict, path: str, problems: List[str]):
    if not isinstance(data, dict):
        problems.append(f"{path}: expected a table")
        return cls()
    hints = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in hints:
            problems.append(f"{where}: unknown field")
            continue
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _coerce(type(default), value, where, problems)
        elif key == "switches":
            if not isinstance(value, list):
                problems.append(f"{where}: expected an array of tables")
                continue
            kwargs[key] = [_coerce(SwitchSection, v, f"{where}[{i}]", problems) for i, v in enumerate(value)]
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                problems.append(f"{where}: expected boolean, got {value!r}")
                continue
            kwargs[key] = value
        elif _is_int(default):
            if not _is_int(value):
                problems.append(f"{where}: expected integer, got {value!r}")
                continue
            kwargs[key] = value
        elif isinstance(default, float) or (default is None and key in ("deadline", "round_deadline")):
            if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
                problems.append(f"{where}: expected number, got {value!r}")
                continue
            kwargs[key] = None if value is None else float(value)
        elif isinstance(default, list):
            if not isinstance(value, list):
                problems.append(f"{where}: expected array, got {value!r}")
                continue
            kwargs[key] = list(value)
        else:
            if value is not None and not isinstance(value, str):
                problems.append(f"{where}: expected string, got {value!r}")
                continue
            kwargs[key] = value
    return cls(**kwargs)


def _check(cfg: ExperimentConfig, problems: List[str]) -> None:
    def need(cond: bool, msg: str):
        if not cond:
            problems.append(msg)

    t, p, tr, po, tn, se, rp, tm, rn = (cfg.task, cfg.population, cfg.trace, cfg.policy, cfg.training,
                                        cfg.selection, cfg.representation, cfg.time_model, cfg.run)
    need(t.num_labels >= 1, "task.num_labels: must be >= 1")
    need(t.input_dim >= 1, "task.input_dim: must be >= 1")
    need(t.num_concepts >= 1, "task.num_concepts: must be >= 1")
    need(t.extra_concepts >= 0, "task.extra_concepts: must be >= 0")
    need(t.labels_per_concept >= 1, "task.labels_per_concept: must be >= 1")
    need(0.0 <= t.prior_floor <= 1.0, "task.prior_floor: must be in [0, 1]")
    need(t.noise > 0, "task.noise: must be > 0")
    need(0.0 <= t.label_noise < 1.0, "task.label_noise: must be in [0, 1)")
    need(t.model in ("softmax", "mlp"), f"task.model: unknown model {t.model!r}")
    need(t.hidden >= 1, "task.hidden: must be >= 1")

    need(p.num_clients >= max(2, t.num_concepts), "population.num_clients: must be >= max(2, num_concepts)")
    need(p.samples_per_client >= 1, "population.samples_per_client: must be >= 1")
    need(p.dirichlet_alpha > 0, "population.dirichlet_alpha: must be > 0")
    need(p.num_segments >= 1, "population.num_segments: must be >= 1")
    need(0.0 <= p.test_fraction < 1.0, "population.test_fraction: must be in [0, 1)")
    need(p.shared_level == "none" or p.shared_level in SHARED_LEVELS,
         f"population.shared_level: must be one of none, {', '.join(SHARED_LEVELS)}")
    need(0.0 <= p.malicious_fraction <= 1.0, "population.malicious_fraction: must be in [0, 1]")
    for i, sw in enumerate(p.switches):
        need(0 <= sw.at_segment < p.num_segments, f"population.switches[{i}].at_segment: outside segment range")
        need(0.0 <= sw.fraction <= 1.0, f"population.switches[{i}].fraction: must be in [0, 1]")
        need(sw.target in ("rotate", "new"), f"population.switches[{i}].target: must be rotate or new")
        need(sw.target != "new" or t.extra_concepts > 0,
             f"population.switches[{i}].target: 'new' needs task.extra_concepts > 0")

    need(tr.kind in TRACE_KINDS, f"trace.kind: must be one of {', '.join(TRACE_KINDS)}")
    need(tr.num_intervals >= 1, "trace.num_intervals: must be >= 1")
    need(tr.rounds_between >= 1, "trace.rounds_between: must be >= 1")
    need(tr.retention_rounds >= 1, "trace.retention_rounds: must be >= 1")
    need(tr.warmup_rounds_of_data >= 0, "trace.warmup_rounds_of_data: must be >= 0")
    need(0.0 <= tr.concept_swap_fraction <= 1.0, "trace.concept_swap_fraction: must be in [0, 1]")

    modes = [m.value for m in DriftMode]
    need(po.mode in modes, f"policy.mode: must be one of {', '.join(modes)}")
    need(po.tau_fraction >= 0, "policy.tau_fraction: must be >= 0")
    need(po.pairwise_delta >= 0, "policy.pairwise_delta: must be >= 0")
    need(po.pairwise_c > 0, "policy.pairwise_c: must be > 0")
    need(po.epsilon >= 0, "policy.epsilon: must be >= 0")
    need(po.k_min == 0 or po.k_min >= 2, "policy.k_min: must be 0 (auto) or >= 2")
    need(po.k_max == 0 or po.k_max >= max(2, po.k_min), "policy.k_max: must be 0 (auto) or >= k_min")

    need(tn.eta > 0, "training.eta: must be > 0")
    need(tn.local_steps >= 1, "training.local_steps: must be >= 1")
    need(tn.participants_per_round >= 1, "training.participants_per_round: must be >= 1")
    need(tn.rounds_per_event >= 0, "training.rounds_per_event: must be >= 0")
    need(tn.total_events >= 1, "training.total_events: must be >= 1")
    need(tn.batch_size >= 1, "training.batch_size: must be >= 1")
    ag = tn.aggregation
    need(ag.method in AGGREGATIONS, f"training.aggregation.method: must be one of {', '.join(AGGREGATIONS)}")
    need(ag.mu_prox >= 0, "training.aggregation.mu_prox: must be >= 0")
    need(0 <= ag.beta1 < 1 and 0 <= ag.beta2 < 1, "training.aggregation.beta1/beta2: must be in [0, 1)")
    need(ag.eta_server >= 0, "training.aggregation.eta_server: must be >= 0")
    need(ag.tau_adapt > 0, "training.aggregation.tau_adapt: must be > 0")
    need(ag.q >= 0, "training.aggregation.q: must be >= 0")

    need(se.name in SELECTORS, f"selection.name: must be one of {', '.join(SELECTORS)}")
    need(0.0 <= se.explore_fraction <= 1.0, "selection.explore_fraction: must be in [0, 1]")
    need(se.deadline is None or se.deadline > 0, "selection.deadline: must be > 0")

    need(rp.kind in REPRESENTATION_KINDS, f"representation.kind: must be one of {', '.join(REPRESENTATION_KINDS)}")
    try:
        metric = Metric.parse(rp.metric)
        need(metric is not Metric.JENSEN_SHANNON or rp.kind == "histogram",
             "representation.metric: js requires histogram representations")
    except Exception:
        problems.append(f"representation.metric: unknown metric {rp.metric!r}")
    need(rp.embed_dim >= 1 and rp.sketch_dim >= 1, "representation.embed_dim/sketch_dim: must be >= 1")

    need(tm.speed_median > 0, "time_model.speed_median: must be > 0")
    need(tm.speed_sigma >= 0, "time_model.speed_sigma: must be >= 0")
    need(bool(tm.bandwidths) and all(isinstance(b, (int, float)) and b > 0 for b in tm.bandwidths),
         "time_model.bandwidths: must be a non-empty list of positive numbers")
    need(tm.round_deadline is None or tm.round_deadline > 0, "time_model.round_deadline: must be > 0")

    need(rn.checkpoint_every >= 0, "run.checkpoint_every: must be >= 0")
    need(rn.final_window >= 1, "run.final_window: must be >= 1")
    need(all(isinstance(a, (int, float)) and 0 <= a <= 1 for a in rn.accuracy_targets),
         "run.accuracy_targets: values must be in [0, 1]")
    need(math.isfinite(tn.eta) and math.isfinite(po.tau_fraction), "training.eta/policy.tau_fraction: must be finite")


def from_dict(data: dict) -> ExperimentConfig:
    problems: List[str] = []
    cfg = _coerce(ExperimentConfig, data, "", problems)
    if not problems:
        _check(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError([f"{path}: {err}"]) from None
    except OSError as err:
        raise ConfigError([f"{path}: {err.strerror}"]) from None
    return from_dict(data)


def dump_toml(cfg: ExperimentConfig) -> str:
    """Serialize to TOML text (enough for round-tripping our own schema)."""

    def scalar(v) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            if math.isinf(v):
                return "inf" if v > 0 else "-inf"
            return repr(v)
        if isinstance(v, int):
            return str(v)
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, list):
            return "[" + ", ".join(scalar(x) for x in v) + "]"
        raise TypeError(v)

    lines: List[str] = []

    def table(name: str, d: Dict[str, Any]):
        lines.append(f"[{name}]")
        nested = []
        for k, v in d.items():
            if v is None:
                continue
            if isinstance(v, dict):
                nested.append((f"{name}.{k}", v))
            elif isinstance(v, list) and v and isinstance(v[0], dict):
                nested.append((f"{name}.{k}", v))
            else:
                lines.append(f"{k} = {scalar(v)}")
        lines.append("")
        for sub, v in nested:
            if isinstance(v, dict):
                table(sub, v)
            else:
                for item in v:
                    lines.append(f"[[{sub}]]")
                    lines.extend(f"{k} = {scalar(x)}" for k, x in item.items())
                    lines.append("")

    for section, values in cfg.to_dict().items():
        table(section, values)
    return "\n".join(lines)
