"""Single-process coordinator: trace replay, drift handling, per-cluster
training, metrics, checkpoints, ablations and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import rng as rngs
from .clustering import ClusterAssignment, mean_client_distance_arrays
from .config import ExperimentConfig, ConfigError, dump_toml, load_config
from .drift import DriftMode, DriftPolicy, apply_outcome, global_recluster, handle_drift_event, \
    update_adaptive_delta
from .models import ModelParams, build_model, evaluate, load_params, save_params
from .representations import (FrozenExtractor, JLProjection, Metric, compute_embedding, compute_gradient_sketch,
                              compute_label_histogram, distance)
from .selection import ClientProfile, build_selector
from .simulation import (ClientSnapshot, ConceptSwitch, DriftTrace, TraceReplay, apply_malicious,
                         build_concept_drift_events, build_interval_trace, build_label_bucket_trace,
                         generate_population, inject_shared_dataset, load_device_profiles, make_task,
                         sample_device_profiles, time_to_accuracy, ARRIVE, RETIRE, SWAP, PERMUTE)
from .training import AggregationConfig, ClusterState, TrainingConfig, run_round

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "DRIFTCFL_OUTPUT_ROOT"
ROUND_FIELDS = ["round", "event_index", "sim_time_s", "per_cluster_accuracy", "mean_accuracy",
                "mean_client_distance", "global_client_distance", "K", "recluster_triggered", "moved_count",
                "dropped_stragglers", "config_hash"]
ABLATION_AXES = {
    "tau_grid": ("policy.tau_fraction", [0.0, 1.0 / 6.0, 1.0 / 3.0, 0.5, 2.0 / 3.0]),
    "policy_modes": ("policy.mode", [m.value for m in DriftMode]),
    "representation": ("representation.kind", ["histogram", "embedding", "gradient"]),
    "metric": ("representation.metric", ["l1", "js", "sqeuclidean"]),
    "malicious_fraction": ("population.malicious_fraction", [0.0, 0.1, 0.2, 0.3]),
    "shared_level": ("population.shared_level", ["none", "half", "one", "two"]),
}


class ResumeError(RuntimeError):
    pass


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def resolve_output_dir(cfg: ExperimentConfig) -> Path:
    if cfg.run.output_dir:
        return Path(cfg.run.output_dir)
    return output_root() / cfg.run.name


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunResult:
    out_dir: Optional[Path]
    rows: List[dict]
    events: List[dict]
    summary: dict
    state: Optional[ClusterState] = None


def build_training_config(cfg: ExperimentConfig) -> TrainingConfig:
    t = cfg.training
    ag = AggregationConfig(**vars(t.aggregation))
    return TrainingConfig(eta=t.eta, local_steps=t.local_steps, participants_per_round=t.participants_per_round,
                          rounds_per_event=t.rounds_per_event, total_events=t.total_events, batch_size=t.batch_size,
                          aggregation=ag, sampling_with_replacement=t.sampling_with_replacement)


def build_policy(cfg: ExperimentConfig) -> DriftPolicy:
    p = cfg.policy
    return DriftPolicy(mode=DriftMode(p.mode), tau_fraction=p.tau_fraction, pairwise_variant=p.pairwise_variant,
                       pairwise_delta=p.pairwise_delta, pairwise_c=p.pairwise_c, epsilon=p.epsilon)


def build_world(cfg: ExperimentConfig):
    """Task, population and trace for a config (deterministic in the seed)."""
    seed = cfg.run.seed
    t, p, tr = cfg.task, cfg.population, cfg.trace
    task = make_task(t.num_labels, t.input_dim, t.num_concepts, t.extra_concepts, t.labels_per_concept,
                     t.prior_floor, t.concept_shift, t.class_sep, t.noise, t.label_noise, seed,
                     t.split_extra_labels)
    switches = [ConceptSwitch(s.at_segment, s.fraction, s.target) for s in p.switches]
    pop = generate_population(task, p.num_clients, p.samples_per_client, p.dirichlet_alpha, seed,
                              p.num_segments, switches, p.test_fraction)
    if p.shared_level != "none":
        pop = inject_shared_dataset(pop, p.shared_level, task, seed)
    if tr.kind == "interval":
        trace = build_interval_trace(pop.clients, tr.num_intervals, tr.rounds_between, seed, tr.retention_rounds,
                                     tr.warmup_rounds_of_data)
    elif tr.kind == "label_bucket":
        trace = build_label_bucket_trace(pop.clients, tr.num_intervals, tr.rounds_between, seed,
                                         tr.retention_rounds, tr.warmup_rounds_of_data)
    else:
        trace = build_interval_trace(pop.clients, 1, tr.rounds_between, seed, tr.retention_rounds,
                                     tr.warmup_rounds_of_data)
    extra = build_concept_drift_events(pop.clients, tr.concept_swap_fraction, tr.concept_swap_rounds, seed,
                                       t.num_labels) if tr.concept_swap_fraction > 0 else []
    extra += apply_malicious(pop.clients, p.malicious_fraction, seed, t.num_labels)
    if extra:
        trace = trace.extend(extra)
    return task, pop, trace


class Experiment:
    """One configured run. ``step`` semantics: round ``r`` first handles the
    drift event if ``r`` starts an event, then trains every cluster once and
    records metrics."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None):
        self.cfg = cfg
        self.hash = cfg.config_hash()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.seed = cfg.run.seed
        self.metric = Metric.parse(cfg.representation.metric)
        self.tcfg = build_training_config(cfg)
        self.policy = build_policy(cfg)
        self.task, self.population, self.trace = build_world(cfg)
        self.replay = TraceReplay(self.population, self.trace)
        self.model = build_model(cfg.task.model, cfg.task.input_dim, cfg.task.num_labels, cfg.task.hidden)
        self.model_kind = cfg.task.model
        self.ids = sorted(c.client_id for c in self.population.clients)
        sel_kw = {}
        if cfg.selection.name == "utility":
            sel_kw = {"explore_fraction": cfg.selection.explore_fraction, "deadline": cfg.selection.deadline,
                      "work_samples": self.tcfg.local_steps * self.tcfg.batch_size}
        elif cfg.selection.name == "distance":
            sel_kw = {"metric": self.metric}
        self.selector = build_selector(cfg.selection.name, **sel_kw)
        if cfg.selection.name == "random":
            self.selector.with_replacement = self.tcfg.sampling_with_replacement
        x0 = self.model.init_params(rngs.stream(self.seed, "init"))
        self.x0 = ModelParams(x0, (0, 0))
        model_bytes = 8.0 * x0.size
        tm = cfg.time_model
        if tm.profile_file:
            self.time_model = load_device_profiles(tm.profile_file, model_bytes, tm.round_deadline)
        else:
            self.time_model = sample_device_profiles(self.ids, self.seed, tm.speed_median, tm.speed_sigma,
                                                     tm.bandwidths, model_bytes, tm.round_deadline)
        if hasattr(self.selector, "model_bytes"):
            self.selector.model_bytes = model_bytes
        self.extractor = None
        self.projection = None
        if cfg.representation.kind == "embedding":
            self.extractor = FrozenExtractor(cfg.task.input_dim, cfg.representation.embed_dim,
                                             seed=rngs.substream_seed(self.seed, "extractor"))
        elif cfg.representation.kind == "gradient" and x0.size > cfg.representation.max_full_dim:
            self.projection = JLProjection(x0.size, cfg.representation.sketch_dim,
                                           rngs.substream_seed(self.seed, "projection"))
        self._change_rounds = sorted({0} | {self._effective(e) for e in self.trace.events})
        self._snap_key = None
        self._snaps: Dict[int, ClientSnapshot] = {}
        self._het_key = None
        self._het = (0.0, 0.0)

        self.state: Optional[ClusterState] = None
        self.profiles: Dict[int, ClientProfile] = {}
        self.known_reps: Dict[int, np.ndarray] = {}
        self.trigger_history: List[bool] = []
        self.pairwise_delta = self.policy.pairwise_delta
        self.selected_last_round: List[int] = []
        self.assignment_version = 0
        self.overhead = {"reassign_s": [], "recluster_s": [], "initial_clustering_s": 0.0}
        self.rows: List[dict] = []
        self.events: List[dict] = []
        self._pending = {"triggered": 0, "moved": 0}
        self._events_flushed = 0

    # --- data & representations -------------------------------------------

    def _effective(self, e) -> int:
        if e.kind == ARRIVE and e.round < self.trace.warmup_rounds_of_data:
            return 0
        return int(e.round)

    def snapshots(self, r: int) -> Dict[int, ClientSnapshot]:
        idx = int(np.searchsorted(self._change_rounds, r, side="right")) - 1
        if idx != self._snap_key:
            self._snaps = self.replay.snapshots(r, self.cfg.task.num_labels)
            self._snap_key = idx
            for cid, snap in self._snaps.items():
                if cid in self.profiles:
                    self.profiles[cid].data_size = int(len(snap.y_train))
        return self._snaps

    def representation(self, snap: ClientSnapshot) -> np.ndarray:
        kind = self.cfg.representation.kind
        if kind == "histogram":
            h = compute_label_histogram(snap.y_all, self.cfg.task.num_labels).probs
            if snap.report_permutation is not None:
                h = h[snap.report_permutation]
            return h
        if kind == "embedding":
            return compute_embedding(snap.X_all, self.extractor).values
        loss_grad = lambda p: self.model.loss_and_grad(p, snap.X_all, snap.y_all)  # noqa: E731
        return compute_gradient_sketch(loss_grad, self.x0.values, 0, self.projection,
                                       self.cfg.representation.max_full_dim).values

    def current_reps(self, snaps: Dict[int, ClientSnapshot]) -> Dict[int, np.ndarray]:
        return {cid: self.representation(s) for cid, s in snaps.items() if s.num_samples > 0}

    def k_range(self, n: int) -> Optional[Tuple[int, int]]:
        p = self.cfg.policy
        if not p.k_min and not p.k_max:
            return None
        from .clustering import default_k_range
        lo, hi = default_k_range(n)
        return (p.k_min or lo, min(p.k_max or hi, max(2, n - 1)))

    # --- lifecycle ----------------------------------------------------------

    def initialize(self) -> None:
        snaps = self.snapshots(0)
        reps = self.current_reps(snaps)
        if not reps:
            raise RuntimeError("no client holds data at round 0")
        self.known_reps = dict(reps)
        started = time.perf_counter()
        if self.cfg.policy.initial_clustering and len(reps) >= 2:
            assignment = global_recluster(reps, self.metric, rngs.substream_seed(self.seed, "clustering", 0),
                                          self.k_range(len(reps)))
        else:
            ids = sorted(reps)
            X = np.vstack([reps[c] for c in ids])
            assignment = ClusterAssignment({c: 0 for c in ids}, X.mean(axis=0, keepdims=True))
        self.overhead["initial_clustering_s"] = time.perf_counter() - started
        models = [ModelParams(self.x0.values.copy(), (0, k)) for k in range(assignment.K)]
        self.state = ClusterState(assignment, models)
        for cid in self.ids:
            snap = snaps[cid]
            self.profiles[cid] = ClientProfile(cid, int(len(snap.y_train)), 1.0, self.time_model.speed[cid],
                                               min(self.time_model.bw_up[cid], self.time_model.bw_down[cid]))
        self.events.append({"round": 0, "kind": "initial", "moved_count": 0, "triggered": False, "theta": None,
                            "max_shift": 0.0, "new_K": assignment.K, "config_hash": self.hash})

    def handle_event(self, r: int) -> None:
        event = r // self.tcfg.rounds_per_event if self.tcfg.rounds_per_event else 0
        snaps = self.snapshots(r)
        now = self.current_reps(snaps)
        mode = self.policy.mode
        if mode is DriftMode.RECLUSTER_SELECTED_ONLY:
            reporters = set(self.selected_last_round) | (set(now) - set(self.known_reps))
        else:
            reporters = set(now)
        drifted = []
        for cid in sorted(reporters):
            if cid not in now:
                continue
            old = self.known_reps.get(cid)
            if old is None or distance(old, now[cid], self.metric) > self.policy.epsilon:
                drifted.append((cid, now[cid]))
        self.policy.pairwise_delta = self.pairwise_delta
        started = time.perf_counter()
        outcome = handle_drift_event(drifted, self.state, self.policy, self.metric,
                                     rngs.substream_seed(self.seed, "clustering", event), self.known_reps,
                                     self.selected_last_round, self.k_range(len(set(self.known_reps) | set(now))),
                                     round_index=r)
        elapsed = time.perf_counter() - started
        self.overhead["recluster_s" if outcome.global_recluster_triggered else "reassign_s"].append(elapsed)
        for cid, v in drifted:
            self.known_reps[cid] = v
        apply_outcome(self.state, outcome)
        self.trigger_history.append(bool(outcome.global_recluster_triggered))
        if self.policy.pairwise_variant:
            both = len(self.trigger_history) >= 2 and self.trigger_history[-1] and self.trigger_history[-2]
            self.pairwise_delta = update_adaptive_delta(self.pairwise_delta, self.policy.pairwise_c, both)
        rec = outcome.log_record(r)
        rec.update({"kind": "drift", "event_index": event, "drifted_count": len(drifted),
                    "pairwise_delta": self.pairwise_delta if self.policy.pairwise_variant else None,
                    "config_hash": self.hash})
        self.events.append(rec)
        self._pending = {"triggered": int(outcome.global_recluster_triggered), "moved": len(outcome.moved_clients)}
        self.assignment_version += 1

    def heterogeneity(self, snaps: Dict[int, ClientSnapshot]) -> Tuple[float, float]:
        key = (self._snap_key, self.assignment_version)
        if key != self._het_key:
            ids = [c for c in sorted(self.state.assignment.client_to_cluster) if snaps[c].num_samples > 0]
            if len(ids) >= 2:
                X = np.vstack([compute_label_histogram(snaps[c].y_all, self.cfg.task.num_labels).probs
                               for c in ids])
                rep = mean_client_distance_arrays(X, self.state.assignment.labels_for(ids), Metric.L1)
                self._het = (rep.mean_client_distance, rep.global_mean)
            else:
                self._het = (0.0, 0.0)
            self._het_key = key
        return self._het

    def evaluate_clients(self, snaps: Dict[int, ClientSnapshot]) -> Tuple[List[float], float]:
        a = self.state.assignment
        per_cluster: List[List[float]] = [[] for _ in range(a.K)]
        for cid in sorted(a.client_to_cluster):
            snap = snaps[cid]
            if len(snap.y_test) == 0:
                continue
            k = a.client_to_cluster[cid]
            per_cluster[k].append(evaluate(self.model, self.state.models[k].values, snap.X_test, snap.y_test))
        flat = [v for accs in per_cluster for v in accs]
        cluster_means = [float(np.mean(v)) if v else float("nan") for v in per_cluster]
        return cluster_means, float(np.mean(flat)) if flat else 0.0

    def step(self, r: int) -> dict:
        R = self.tcfg.rounds_per_event
        if r > 0 and R and r % R == 0:
            self.handle_event(r)
        snaps = self.snapshots(r)
        reps = self.known_reps if self.cfg.selection.name == "distance" else None
        results = run_round(self.state, self.tcfg, self.selector, self.time_model, self.model, snaps, self.profiles,
                            self.seed, reps)
        self.selected_last_round = sorted({c for res in results for c in res.selected})
        cluster_acc, mean_acc = self.evaluate_clients(snaps)
        mcd, gmd = self.heterogeneity(snaps)
        row = {"round": r, "event_index": r // R if R else 0, "sim_time_s": float(self.state.sim_time),
               "per_cluster_accuracy": ";".join(repr(v) for v in cluster_acc), "mean_accuracy": mean_acc,
               "mean_client_distance": float(mcd), "global_client_distance": float(gmd),
               "K": self.state.assignment.K, "recluster_triggered": self._pending["triggered"],
               "moved_count": self._pending["moved"],
               "dropped_stragglers": sum(len(res.dropped) for res in results), "config_hash": self.hash}
        self._pending = {"triggered": 0, "moved": 0}
        self.rows.append(row)
        return row

    @property
    def total_rounds(self) -> int:
        return self.tcfg.total_events * self.tcfg.rounds_per_event

    # --- persistence --------------------------------------------------------

    def checkpoint(self, r: int) -> Path:
        """Snapshot everything needed to continue at round ``r``."""
        base = self.out_dir / "checkpoints" / f"round_{r:06d}"
        tmp = base.with_suffix(".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        for k, m in enumerate(self.state.models):
            save_params(tmp / f"model_{k:03d}.bin", m, self.model_kind)
        servers = [{k: v.tolist() for k, v in s.items()} for s in self.state.server_states]
        state = {"round": r, "config_hash": self.hash, "sim_time": self.state.sim_time,
                 "assignment": self.state.assignment.to_json(),
                 "known_reps": {str(c): v.tolist() for c, v in sorted(self.known_reps.items())},
                 "profiles": [p.to_json() for _, p in sorted(self.profiles.items())],
                 "trigger_history": self.trigger_history, "pairwise_delta": self.pairwise_delta,
                 "selected_last_round": self.selected_last_round, "server_states": servers,
                 "assignment_version": self.assignment_version, "overhead": self.overhead,
                 "num_models": len(self.state.models)}
        (tmp / "state.json").write_text(json.dumps(state, sort_keys=True))
        if base.exists():
            shutil.rmtree(base)
        tmp.rename(base)
        (self.out_dir / "checkpoints" / "latest.json").write_text(json.dumps({"round": r, "path": base.name}))
        return base

    def restore(self, path: Path) -> int:
        state = json.loads((path / "state.json").read_text())
        if state["config_hash"] != self.hash:
            raise ResumeError(f"checkpoint hash {state['config_hash']} does not match config hash {self.hash}")
        assignment = ClusterAssignment.from_json(state["assignment"])
        models = []
        for k in range(state["num_models"]):
            params, kind = load_params(path / f"model_{k:03d}.bin")
            if kind != self.model_kind:
                raise ResumeError(f"checkpoint model kind {kind} != {self.model_kind}")
            models.append(params)
        servers = [{k: np.asarray(v, dtype=np.float64) for k, v in s.items()} for s in state["server_states"]]
        self.state = ClusterState(assignment, models, state["round"], state["sim_time"], servers)
        self.known_reps = {int(c): np.asarray(v, dtype=np.float64) for c, v in state["known_reps"].items()}
        self.profiles = {p["client_id"]: ClientProfile(**p) for p in state["profiles"]}
        self.trigger_history = list(state["trigger_history"])
        self.pairwise_delta = state["pairwise_delta"]
        self.selected_last_round = list(state["selected_last_round"])
        self.assignment_version = state["assignment_version"]
        self.overhead = state["overhead"]
        self._snap_key = None
        self._het_key = None
        return int(state["round"])

    def summary(self) -> dict:
        accs = [row["mean_accuracy"] for row in self.rows]
        window = self.cfg.run.final_window
        pairs = [(row["sim_time_s"], row["mean_accuracy"]) for row in self.rows]
        tta = {repr(float(t)): time_to_accuracy(pairs, float(t)) for t in self.cfg.run.accuracy_targets}
        return {"config_hash": self.hash, "rounds": len(self.rows),
                "final_accuracy": float(np.mean(accs[-window:])) if accs else None,
                "final_K": self.state.assignment.K if self.state else None,
                "num_recluster_triggers": int(sum(row["recluster_triggered"] for row in self.rows)),
                "final_mean_client_distance": self.rows[-1]["mean_client_distance"] if self.rows else None,
                "sim_time_s": self.rows[-1]["sim_time_s"] if self.rows else 0.0,
                "tta_s": tta,
                "selector": {"name": self.selector.name, **self.selector.params()},
                "overhead_wall_s": {"initial_clustering": self.overhead["initial_clustering_s"],
                                    "reassign_mean": float(np.mean(self.overhead["reassign_s"]))
                                    if self.overhead["reassign_s"] else 0.0,
                                    "recluster_mean": float(np.mean(self.overhead["recluster_s"]))
                                    if self.overhead["recluster_s"] else 0.0,
                                    "reassign_events": len(self.overhead["reassign_s"]),
                                    "recluster_events": len(self.overhead["recluster_s"])}}


def _read_rows(path: Path) -> List[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({"round": int(row["round"]), "event_index": int(row["event_index"]),
                    "sim_time_s": float(row["sim_time_s"]), "per_cluster_accuracy": row["per_cluster_accuracy"],
                    "mean_accuracy": float(row["mean_accuracy"]),
                    "mean_client_distance": float(row["mean_client_distance"]),
                    "global_client_distance": float(row["global_client_distance"]), "K": int(row["K"]),
                    "recluster_triggered": int(row["recluster_triggered"]), "moved_count": int(row["moved_count"]),
                    "dropped_stragglers": int(row["dropped_stragglers"]), "config_hash": row["config_hash"]})
    return out


def _write_rows_header(path: Path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerow(ROUND_FIELDS)


def _append_row(fh, row: dict) -> None:
    w = csv.writer(fh)
    w.writerow([_fmt(row[k]) for k in ROUND_FIELDS])
    fh.flush()


def _append_event(fh, rec: dict) -> None:
    fh.write(json.dumps(rec, sort_keys=True) + "\n")
    fh.flush()


def _drive(exp: Experiment, start: int, stop_after_round: Optional[int]) -> bool:
    """Run rounds from ``start``; returns True when the run completed."""
    out = exp.out_dir
    every = exp.cfg.run.checkpoint_every
    n_events_written = len(exp.events)
    rows_fh = open(out / "rounds.csv", "a", newline="") if out else None
    events_fh = open(out / "events.jsonl", "a") if out else None
    try:
        if events_fh:
            for rec in exp.events[exp._events_flushed:]:
                _append_event(events_fh, rec)
            exp._events_flushed = len(exp.events)
        for r in range(start, exp.total_rounds):
            if out and every and r > 0 and r % every == 0 and r != start:
                exp.checkpoint(r)
            row = exp.step(r)
            if rows_fh:
                _append_row(rows_fh, row)
                for rec in exp.events[exp._events_flushed:]:
                    _append_event(events_fh, rec)
                exp._events_flushed = len(exp.events)
            if stop_after_round is not None and r >= stop_after_round:
                return r + 1 >= exp.total_rounds
        return True
    finally:
        if rows_fh:
            rows_fh.close()
            events_fh.close()


def _finish(exp: Experiment) -> dict:
    summary = exp.summary()
    if exp.out_dir:
        (exp.out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None, write: bool = True,
                   stop_after_round: Optional[int] = None) -> RunResult:
    """Execute a run. With ``write`` the run directory receives config.toml,
    rounds.csv, events.jsonl, checkpoints and (last) summary.json.
    ``stop_after_round`` aborts early, as if the process were killed."""
    target = None
    if write:
        target = Path(out_dir) if out_dir is not None else resolve_output_dir(cfg)
        target.mkdir(parents=True, exist_ok=True)
        for name in ("summary.json", "rounds.csv", "events.jsonl"):
            if (target / name).exists():
                (target / name).unlink()
        if (target / "checkpoints").exists():
            shutil.rmtree(target / "checkpoints")
        (target / "config.toml").write_text(dump_toml(cfg))
        (target / "config_hash.txt").write_text(cfg.config_hash() + "\n")
        _write_rows_header(target / "rounds.csv")
        (target / "events.jsonl").write_text("")
    exp = Experiment(cfg, target)
    exp.initialize()
    done = _drive(exp, 0, stop_after_round)
    summary = _finish(exp) if done else {}
    return RunResult(target, exp.rows, exp.events, summary, exp.state)


def resume(run_dir: Union[str, Path]) -> RunResult:
    """Continue a run from its latest checkpoint; output matches an
    uninterrupted run exactly."""
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.toml")
    recorded = (run_dir / "config_hash.txt").read_text().strip() if (run_dir / "config_hash.txt").exists() else None
    if recorded is not None and recorded != cfg.config_hash():
        raise ResumeError(f"config hash {cfg.config_hash()} differs from recorded {recorded}")
    exp = Experiment(cfg, run_dir)
    latest = run_dir / "checkpoints" / "latest.json"
    rows = _read_rows(run_dir / "rounds.csv")
    if latest.exists():
        info = json.loads(latest.read_text())
        start = exp.restore(run_dir / "checkpoints" / info["path"])
    else:
        start = 0
    if start == 0:
        logger.info("no checkpoint in %s; restarting from round 0", run_dir)
        return run_experiment(cfg, run_dir)
    exp.rows = [r for r in rows if r["round"] < start]
    events = []
    if (run_dir / "events.jsonl").exists():
        events = [json.loads(line) for line in (run_dir / "events.jsonl").read_text().splitlines() if line]
    exp.events = [e for e in events if e["round"] < start]
    _write_rows_header(run_dir / "rounds.csv")
    with open(run_dir / "rounds.csv", "a", newline="") as fh:
        for row in exp.rows:
            _append_row(fh, row)
    with open(run_dir / "events.jsonl", "w") as fh:
        for rec in exp.events:
            _append_event(fh, rec)
    exp._events_flushed = len(exp.events)
    if (run_dir / "summary.json").exists():
        (run_dir / "summary.json").unlink()
    _drive(exp, start, None)
    summary = _finish(exp)
    return RunResult(run_dir, exp.rows, exp.events, summary, exp.state)


def run_ablation(cfg: ExperimentConfig, axis: str, out_dir: Optional[Union[str, Path]] = None,
                 values: Optional[Sequence] = None, write_runs: bool = True) -> List[dict]:
    """One run per axis value with shared seeds; failed cells are recorded
    and the remaining cells still run. Writes ``ablation_<axis>.csv``."""
    if axis not in ABLATION_AXES:
        raise ConfigError([f"ablate: unknown axis {axis!r}; choose from {', '.join(ABLATION_AXES)}"])
    field_path, defaults = ABLATION_AXES[axis]
    values = list(defaults if values is None else values)
    base = Path(out_dir) if out_dir is not None else resolve_output_dir(cfg).with_name(
        f"{cfg.run.name}_ablate_{axis}")
    base.mkdir(parents=True, exist_ok=True)
    table = []
    for i, value in enumerate(values):
        cell = {"axis": axis, "value": value, "status": "ok", "error": ""}
        try:
            cell_cfg = cfg.with_override(field_path, value)
            res = run_experiment(cell_cfg, base / f"cell_{i:02d}", write=write_runs)
            s = res.summary
            cell.update({"final_accuracy": s["final_accuracy"], "num_recluster_triggers": s["num_recluster_triggers"],
                         "final_mean_client_distance": s["final_mean_client_distance"],
                         "final_K": s["final_K"], "sim_time_s": s["sim_time_s"],
                         **{f"tta_{k}": v for k, v in s["tta_s"].items()}, "result": res})
        except Exception as err:  # a failed cell must not stop the sweep
            logger.exception("ablation cell %s=%r failed", axis, value)
            cell.update({"status": "failed", "error": f"{type(err).__name__}: {err}"})
        table.append(cell)
    keys = ["axis", "value", "status", "final_accuracy", "num_recluster_triggers", "final_mean_client_distance",
            "final_K", "sim_time_s"]
    tta_keys = sorted({k for c in table for k in c if k.startswith("tta_")})
    with open(base / f"ablation_{axis}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys + tta_keys + ["error"])
        for c in table:
            w.writerow([_fmt(c.get(k, "")) if c.get(k) is not None else "" for k in keys + tta_keys] + [c["error"]])
    return table


def report(run_dir: Union[str, Path], out: Optional[io.TextIOBase] = None) -> Tuple[Path, Path]:
    """Write ``report_series.csv`` (accuracy and heterogeneity per round) and
    ``report_tta.csv`` (TTA per target, re-derived from rounds.csv)."""
    run_dir = Path(run_dir)
    rows = _read_rows(run_dir / "rounds.csv")
    if not rows:
        raise FileNotFoundError(f"{run_dir}: no rounds.csv rows")
    cfg = load_config(run_dir / "config.toml")
    series = run_dir / "report_series.csv"
    with open(series, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "sim_time_s", "mean_accuracy", "mean_client_distance", "global_client_distance", "K",
                    "recluster_triggered"])
        for r in rows:
            w.writerow([r["round"], repr(r["sim_time_s"]), repr(r["mean_accuracy"]), repr(r["mean_client_distance"]),
                        repr(r["global_client_distance"]), r["K"], r["recluster_triggered"]])
    pairs = [(r["sim_time_s"], r["mean_accuracy"]) for r in rows]
    tta_path = run_dir / "report_tta.csv"
    with open(tta_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target_accuracy", "tta_s"])
        for t in cfg.run.accuracy_targets:
            v = time_to_accuracy(pairs, float(t))
            w.writerow([repr(float(t)), "" if v is None else repr(v)])
    if out is not None:
        out.write(tta_path.read_text())
    return series, tta_path
