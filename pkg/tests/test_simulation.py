import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftcfl.clustering import mean_client_distance_arrays
from driftcfl.models import SoftmaxModel, evaluate
from driftcfl.representations import compute_label_histogram
from driftcfl.simulation import (
    ARRIVE,
    PERMUTE,
    RETIRE,
    SWAP,
    ClientData,
    ConceptSwitch,
    DeviceTimeModel,
    DriftTrace,
    Population,
    TraceReplay,
    apply_malicious,
    build_concept_drift_events,
    build_interval_trace,
    build_label_bucket_trace,
    generate_population,
    inject_shared_dataset,
    load_device_profiles,
    make_task,
    sample_device_profiles,
    save_device_profiles,
    simulate_round_time,
    stratified_counts,
    time_to_accuracy,
)
from driftcfl.training import TrainingConfig


def hist_matrix(pop, num_labels):
    return np.vstack([np.bincount(c.y, minlength=num_labels) / c.n for c in pop.clients])


def test_task_priors_are_distributions():
    task = make_task(num_concepts=3, extra_concepts=2, seed=1)
    np.testing.assert_allclose(task.label_priors.sum(axis=1), 1.0)
    assert task.num_concepts == 5 and task.num_initial_concepts == 3
    assert task.means.shape == (5, 10, 32)


def test_split_extra_labels_disjoint():
    task = make_task(num_labels=20, num_concepts=4, extra_concepts=4, split_extra_labels=True, seed=2)
    floor = 0.1 / 20
    for c in range(8):
        heavy = np.flatnonzero(task.label_priors[c] > floor + 1e-12)
        assert (heavy < 10).all() if c < 4 else (heavy >= 10).all()


def test_empty_label_space_rejected():
    with pytest.raises(ValueError):
        make_task(num_labels=0)


def test_stratified_counts_sum():
    counts = stratified_counts(17, np.array([0.5, 0.3, 0.2]))
    assert counts.sum() == 17 and list(counts) == [9, 5, 3]


def test_infinite_alpha_collapses_spread():
    task = make_task(seed=3)
    pop = generate_population(task, 40, 100, float("inf"), seed=3)
    H = hist_matrix(pop, task.num_labels)
    for k in range(4):
        rows = H[pop.concept_labels == k]
        assert np.abs(rows - rows[0]).sum(axis=1).max() == 0.0


def test_single_concept_population():
    task = make_task(num_concepts=1, seed=4)
    pop = generate_population(task, 20, 50, 1.0, seed=4)
    assert set(pop.concept_labels.tolist()) == {0}
    assert (pop.schedule == 0).all()


def test_intra_concept_closer_than_inter():
    task = make_task(num_concepts=4, seed=1)
    pop = generate_population(task, 200, 100, 0.5, seed=1)
    H = hist_matrix(pop, task.num_labels)
    D = np.abs(H[:, None, :] - H[None, :, :]).sum(axis=2)
    same = pop.concept_labels[:, None] == pop.concept_labels[None, :]
    off = ~np.eye(200, dtype=bool)
    assert D[same & off].mean() < D[~same].mean()


def test_population_needs_enough_clients():
    with pytest.raises(ValueError):
        generate_population(make_task(num_concepts=4), 3, 10, 1.0, seed=0)


def test_switch_to_new_concept():
    task = make_task(num_concepts=2, extra_concepts=2, seed=5)
    pop = generate_population(task, 20, 50, 1.0, seed=5, num_segments=4, switches=[ConceptSwitch(2, 0.5, "new")])
    moved = [c for c in range(20) if pop.schedule[c, 2] >= 2]
    assert len(moved) == 10
    assert all((pop.schedule[c, :2] < 2).all() and (pop.schedule[c, 2:] == pop.schedule[c, 2]).all() for c in moved)
    with pytest.raises(ValueError):
        generate_population(make_task(num_concepts=2), 4, 10, 1.0, seed=0, num_segments=2,
                            switches=[ConceptSwitch(1, 1.0, "new")])


def test_interval_cadence():
    task = make_task(seed=6)
    pop = generate_population(task, 4, 100, 1.0, seed=6, num_segments=10)
    trace = build_interval_trace(pop.clients, 10, 30)
    arrivals = [e for e in trace.for_client(0) if e.kind == ARRIVE]
    assert [e.round for e in arrivals if e.payload["bucket"] == 3] == [90]
    retires = [e for e in trace.for_client(0) if e.kind == RETIRE]
    assert [e.round for e in retires if e.payload["bucket"] == 3] == [190]


def test_single_interval_is_static():
    task = make_task(seed=6)
    pop = generate_population(task, 4, 100, 1.0, seed=6)
    trace = build_interval_trace(pop.clients, 1, 30)
    assert all(e.round == 0 and e.kind == ARRIVE for e in trace.events)
    replay = TraceReplay(pop, trace)
    assert replay.active_mask(0, 0).all() and replay.active_mask(0, 10_000).all()


def test_retention_window_arithmetic():
    n = 120
    cd = ClientData(0, np.zeros((n, 2)), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64),
                    np.arange(n), np.zeros(n, dtype=bool))
    pop = Population([cd], np.zeros(1, dtype=int), np.zeros((1, 1), dtype=int))
    trace = build_interval_trace([cd], num_intervals=n, rounds_between=2, retention_rounds=100)
    held = np.flatnonzero(TraceReplay(pop, trace).active_mask(0, 200))
    # oracle: arrival b at 2b (warmup arrivals count from round 0), retire at 2b + 100
    expected = [b for b in range(n) if 2 * b <= 200 < 2 * b + 100]
    assert held.tolist() == expected and len(expected) == 50


def test_warmup_arrivals_available_at_start():
    task = make_task(seed=7)
    pop = generate_population(task, 4, 100, 1.0, seed=7, num_segments=10)
    replay = TraceReplay(pop, build_interval_trace(pop.clients, 10, 30))
    active = replay.active_mask(0, 0)
    assert set(np.unique(pop.clients[0].segment[active]).tolist()) == {0, 1, 2, 3}


def test_retention_never_exceeded():
    task = make_task(seed=8)
    pop = generate_population(task, 5, 100, 1.0, seed=8, num_segments=10)
    trace = build_interval_trace(pop.clients, 10, 30, retention_rounds=100)
    replay = TraceReplay(pop, trace)
    arrival = {}
    for e in trace.events:
        if e.kind == ARRIVE:
            for i in e.payload["samples"]:
                arrival[(e.client_id, i)] = e.round
    for r in range(0, 330, 7):
        for c in range(5):
            for i in np.flatnonzero(replay.active_mask(c, r)):
                assert r - arrival[(c, int(i))] < 100


def test_label_buckets_one_label_each():
    task = make_task(num_labels=10, labels_per_concept=10, prior_floor=1.0, seed=9)
    pop = generate_population(task, 4, 200, float("inf"), seed=9)
    trace = build_label_bucket_trace(pop.clients, 10, 50, seed=2)
    for cd in pop.clients:
        arrivals = [e for e in trace.for_client(cd.client_id) if e.kind == ARRIVE]
        assert len(arrivals) == 10
        for e in arrivals:
            assert len(np.unique(cd.y[e.payload["samples"]])) == 1


def test_label_buckets_partition_samples():
    task = make_task(seed=2)
    pop = generate_population(task, 6, 80, 0.5, seed=2)
    trace = build_label_bucket_trace(pop.clients, 4, 50, seed=2)
    for cd in pop.clients:
        seen = np.zeros(cd.n, dtype=int)
        for e in trace.for_client(cd.client_id):
            if e.kind == ARRIVE:
                seen[e.payload["samples"]] += 1
        assert (seen == 1).all()


def test_label_bucket_support_grows_until_retirement():
    task = make_task(num_labels=10, labels_per_concept=10, prior_floor=1.0, seed=3)
    pop = generate_population(task, 4, 200, float("inf"), seed=3)
    trace = build_label_bucket_trace(pop.clients, 10, 50, seed=3, retention_rounds=10_000, warmup_rounds_of_data=0)
    replay = TraceReplay(pop, trace)
    supports = [set(pop.clients[0].y[replay.active_mask(0, r)].tolist()) for r in range(0, 500, 50)]
    assert all(a < b for a, b in zip(supports, supports[1:]))


def test_concept_drift_events():
    task = make_task(seed=4)
    pop = generate_population(task, 10, 50, 1.0, seed=4)
    assert build_concept_drift_events(pop.clients, 0.0, [100], seed=4) == []
    events = build_concept_drift_events(pop.clients, 0.5, [100], seed=4)
    assert len(events) == 5 and all(e.kind == SWAP and e.payload["a"] != e.payload["b"] for e in events)
    trace = build_interval_trace(pop.clients, 1).extend(events)
    replay = TraceReplay(pop, trace)
    e = events[0]
    a, b = e.payload["a"], e.payload["b"]
    before = compute_label_histogram(replay.snapshot(e.client_id, 99, 10).y_all, 10).probs
    after = compute_label_histogram(replay.snapshot(e.client_id, 100, 10).y_all, 10).probs
    expected = before.copy()
    expected[[a, b]] = before[[b, a]]
    np.testing.assert_array_equal(after, expected)
    np.testing.assert_array_equal(replay.snapshot(e.client_id, 99, 10).X_all, replay.snapshot(e.client_id, 100, 10).X_all)


def test_concept_drift_hurts_pre_swap_classifier():
    task = make_task(num_concepts=1, labels_per_concept=10, prior_floor=1.0, noise=0.5, seed=5)
    pop = generate_population(task, 1, 2000, float("inf"), seed=5)
    cd = pop.clients[0]
    y = cd.y
    a, b = 0, 1
    model = SoftmaxModel(task.input_dim, 10)
    p = np.zeros(model.dim)
    for _ in range(200):
        p -= 0.5 * model.loss_and_grad(p, cd.X, y)[1]
    swapped = np.where(y == a, b, np.where(y == b, a, y))
    assert evaluate(model, p, cd.X, swapped) < evaluate(model, p, cd.X, y) - 0.1


def test_malicious_permutations():
    task = make_task(seed=6)
    pop = generate_population(task, 20, 20, 1.0, seed=6)
    assert apply_malicious(pop.clients, 0.0, 1, 10) == []
    events = apply_malicious(pop.clients, 0.3, 1, 10)
    assert len(events) == 6
    for e in events:
        perm = np.array(e.payload["permutation"])
        assert e.kind == PERMUTE and sorted(perm.tolist()) == list(range(10))
        assert not np.array_equal(perm, np.arange(10))
        h = compute_label_histogram(pop.clients[e.client_id].y, 10).probs
        assert h[perm].sum() == pytest.approx(1.0)


def test_shared_dataset_sizes():
    task = make_task(num_labels=10, seed=7)
    pop = generate_population(task, 5, 50, 1.0, seed=7)
    one = inject_shared_dataset(pop, "one", task)
    assert all(b.n - a.n == 10 for a, b in zip(pop.clients, one.clients))
    two = inject_shared_dataset(pop, "two", task)
    assert all(b.n - a.n == 20 for a, b in zip(pop.clients, two.clients))
    half = inject_shared_dataset(pop, "half", task)
    assert all(b.n - a.n == 5 for a, b in zip(pop.clients, half.clients))
    with pytest.raises(ValueError):
        inject_shared_dataset(pop, "three", task)


@pytest.mark.parametrize("seed", range(5))
def test_shared_dataset_reduces_heterogeneity(seed):
    task = make_task(seed=seed)
    pop = generate_population(task, 40, 100, 0.5, seed=seed)
    values = []
    for level in (None, "half", "one", "two"):
        p = pop if level is None else inject_shared_dataset(pop, level, task, seed)
        rep = mean_client_distance_arrays(hist_matrix(p, task.num_labels), pop.concept_labels)
        values.append(rep.mean_client_distance)
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_round_time_examples():
    cfg = TrainingConfig(local_steps=5, batch_size=20)
    tm = DeviceTimeModel({0: 100.0}, {0: 1e6}, {0: 1e6}, 1e6)
    assert simulate_round_time([0], cfg, tm).round_time == pytest.approx(3.0)
    tm2 = DeviceTimeModel({0: 100.0, 1: 100.0}, {0: 1e6, 1: 1e6}, {0: 1e6, 1: 1e6}, 1e6, round_deadline=10.0)
    tm2.client_time = lambda c, w: {0: 3.0, 1: 7.0}[c]
    assert simulate_round_time([0, 1], cfg, tm2).round_time == 7.0
    tm2.round_deadline = 5.0
    timing = simulate_round_time([0, 1], cfg, tm2)
    assert timing.round_time == 5.0 and timing.dropped == {1}


def test_device_time_model_validation():
    with pytest.raises(ValueError):
        DeviceTimeModel({0: 0.0}, {0: 1.0}, {0: 1.0}, 1.0)


def test_device_profiles_roundtrip(tmp_path):
    tm = sample_device_profiles(range(6), seed=3, model_bytes=100.0)
    save_device_profiles(tmp_path / "d.csv", tm)
    back = load_device_profiles(tmp_path / "d.csv", 100.0)
    assert back.speed == tm.speed and back.bw_up == tm.bw_up and back.bw_down == tm.bw_down


def test_tta_examples():
    times = [10, 20, 30, 40, 50]
    assert time_to_accuracy(list(zip(times, [0.4, 0.6, 0.5, 0.7, 0.8])), 0.6) == 40
    assert time_to_accuracy(list(zip(times, [0.4, 0.6, 0.5, 0.7, 0.8])), 0.9) is None
    assert time_to_accuracy(list(zip(times, [0.6] * 5)), 0.6) == 10
    assert time_to_accuracy([], 0.5) is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_tta_monotone_in_target(accs, t1, t2):
    lo, hi = sorted((t1, t2))
    records = list(zip(range(len(accs)), accs))
    a, b = time_to_accuracy(records, lo), time_to_accuracy(records, hi)
    if b is not None:
        assert a is not None and a <= b


def test_trace_jsonl_roundtrip_is_byte_identical(tmp_path):
    task = make_task(seed=1)

    def build(path):
        pop = generate_population(task, 6, 60, 0.5, seed=1, num_segments=3)
        trace = build_interval_trace(pop.clients, 3, 30).extend(apply_malicious(pop.clients, 0.5, 1, 10))
        trace = trace.extend(build_concept_drift_events(pop.clients, 0.5, [60], seed=1))
        trace.write_jsonl(path)
        return trace

    t1 = build(tmp_path / "a.jsonl")
    build(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    back = DriftTrace.read_jsonl(tmp_path / "a.jsonl")
    assert back.events == t1.events and back.retention_rounds == t1.retention_rounds
