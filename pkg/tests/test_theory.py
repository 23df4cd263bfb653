import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftcfl.theory import (
    PreconditionError,
    QuadraticClient,
    TheoryParams,
    TheorySetupError,
    TheorySuiteConfig,
    box_theta,
    bounding_box,
    build_trajectory_instance,
    check_grad_diff_bound,
    check_recluster_bound,
    check_sgd_bound,
    check_theorem_trajectory,
    cluster_minimizer,
    curvature,
    k_center,
    linear_difference_pair,
    max_diameter,
    rep_distance,
    run_suite,
    verify_representation_ratio,
)


def test_params_validation():
    TheoryParams(2.0, 1.0, 0.1, 1.0, 0.5, 0.1)
    with pytest.raises(TheorySetupError):
        TheoryParams(1.0, 0.0)
    with pytest.raises(TheorySetupError):
        TheoryParams(1.0, 2.0)
    with pytest.raises(TheorySetupError):
        TheoryParams(2.0, 1.0, sigma_sq=-0.1)
    with pytest.raises(TheorySetupError):
        TheoryParams(2.0, 1.0, Delta=-1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=5))
def test_curvature_matches_eigenvalues(diag):
    L, mu = curvature(np.diag(diag))
    assert L == max(diag) and mu == min(diag)
    TheoryParams(L, mu)


def test_curvature_rejects_indefinite():
    with pytest.raises(TheorySetupError):
        curvature(np.diag([1.0, -1.0]))


def test_client_shape_checks():
    with pytest.raises(TheorySetupError):
        QuadraticClient(np.eye(3), np.zeros(2))
    with pytest.raises(TheorySetupError):
        QuadraticClient(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))


def test_client_gradient_matches_finite_difference():
    rng = np.random.default_rng(0)
    H = np.array([[2.0, 0.3], [0.3, 1.0]])
    c = QuadraticClient(H, rng.normal(size=2), 0.7, sin_amp=0.4, sin_freq=np.array([1.0, -2.0]))
    x = rng.normal(size=2)
    h = 1e-6
    fd = np.array([(c.value(x + h * e)[0] - c.value(x - h * e)[0]) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(c.grad(x)[0], fd, atol=1e-7)


def test_closed_form_minimizer_against_numerical():
    from scipy.optimize import minimize

    rng = np.random.default_rng(3)
    M = rng.normal(size=(3, 3))
    H = M @ M.T + np.eye(3)
    clients = [QuadraticClient(H, rng.normal(size=3) * 2, float(rng.normal())) for _ in range(6)]

    def avg(x):
        return float(np.mean([c.value(x)[0] for c in clients]))

    def avg_grad(x):
        return np.mean([c.grad(x)[0] for c in clients], axis=0)

    res = minimize(avg, np.zeros(3), jac=avg_grad, method="BFGS", options={"gtol": 1e-13})
    np.testing.assert_allclose(cluster_minimizer(clients), res.x, atol=1e-8)


def test_rep_distance_and_diameter():
    r1, r2 = np.array([0.0, 0.0, 1.0]), np.array([3.0, 4.0, 0.5])
    assert rep_distance(r1, r2) == pytest.approx(5.5)
    reps = np.vstack([r1, r2, r1])
    assert max_diameter(reps, np.array([0, 1, 0])) == 0.0
    assert max_diameter(reps, np.array([0, 0, 1])) == pytest.approx(5.5)


def test_representation_ratio_holds_on_box():
    H = np.diag([1.0, 2.0])
    clients = [QuadraticClient(H, a) for a in ([0.0, 0.0], [1.0, 0.5], [-0.5, 1.0])]
    lo, hi = bounding_box(np.vstack([c.a for c in clients]), 1.0)
    theta = box_theta(H, lo, hi)
    assert verify_representation_ratio(clients, theta, lo, hi) <= theta
    with pytest.raises(TheorySetupError):
        verify_representation_ratio(clients, 1e-3, lo, hi)


def test_k_center_farthest_first():
    # last column is the offset coordinate; 5.0 is equidistant and goes to the earlier center
    reps = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [6.0, 0.0], [5.0, 0.0]])
    np.testing.assert_array_equal(k_center(reps, 2), [0, 0, 1, 1, 0])
    np.testing.assert_array_equal(k_center(reps, 1), [0, 0, 0, 0, 0])


# SGD under PL

def test_sgd_noiseless_geometric_decay():
    c = QuadraticClient(np.eye(1), np.zeros(1))
    res = check_sgd_bound(c, eta=0.5, T_steps=10, sigma_sq=0.0, trials=4, x0=np.ones(1))
    assert res.passed
    # each step halves x, so the gap shrinks by a quarter
    assert res.empirical == pytest.approx(0.5 * 0.25 ** 10, rel=1e-12)
    assert res.bound == pytest.approx(0.5 * 0.5 ** 10, rel=1e-12)
    assert res.empirical <= res.bound


def test_sgd_zero_steps_equals_first_term():
    c = QuadraticClient(np.diag([1.0, 4.0]), np.array([1.0, 1.0]))
    res = check_sgd_bound(c, eta=0.25, T_steps=0, sigma_sq=0.1, trials=10, x0=np.array([3.0, 3.0]))
    assert res.empirical == res.details["first_term"]
    assert res.details["first_term"] == pytest.approx(0.5 * (4.0 + 16.0))


def test_sgd_noisy_bound_holds():
    c = QuadraticClient(np.diag([1.0, 4.0]), np.array([1.0, 1.0]))
    res = check_sgd_bound(c, eta=0.25, T_steps=200, sigma_sq=0.1, trials=2000, x0=np.array([3.0, 3.0]))
    assert res.passed
    assert res.bound == pytest.approx(0.75 ** 200 * 10.0 + 4.0 * 0.25 * 0.1 / 2.0)
    assert len(res.details["curve"]) == 201


def test_sgd_precondition():
    c = QuadraticClient(np.diag([1.0, 4.0]), np.zeros(2))
    with pytest.raises(PreconditionError):
        check_sgd_bound(c, eta=0.3, T_steps=5, sigma_sq=0.0)


def test_sgd_deterministic_by_seed():
    c = QuadraticClient(np.diag([1.0, 2.0]), np.zeros(2))
    a = check_sgd_bound(c, 0.3, 20, 0.5, trials=50, seed=7)
    b = check_sgd_bound(c, 0.3, 20, 0.5, trials=50, seed=7)
    assert a.empirical == b.empirical


# gradient difference

def test_grad_diff_identical_clients():
    H = np.diag([1.0, 3.0])
    c = QuadraticClient(H, np.array([0.5, -0.5]))
    res = check_grad_diff_bound(c, c, theta_lip=1.0, Delta=0.0, lo=-np.ones(2), hi=np.ones(2))
    assert res.empirical == 0.0 and res.passed


def test_grad_diff_pure_offset():
    H = np.diag([1.0, 3.0])
    ci, cj, sup = linear_difference_pair(H, np.zeros(2), np.zeros(2), -np.ones(2), np.ones(2), b_i=0.6)
    assert sup == pytest.approx(0.6)
    res = check_grad_diff_bound(ci, cj, theta_lip=2.0, Delta=0.3, lo=-np.ones(2), hi=np.ones(2))
    assert res.empirical == 0.0 and res.passed


def test_grad_diff_linear_pair_grid():
    H = np.diag([1.0, 4.0])
    lo, hi = np.full(2, -5.0), np.full(2, 5.0)
    ci, cj, sup = linear_difference_pair(H, np.zeros(2), np.full(2, 0.5), lo, hi)
    # brute-force corner enumeration of the affine gap
    corners = np.array([[x, y] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])])
    assert sup == pytest.approx(float(np.max(np.abs(ci.value(corners) - cj.value(corners)))), rel=1e-12)
    res = check_grad_diff_bound(ci, cj, theta_lip=1.0, Delta=sup, lo=lo, hi=hi, n_points=1000)
    assert res.trials == 1000 and res.passed
    assert res.empirical == pytest.approx(np.linalg.norm(H @ np.full(2, 0.5)))


def test_grad_diff_premise_violation():
    H = np.eye(2)
    ci, cj, sup = linear_difference_pair(H, np.zeros(2), np.ones(2), -np.ones(2), np.ones(2))
    with pytest.raises(TheorySetupError):
        check_grad_diff_bound(ci, cj, theta_lip=1.0, Delta=sup / 2, lo=-np.ones(2), hi=np.ones(2))
    with pytest.raises(TheorySetupError):
        check_grad_diff_bound(ci, cj, theta_lip=1.0, Delta=sup)


# re-clustering

def _population(seed, n=12, K=3):
    rng = np.random.default_rng(seed)
    H = np.diag([1.0, 2.0])
    centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    labels = np.arange(n) % K
    A = centers[labels] + rng.uniform(-0.2, 0.2, size=(n, 2))
    return H, [QuadraticClient(H, a) for a in A], labels


def test_recluster_identity():
    H, clients, labels = _population(0)
    models = np.vstack([cluster_minimizer([c for c, l in zip(clients, labels) if l == k]) for k in range(3)])
    models = models + 0.3
    reps = np.vstack([c.representation() for c in clients])
    Delta = max_diameter(reps, labels)
    res = check_recluster_bound(clients, clients, labels, models, labels, 1.0, Delta, 0.0)
    assert res.passed
    assert res.empirical == pytest.approx(res.bound - 3.0 * Delta, abs=1e-12)


def test_recluster_identical_clients():
    H = np.diag([1.0, 2.0])
    clients = [QuadraticClient(H, np.array([1.0, 1.0])) for _ in range(6)]
    labels = np.array([0, 0, 0, 1, 1, 1])
    models = np.array([[2.0, 1.0], [0.0, 0.0]])
    res = check_recluster_bound(clients, clients, labels, models, np.zeros(6, dtype=int), 1.0, 0.0, 0.0)
    before = np.mean([c.value(models[l])[0] - c.value(c.a)[0] for c, l in zip(clients, labels)])
    assert res.bound == pytest.approx(before, abs=1e-12)
    # merged model is the average of the two old ones, whose gap is convex-bounded
    assert res.passed


def test_recluster_seed4_instance():
    from driftcfl.theory import _recluster_instance

    before, after, bl, models, al, theta, Delta, delta, lo, hi = _recluster_instance(4, 30, 3, 2)
    res = check_recluster_bound(before, after, bl, models, al, theta, Delta, delta, lo, hi)
    assert res.passed
    # independent recomputation of the left side with closed-form minimizers
    x = models[bl]
    left = 0.0
    for l in np.unique(al):
        idx = np.flatnonzero(al == l)
        m = x[idx].mean(axis=0)
        star = np.mean([after[i].a for i in idx], axis=0)
        left += sum(after[i].value(m)[0] - after[i].value(star)[0] for i in idx)
    assert res.empirical == pytest.approx(left / 30, rel=1e-12)


def test_recluster_rejects_bad_constants():
    H, clients, labels = _population(1)
    models = np.zeros((3, 2))
    with pytest.raises(TheorySetupError):
        check_recluster_bound(clients, clients, labels, models, labels, 1.0, 0.01, 0.0)
    moved = [QuadraticClient(H, c.a + 1.0) for c in clients]
    with pytest.raises(TheorySetupError):
        check_recluster_bound(clients, moved, labels, models, labels, 1.0, 10.0, 0.1)


# full trajectory

def test_trajectory_degenerate_reduces_to_noiseless():
    inst = build_trajectory_instance(seed=0, num_clients=6, K=1, dim=2, events=4, spread=0.0, jitter=0.0,
                                     jump_events=())
    res = check_theorem_trajectory(inst, eta=0.5, rounds_per_event=5, participants=3, sigma_sq=0.0, trials=4)
    d = res.details
    assert d["Delta"] == 0.0 and d["delta"] == 0.0 and not any(d["triggers"])
    initial = d["per_event_measured"][0]
    mu = d["mu_pl"]
    for t, b in enumerate(d["per_event_bound"]):
        assert b == pytest.approx((1 - 0.5 * mu) ** (5 * t) * initial, rel=1e-12)
    assert res.passed


def test_trajectory_initial_point_is_initial_suboptimality():
    inst = build_trajectory_instance(seed=2, events=3)
    res = check_theorem_trajectory(inst, eta=0.2, rounds_per_event=2, participants=9, sigma_sq=0.1, trials=50)
    d = res.details
    assert d["per_event_bound"][0] == d["per_event_measured"][0]
    assert len(d["per_event_bound"]) == 4


def test_trajectory_bound_holds_with_drift():
    inst = build_trajectory_instance(seed=1)
    res = check_theorem_trajectory(inst, eta=0.2, rounds_per_event=10, participants=9, sigma_sq=0.1, trials=500)
    assert res.passed
    assert res.details["models_outside_box"] == 0


def test_trajectory_long_horizon_plateau():
    inst = build_trajectory_instance(seed=0, events=4, jump_events=())
    res = check_theorem_trajectory(inst, eta=0.2, rounds_per_event=60, participants=9, sigma_sq=0.1, trials=500)
    curve = res.details["per_event_measured"]
    assert res.passed
    assert curve[-1] > 0.0
    assert abs(curve[-1] - curve[-2]) < 0.5 * curve[1]


def test_trajectory_precondition():
    inst = build_trajectory_instance(seed=0, events=2)
    with pytest.raises(PreconditionError):
        check_theorem_trajectory(inst, eta=1.0, rounds_per_event=1, participants=3, sigma_sq=0.0, trials=2)


# suite

def test_suite_report_is_json_and_passes():
    report = run_suite(TheorySuiteConfig(sgd_trials=500, trajectory_trials=200))
    json.dumps(report)
    assert report["all_passed"]
    assert [c["name"] for c in report["checks"]] == [
        "sgd_bound", "grad_diff_bound_linear", "grad_diff_bound_sine", "recluster_bound", "theorem_trajectory"]
    for c in report["checks"]:
        assert c["empirical"] <= c["bound"] * 1.05 + 1e-9


def test_suite_config_rejects_unknown():
    with pytest.raises(ValueError):
        TheorySuiteConfig.from_dict({"sgd_eta": 0.1, "bogus": 1})
    assert TheorySuiteConfig.from_dict({"sgd_eta": 0.1}).sgd_eta == 0.1
