"""Cost kernels and closed-form estimator updates against scan oracles."""

import numpy as np
import pytest

from probeopt.channels import quaternion_of, su2_channel
from probeopt.costs import (
    EstimatorSet,
    cos_squared,
    estimators_from_points,
    evaluate_cost,
    expected_score,
    fidelity_su2,
    initial_estimators,
    optimal_estimator_cos,
    optimal_estimator_relmse,
    optimal_estimator_su2,
    relative_mse,
    update_all_estimators,
)
from probeopt.operators import Op, layout
from probeopt.priors import haar_prior_su2, with_channel


class FakeTesters:
    def __init__(self, elements):
        self.elements = elements


def random_povm_testers(rng, n_out):
    # parallel-feasible single-copy testers: T_i = (sqrt(sigma) (x) 1) M_i^T (...)
    # with sigma = 1/2, i.e. T_i = M_i^T / 2 for a random POVM M on 4 dims
    gs = []
    for _ in range(n_out):
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        gs.append(a @ a.conj().T)
    S = sum(gs)
    w, v = np.linalg.eigh(S)
    s_inv_half = v @ np.diag(1 / np.sqrt(w)) @ v.conj().T
    lay = layout(("I1", 2), ("O1", 2))
    return FakeTesters([Op(lay, (s_inv_half @ g @ s_inv_half).T / 2) for g in gs])


def test_evaluate_cost_perfect_estimates():
    assert np.isclose(evaluate_cost(fidelity_su2(), [0.3, 0.1, 0.2], [0.3, 0.1, 0.2]), 1.0)
    assert np.isclose(evaluate_cost(relative_mse(), [2.0], [2.0]), 0.0)
    assert np.isclose(evaluate_cost(cos_squared(), [1.1], [1.1]), 1.0)


def test_evaluate_cost_extremes():
    # orthogonal quaternions: quarter turns about x and y
    a = [np.pi / 2, 0.0, 0.0]
    b = [0.0, np.pi / 2, 0.0]
    assert np.isclose(evaluate_cost(fidelity_su2(), a, b), 0.0, atol=1e-15)
    assert np.isclose(evaluate_cost(cos_squared(), [0.0], [np.pi]), 0.0, atol=1e-15)


def test_evaluate_cost_relmse_rejects_zero():
    with pytest.raises(ValueError):
        evaluate_cost(relative_mse(), [0.0], [1.0])


def test_su2_estimator_point_posterior():
    q0 = quaternion_of([0.4, -0.2, 0.7])
    got = optimal_estimator_su2(np.array([1.0]), q0[None, :])
    assert np.isclose(abs(got @ q0), 1.0)


def test_su2_estimator_two_point_split():
    quats = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)
    w = np.array([0.5, 0.5])
    q = optimal_estimator_su2(w, quats)
    # K = diag(1/2, 1/2, 0, 0): any unit vector in that plane scores 1/2
    score = sum(wi * float(q @ qi) ** 2 for wi, qi in zip(w, quats))
    assert np.isclose(score, 0.5)
    assert q[0] >= 0


def test_su2_estimator_haar_degenerate():
    h = haar_prior_su2(4000, mode="importance", seed=0)
    quats = np.array([quaternion_of(p) for p in h.points])
    q = optimal_estimator_su2(h.weights, quats)
    K = np.einsum("j,ja,jb->ab", h.weights, quats, quats)
    # K is close to I/4; achieved score must equal its top eigenvalue
    assert np.isclose(q @ K @ q, np.linalg.eigvalsh(K)[-1], atol=1e-12)
    assert np.isclose(q @ K @ q, 0.25, atol=0.02)


def test_su2_estimator_matches_top_eigenvalue_randomly():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = rng.integers(2, 30)
        quats = rng.normal(size=(n, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        w = rng.uniform(size=n)
        q = optimal_estimator_su2(w, quats)
        K = np.einsum("j,ja,jb->ab", w, quats, quats)
        assert np.isclose(q @ K @ q, np.linalg.eigvalsh(K)[-1], atol=1e-10)


def test_relmse_estimator_hand_value():
    # two points {1, 2}, equal weight: (1 + 1/2) / (1 + 1/4) = 1.2
    got = optimal_estimator_relmse(np.array([0.5, 0.5]), np.array([1.0, 2.0]))
    assert np.isclose(got, 1.2)


def test_relmse_estimator_beats_dense_scan():
    rng = np.random.default_rng(2)
    pts = rng.uniform(1.0, 20.0, size=12)
    w = rng.uniform(size=12)
    w /= w.sum()
    star = optimal_estimator_relmse(w, pts)
    grid = np.linspace(0.5, 25.0, 20000)
    losses = ((pts[:, None] - grid[None, :]) / pts[:, None]) ** 2
    best = grid[np.argmin(w @ losses)]
    assert abs(star - best) < 2e-3
    loss_star = w @ ((pts - star) / pts) ** 2
    assert loss_star <= np.min(w @ losses) + 1e-10


def test_cos_estimator_symmetry_and_scan():
    assert np.isclose(optimal_estimator_cos(np.array([0.5, 0.5]), np.array([1.0, 1.4])), 1.2)
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 2 * np.pi, size=10)
    w = rng.uniform(size=10)
    w /= w.sum()
    star = optimal_estimator_cos(w, pts)
    grid = np.linspace(-np.pi, np.pi, 20001)
    rewards = np.cos((pts[:, None] - grid[None, :]) / 2) ** 2
    best = grid[np.argmax(w @ rewards)]
    r_star = w @ np.cos((pts - star) / 2) ** 2
    r_best = w @ np.cos((pts - best) / 2) ** 2
    assert r_star >= r_best - 1e-8


def test_cos_estimator_flat_posterior_tiebreak():
    pts = np.array([0.0, np.pi / 2, np.pi, 3 * np.pi / 2])
    w = np.array([0.25, 0.25, 0.25, 0.25])
    got = optimal_estimator_cos(w, pts)
    assert got in pts  # falls back to a mode


def test_update_all_estimators_monotone_and_uninformative():
    h = with_channel(haar_prior_su2(300, seed=4), su2_channel(), k=1)
    kernel = fidelity_su2()
    rng = np.random.default_rng(5)
    testers = random_povm_testers(rng, 6)
    est0 = initial_estimators(kernel, h, 6, rng)
    s_before = expected_score(kernel, h, testers.elements, est0)
    est1 = update_all_estimators(kernel, testers, h, est0)
    s_after = expected_score(kernel, h, testers.elements, est1)
    assert s_after >= s_before - 1e-10

    # uninformative testers: every outcome sees the prior posterior
    lay = layout(("I1", 2), ("O1", 2))
    flat = FakeTesters([Op(lay, np.eye(4) / 8) for _ in range(4)])
    est = update_all_estimators(kernel, flat, h, est0)
    assert np.allclose(est.quaternions, est.quaternions[0])


def test_update_keeps_previous_on_zero_mass():
    h = with_channel(haar_prior_su2(50, seed=6), su2_channel(), k=1)
    kernel = fidelity_su2()
    lay = layout(("I1", 2), ("O1", 2))
    testers = FakeTesters([Op(lay, np.eye(4) / 4), Op(lay, np.zeros((4, 4)))])
    prev = estimators_from_points(kernel, np.array([[0.1, 0.2, 0.3], [0.5, -0.1, 0.2]]))
    est = update_all_estimators(kernel, testers, h, prev)
    assert np.allclose(est.estimates[1], prev.estimates[1])


def test_update_matches_brute_force_toy():
    # 5-hypothesis toy: exhaustive candidate scan over the hypothesis points
    h = with_channel(haar_prior_su2(5, seed=7), su2_channel(), k=1)
    kernel = fidelity_su2()
    rng = np.random.default_rng(8)
    testers = random_povm_testers(rng, 3)
    est = update_all_estimators(kernel, testers, h, initial_estimators(kernel, h, 3, rng))
    P = np.stack([np.real(h.choi_vecs @ t.mat.conj().reshape(-1)) for t in testers.elements])
    for i in range(3):
        w = h.weights * P[i]
        best_grid = max(float(w @ (h.quaternions @ q) ** 2) for q in h.quaternions)
        achieved = float(w @ (h.quaternions @ est.quaternions[i]) ** 2)
        assert achieved >= best_grid - 1e-12


def test_initial_estimators_seeded_and_sized():
    h = with_channel(haar_prior_su2(100, seed=9), su2_channel(), k=1)
    a = initial_estimators(fidelity_su2(), h, 8, np.random.default_rng(10))
    b = initial_estimators(fidelity_su2(), h, 8, np.random.default_rng(10))
    assert len(a) == 8
    assert np.allclose(a.estimates, b.estimates)
