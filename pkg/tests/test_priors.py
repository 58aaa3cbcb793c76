"""Prior discretization, posterior updates, and particle resampling."""

import numpy as np
import pytest

from probeopt.channels import su2_channel, thermometry_channel
from probeopt.operators import Op, layout
from probeopt.priors import (
    effective_sample_size,
    haar_density_su2,
    haar_prior_su2,
    outcome_likelihood,
    posterior_update,
    resample,
    reweight,
    sine_exp_prior,
    uniform_prior,
    with_channel,
)


def test_haar_density_normalizes_on_ball():
    # midpoint quadrature in spherical coordinates: dV = r^2 sin(phi) dr dphi dpsi
    n_r, n_mu, n_az = 80, 40, 1
    r = (np.arange(n_r) + 0.5) * np.pi / n_r
    total = 0.0
    for ri in r:
        dens = haar_density_su2(np.array([ri, 0.0, 0.0]))  # radial only
        total += dens * 4 * np.pi * ri**2 * (np.pi / n_r)
    assert abs(total - 1.0) <= 1e-3
    assert n_mu and n_az  # quadrature is radial; angular part is exact by symmetry


def test_haar_prior_single_point():
    h = haar_prior_su2(1)
    assert len(h) == 1
    assert np.allclose(h.points, 0.0)
    assert np.isclose(h.weights[0], 1.0)


def test_haar_prior_grid_inside_ball_and_normalized():
    h = haar_prior_su2(2000, mode="grid")
    assert len(h) == 2000
    r = np.linalg.norm(h.points, axis=1)
    assert r.max() < np.pi
    assert np.isclose(h.weights.sum(), 1.0, atol=1e-12)
    # weights follow sin^2(r) within each shell
    w_by_r = {}
    for ri, wi in zip(np.round(r, 10), h.weights):
        w_by_r.setdefault(ri, set()).add(round(wi, 15))
    assert all(len(s) == 1 for s in w_by_r.values())


def test_haar_prior_importance_moment():
    # Haar moment: E[(q . e)^2] = 1/4 for any unit 4-vector e
    h = haar_prior_su2(100_000, mode="importance", seed=7)
    q0 = np.cos(np.linalg.norm(h.points, axis=1))
    assert abs(np.mean(q0**2) - 0.25) < 5e-3


def test_uniform_prior_grid():
    h = uniform_prior(0.0, 1.0, 3)
    assert np.allclose(h.points[:, 0], [0.0, 0.5, 1.0])
    assert np.allclose(h.weights, 1.0 / 3)
    # Riemann normalization oracle: equal cells, equal mass
    assert np.isclose(h.weights.sum(), 1.0)


def test_sine_exp_prior_peaked_and_flat():
    peaked = sine_exp_prior(100.0, 0.0, 2 * np.pi, 201)
    assert np.isclose(peaked.points[np.argmax(peaked.weights), 0], np.pi, atol=0.05)
    flat = sine_exp_prior(-100.0, 0.0, 2 * np.pi, 201)
    inner = flat.weights[20:-20]
    assert inner.max() / inner.min() < 1.2
    sym = sine_exp_prior(35.0, -1.0, 1.0, 101)
    assert np.allclose(sym.weights, sym.weights[::-1], atol=1e-12)


def test_sine_exp_prior_rejects_alpha_zero():
    with pytest.raises(ValueError):
        sine_exp_prior(0.0, 0.0, 1.0, 10)


def test_with_channel_caches_powers():
    h = with_channel(uniform_prior(1.0, 20.0, 5), thermometry_channel(t=0.8), k=2)
    assert h.choi_vecs.shape == (5, 256)
    assert h.layout.labels == ("I1", "O1", "I2", "O2")
    # each cached power is PSD and trace d_O^k
    for v in h.choi_vecs:
        J = v.reshape(16, 16)
        assert np.linalg.eigvalsh(J).min() >= -1e-10
        assert np.isclose(np.trace(J).real, 4.0)


def test_posterior_update_uninformative_tester_is_identity():
    h = with_channel(uniform_prior(1.0, 20.0, 8), thermometry_channel(t=0.8), k=1)

    class Testers:
        # single tester proportional to the full strategy: likelihood constant
        elements = [Op(layout(("I1", 2), ("O1", 2)), np.eye(4) / 2)]

    out = posterior_update(h, Testers(), 0, m=1)
    assert np.allclose(out.weights, h.weights, atol=1e-12)


def test_posterior_update_collapses_on_perfect_discrimination():
    # two orthogonal-output channels at t -> infinity have likelihoods
    # concentrated on different outputs; a projective tester collapses the prior
    h = with_channel(uniform_prior(0.05, 40.0, 2), thermometry_channel(t=50.0), k=1)
    # cold bath keeps the ground state, hot bath half-half: project onto |1>
    proj1 = np.zeros((4, 4))
    proj1[1, 1] = proj1[3, 3] = 1.0  # identity_in (x) |1><1|

    class Testers:
        elements = [Op(layout(("I1", 2), ("O1", 2)), proj1 / 2)]

    out = posterior_update(h, Testers(), 0, m=1)
    # hot hypothesis has much larger excited-state population
    assert out.weights[1] > 0.85
    assert np.isclose(out.weights.sum(), 1.0, atol=1e-12)


def test_reweight_rejects_zero_likelihood():
    h = uniform_prior(0.0, 1.0, 4)
    with pytest.raises(ValueError):
        reweight(h, np.zeros(4))


def test_outcome_likelihood_clips_solver_noise():
    h = with_channel(uniform_prior(1.0, 5.0, 3), thermometry_channel(t=0.5), k=1)
    eps_neg = Op(layout(("I1", 2), ("O1", 2)), -1e-12 * np.eye(4))
    like = outcome_likelihood(h, eps_neg)
    assert (like >= 0).all()


def test_resample_noop_on_uniform_weights():
    h = uniform_prior(0.0, 1.0, 100)
    assert resample(h, 0.5, seed=0) is h


def test_resample_recenters_on_point_mass():
    pts = np.linspace(0.0, 1.0, 101)[:, None]
    w = np.zeros(101)
    w[60] = 1.0
    h = uniform_prior(0.0, 1.0, 101)
    h = reweight(h, w / np.maximum(h.weights, 1e-300))  # force point mass
    out = resample(h, 0.5, seed=3)
    assert np.isclose(out.weights.sum(), 1.0, atol=1e-12)
    assert np.allclose(out.weights, 1.0 / 101)
    # all particles sit at the point mass (zero posterior std -> zero jitter)
    assert np.allclose(out.points, h.points[60], atol=1e-9)
    assert pts.shape == (101, 1)


def test_resample_respects_ball_domain_and_rebuilds_cache():
    h = with_channel(haar_prior_su2(200, seed=1), su2_channel(), k=1)
    assert len(h) >= 200
    w = np.zeros(len(h))
    w[::40] = 1.0
    h2 = reweight(h, w / np.maximum(h.weights, 1e-300))
    out = resample(h2, 0.9, seed=2)
    assert np.linalg.norm(out.points, axis=1).max() < np.pi
    assert out.choi_vecs is not None and out.choi_vecs.shape == h.choi_vecs.shape
    assert np.isclose(effective_sample_size(out), len(out))
