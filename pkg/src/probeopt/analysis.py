"""Analytic benchmarks and sanity relations.

Holds the closed-form values and consistency checks the optimizers are tested
against: the rotation-estimation score formula, the two-hypothesis optimal
discrimination value, the thermalization channel's vanishing QFI-scaling
operator, and the Bayesian Cramer-Rao (prior Fisher information) relation for
sharp priors.
"""

from __future__ import annotations

from typing import Callable, Union

import numpy as np

from .channels import thermometry_rates
from .operators import Op, layout
from .priors import HypothesisSet


def analytic_su2_score(k: int) -> float:
    """Optimal average rotation fidelity for k parallel channel uses."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(np.cos(np.pi / (k + 3)) ** 2)


def helstrom_value(p0: float, rho0: np.ndarray, p1: float, rho1: np.ndarray) -> float:
    """Optimal two-hypothesis success probability (1/2)(1 + ||p0 rho0 - p1 rho1||_1).

    rho0, rho1 are unit-trace states; for replacement channels preparing these
    states the same value reads (1/2)(1 + (1/2)||p0 J0 - p1 J1||_1) on the
    trace-d Choi operators.
    """
    delta = p0 * np.asarray(rho0) - p1 * np.asarray(rho1)
    return float(0.5 * (1.0 + np.abs(np.linalg.eigvalsh(delta)).sum()))


def _thermo_kraus_of_nb(n_b: float, j_spectral: float, t: float) -> list[np.ndarray]:
    g = np.exp(-j_spectral * (2.0 * n_b + 1.0) * t)
    p = (n_b + 1.0) / (2.0 * n_b + 1.0)
    sg, sq = np.sqrt(g), np.sqrt(1.0 - g)
    return [
        np.sqrt(p) * np.diag([1.0, sg]),
        np.sqrt(p) * np.array([[0.0, sq], [0.0, 0.0]]),
        np.sqrt(1.0 - p) * np.diag([sg, 1.0]),
        np.sqrt(1.0 - p) * np.array([[0.0, 0.0], [sq, 0.0]]),
    ]


def thermometry_beta(
    theta: float,
    eps: float = 1.0,
    j_spectral: float = 1.0,
    t: float = 1.0,
    step_rel: float = 1e-5,
) -> Op:
    """beta = i sum_k dK_k^dag K_k for the canonical thermalization Kraus set.

    Derivatives are taken with respect to the bath occupation via central
    finite differences (step step_rel * n_b).  The canonical set makes beta
    vanish, which is what rules out super-linear precision scaling.
    """
    gamma_in, _ = thermometry_rates(theta, eps, j_spectral)
    n_b = gamma_in / j_spectral
    hstep = step_rel * n_b
    kp = _thermo_kraus_of_nb(n_b + hstep, j_spectral, t)
    km = _thermo_kraus_of_nb(n_b - hstep, j_spectral, t)
    k0 = _thermo_kraus_of_nb(n_b, j_spectral, t)
    beta = np.zeros((2, 2), dtype=complex)
    for kpl, kmi, k in zip(kp, km, k0):
        kdot = (kpl - kmi) / (2.0 * hstep)
        beta += 1j * kdot.conj().T @ k
    return Op(layout(("S", 2)), (beta + beta.conj().T) / 2)


def thermometry_alpha(
    theta: float,
    eps: float = 1.0,
    j_spectral: float = 1.0,
    t: float = 1.0,
    step_rel: float = 1e-5,
) -> Op:
    """alpha = sum_k dK_k^dag dK_k (PSD by construction); companion of beta."""
    gamma_in, _ = thermometry_rates(theta, eps, j_spectral)
    n_b = gamma_in / j_spectral
    hstep = step_rel * n_b
    kp = _thermo_kraus_of_nb(n_b + hstep, j_spectral, t)
    km = _thermo_kraus_of_nb(n_b - hstep, j_spectral, t)
    alpha = np.zeros((2, 2), dtype=complex)
    for kpl, kmi in zip(kp, km):
        kdot = (kpl - kmi) / (2.0 * hstep)
        alpha += kdot.conj().T @ kdot
    return Op(layout(("S", 2)), alpha)


def prior_fisher_info(
    prior: Union[HypothesisSet, Callable[[np.ndarray], np.ndarray]],
    lo: float | None = None,
    hi: float | None = None,
    n_points: int = 20001,
    floor: float = 1e-12,
) -> float:
    """F0 = integral of p(theta) [d/dtheta log p(theta)]^2 over a 1-D domain.

    Accepts either a density closure (with explicit bounds) or a 1-D grid
    hypothesis set.  Cells with density below `floor` are excluded; endpoint
    cells are dropped since one-sided derivatives there are unreliable.
    """
    if isinstance(prior, HypothesisSet):
        pts = prior.points[:, 0]
        if len(pts) < 5:
            raise ValueError("need at least 5 grid points")
        dx = pts[1] - pts[0]
        dens = prior.weights / dx
    else:
        if lo is None or hi is None:
            raise ValueError("density closures need explicit bounds")
        pts = np.linspace(lo, hi, n_points)
        dx = pts[1] - pts[0]
        raw = np.asarray(prior(pts), dtype=float)
        dens = raw / (raw.sum() * dx)
    grad = np.gradient(dens, dx)
    good = dens > floor
    good[[0, -1]] = False
    return float(np.sum(grad[good] ** 2 / dens[good] * dx))


def strategy_fisher_info(
    testers, h: HypothesisSet, theta0: float, step: float = 1e-4
) -> float:
    """Classical Fisher information of p(i|theta) at theta0, two-sided stencil.

    Probabilities come from the cached channel model of h at the tester's copy
    count; tiny outcome probabilities are excluded.
    """
    h.require_cache()
    model = h.model
    if model is None:
        raise ValueError("hypothesis set lacks a channel model")

    def probs(theta: float) -> np.ndarray:
        J = model.choi([theta]).mat
        Jk = J
        for _ in range(h.k - 1):
            Jk = np.kron(Jk, J)
        vec = Jk.reshape(-1)
        p = np.array([np.real(np.vdot(T.mat, vec)) for T in testers.elements])
        return np.clip(p, 0.0, None)

    pp = probs(theta0 + step)
    pm = probs(theta0 - step)
    p0 = probs(theta0)
    dp = (pp - pm) / (2.0 * step)
    good = p0 > 1e-12
    return float(np.sum(dp[good] ** 2 / p0[good]))


def van_trees_check(
    testers,
    h: HypothesisSet,
    density: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    theta0: float,
    observed_score: float,
) -> dict:
    """Sharp-prior consistency report: predicted = C + F*(theta0) / (4 F0^2).

    C = 1 - 1/(4 F0) is the prior-only score; the correction adds the average
    information of the optimized strategy at the prior mode.  Report-only.
    """
    f0 = prior_fisher_info(density, lo, hi)
    c_prior = 1.0 - 1.0 / (4.0 * f0)
    f_star = strategy_fisher_info(testers, h, theta0)
    predicted = c_prior + f_star / (4.0 * f0**2)
    return {
        "prior_fisher": f0,
        "prior_score": c_prior,
        "strategy_fisher": f_star,
        "predicted_score": predicted,
        "observed_score": observed_score,
        "discrepancy": observed_score - predicted,
    }
