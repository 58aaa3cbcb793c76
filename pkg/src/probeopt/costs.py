"""Cost kernels and per-outcome optimal estimator updates.

Kernels: rotation fidelity (q . q_hat)^2 to maximize, relative mean square
error to minimize, and cos^2((theta - theta_hat)/2) to maximize.  Each kernel
has a closed-form conditional-posterior estimator, so the estimator half of
the alternating optimization is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channels import quaternion_of, theta_of_quaternion
from .priors import HypothesisSet, likelihood_matrix

DEGENERACY_TOL = 1e-10


@dataclass(frozen=True)
class CostKernel:
    kind: str  # fidelity_su2 | relative_mse | cos_squared
    direction: str  # max | min

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "max" else -1.0


def fidelity_su2() -> CostKernel:
    return CostKernel("fidelity_su2", "max")


def relative_mse() -> CostKernel:
    return CostKernel("relative_mse", "min")


def cos_squared() -> CostKernel:
    return CostKernel("cos_squared", "max")


def kernel_by_name(name: str) -> CostKernel:
    table = {
        "fidelity_su2": fidelity_su2,
        "relative_mse": relative_mse,
        "cos_squared": cos_squared,
    }
    if name not in table:
        raise ValueError(f"unknown cost kernel {name!r}; known: {sorted(table)}")
    return table[name]()


@dataclass(frozen=True)
class EstimatorSet:
    """One parameter estimate per tester outcome."""

    estimates: np.ndarray  # (N_O, q)
    quaternions: Optional[np.ndarray] = None  # (N_O, 4) cached for rotations

    def __post_init__(self) -> None:
        est = np.atleast_2d(np.array(self.estimates, dtype=float, copy=True))
        est.setflags(write=False)
        object.__setattr__(self, "estimates", est)
        if self.quaternions is not None:
            qs = np.array(self.quaternions, dtype=float, copy=True)
            qs.setflags(write=False)
            object.__setattr__(self, "quaternions", qs)

    def __len__(self) -> int:
        return len(self.estimates)


def estimators_from_points(kernel: CostKernel, points: np.ndarray) -> EstimatorSet:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if kernel.kind == "fidelity_su2":
        qs = np.array([quaternion_of(p) for p in points])
        return EstimatorSet(points, qs)
    return EstimatorSet(points)


def initial_estimators(
    kernel: CostKernel, h: HypothesisSet, n_outcomes: int, rng: np.random.Generator
) -> EstimatorSet:
    """Seed estimators by sampling outcome guesses from the prior."""
    idx = rng.choice(len(h), size=n_outcomes, p=h.weights)
    return estimators_from_points(kernel, h.points[idx])


def evaluate_cost(kernel: CostKernel, theta, theta_hat) -> float:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    if kernel.kind == "fidelity_su2":
        return float(quaternion_of(theta) @ quaternion_of(theta_hat)) ** 2
    if kernel.kind == "relative_mse":
        if theta[0] == 0:
            raise ValueError("relative error undefined at theta = 0")
        return float(((theta[0] - theta_hat[0]) / theta[0]) ** 2)
    if kernel.kind == "cos_squared":
        return float(np.cos((theta[0] - theta_hat[0]) / 2.0) ** 2)
    raise ValueError(f"unknown kernel {kernel.kind!r}")


def cost_matrix(kernel: CostKernel, h: HypothesisSet, estimators: EstimatorSet) -> np.ndarray:
    """C[j, i] = cost(theta_j, theta_hat_i), vectorized over the grid."""
    if kernel.kind == "fidelity_su2":
        if h.quaternions is None:
            raise ValueError("hypothesis set lacks quaternions; attach a rotation model")
        return (h.quaternions @ estimators.quaternions.T) ** 2
    pts = h.points[:, 0][:, None]
    est = estimators.estimates[:, 0][None, :]
    if kernel.kind == "relative_mse":
        return ((pts - est) / pts) ** 2
    if kernel.kind == "cos_squared":
        return np.cos((pts - est) / 2.0) ** 2
    raise ValueError(f"unknown kernel {kernel.kind!r}")


def expected_score(
    kernel: CostKernel, h: HypothesisSet, elements, estimators: EstimatorSet
) -> float:
    """Discretized score sum_j sum_i p_j c(theta_j, theta_hat_i) Tr(T_i J_j)."""
    P = likelihood_matrix(h, elements)  # (N_O, N_H)
    C = cost_matrix(kernel, h, estimators)  # (N_H, N_O)
    return float(np.einsum("j,ij,ji->", h.weights, P, C))


def optimal_estimator_su2(weights: np.ndarray, quaternions: np.ndarray) -> np.ndarray:
    """Top eigenvector of K = sum_j w_j q_j q_j^T, sign fixed to q0 >= 0.

    Degenerate top eigenspaces are resolved deterministically: maximize |q0|
    within the eigenspace, falling back to a lexicographic pick.
    """
    if weights.sum() <= 0:
        raise ValueError("no posterior mass")
    K = np.einsum("j,ja,jb->ab", weights, quaternions, quaternions)
    evals, evecs = np.linalg.eigh(K)
    top = evals >= evals[-1] - DEGENERACY_TOL
    E = evecs[:, top]
    proj = E @ E[0, :]  # projection of e0 = (1,0,0,0) onto the eigenspace
    if np.linalg.norm(proj) > 1e-8:
        q = proj / np.linalg.norm(proj)
    else:
        # lexicographic over sign-fixed basis columns
        cols = []
        for c in range(E.shape[1]):
            v = E[:, c]
            nz = np.flatnonzero(np.abs(v) > 1e-12)
            if len(nz) and v[nz[0]] < 0:
                v = -v
            cols.append(v)
        q = max(cols, key=lambda v: tuple(np.round(v, 12)))
    if q[0] < 0:
        q = -q
    return q


def optimal_estimator_relmse(weights: np.ndarray, points: np.ndarray) -> float:
    """Posterior-moment ratio <1/theta> / <1/theta^2> minimizing relative MSE."""
    pts = np.asarray(points, dtype=float).reshape(-1)
    if (pts <= 0).any():
        raise ValueError("relative error needs strictly positive parameters")
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        raise ValueError("no posterior mass")
    return float((w / pts).sum() / (w / pts**2).sum())


def optimal_estimator_cos(weights: np.ndarray, points: np.ndarray) -> float:
    """Circular mean arg(sum_j w_j e^{i theta_j}); maximizes the cos^2 reward."""
    pts = np.asarray(points, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        raise ValueError("no posterior mass")
    resultant = np.sum(w * np.exp(1j * pts))
    if abs(resultant) < 1e-12:
        # flat posterior: fall back to the posterior mode
        return float(pts[int(np.argmax(w))])
    return float(np.angle(resultant))


def update_all_estimators(
    kernel: CostKernel,
    testers,
    h: HypothesisSet,
    current: Optional[EstimatorSet] = None,
) -> EstimatorSet:
    """Exact estimator refresh: per outcome, optimize against the conditional
    posterior w_j proportional to p_j Tr(T_i J_j).  Zero-mass outcomes keep
    their previous estimate (they cannot affect the score)."""
    P = likelihood_matrix(h, testers.elements)
    return update_estimators_from_probabilities(kernel, P, h, current)


def update_estimators_from_probabilities(
    kernel: CostKernel,
    P: np.ndarray,
    h: HypothesisSet,
    current: Optional[EstimatorSet] = None,
) -> EstimatorSet:
    n_out = P.shape[0]
    estimates = []
    quats = [] if kernel.kind == "fidelity_su2" else None
    for i in range(n_out):
        w = h.weights * P[i]
        if w.sum() <= 1e-300:
            if current is None:
                raise ValueError(f"outcome {i} has zero mass and no previous estimate")
            estimates.append(current.estimates[i])
            if quats is not None:
                quats.append(current.quaternions[i])
            continue
        if kernel.kind == "fidelity_su2":
            q = optimal_estimator_su2(w, h.quaternions)
            quats.append(q)
            estimates.append(theta_of_quaternion(q))
        elif kernel.kind == "relative_mse":
            estimates.append([optimal_estimator_relmse(w, h.points)])
        elif kernel.kind == "cos_squared":
            estimates.append([optimal_estimator_cos(w, h.points)])
        else:
            raise ValueError(f"unknown kernel {kernel.kind!r}")
    return EstimatorSet(np.array(estimates, dtype=float), None if quats is None else np.array(quats))
