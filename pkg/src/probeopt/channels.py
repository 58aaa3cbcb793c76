"""Parameter-encoded channel families producing Choi operators.

Each model maps a parameter vector theta to a Kraus set (probability kernel)
and, where a noiseless unitary part exists, to that unitary's Kraus set as the
cost-reference kernel.  Convention: Choi operators live on (input, output)
with Tr_out J = 1_in.

Units for the thermalization model: the qubit gap eps is the energy unit
(temperatures are theta/eps) and the spectral density at the gap is 1, making
the interaction time dimensionless.  Both are assumptions, recorded here
because nothing downstream pins them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .operators import Layout, Op, choi_from_kraus

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.diag([1.0, -1.0]).astype(complex)


def quaternion_of(theta: np.ndarray) -> np.ndarray:
    """Unit quaternion (q0, q1, q2, q3) of the rotation exp(-i theta.sigma)."""
    theta = np.asarray(theta, dtype=float)
    r = np.linalg.norm(theta)
    if r >= np.pi:
        raise ValueError(f"|theta| = {r:.6f} must stay below pi")
    # sinc handles the r -> 0 series expansion
    q = np.empty(4)
    q[0] = np.cos(r)
    q[1:] = np.sinc(r / np.pi) * theta
    return q


def theta_of_quaternion(q: np.ndarray) -> np.ndarray:
    """Exponential coordinates of the rotation; sign fixed so q0 >= 0."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    r = np.arccos(np.clip(q[0], -1.0, 1.0))
    vn = np.linalg.norm(q[1:])
    if vn < 1e-12:
        return np.zeros(3)
    return r * q[1:] / vn


def su2_from_quaternion(q: np.ndarray) -> np.ndarray:
    return q[0] * np.eye(2, dtype=complex) - 1j * (
        q[1] * PAULI_X + q[2] * PAULI_Y + q[3] * PAULI_Z
    )


def su2_unitary(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """exp(-i theta.sigma) together with its quaternion."""
    q = quaternion_of(theta)
    return su2_from_quaternion(q), q


def phase_unitary(theta: float, t: float = 1.0) -> np.ndarray:
    """Phase rotation diag(e^{-i theta t/2}, e^{+i theta t/2})."""
    return np.diag([np.exp(-0.5j * theta * t), np.exp(0.5j * theta * t)])


def amplitude_damping_kraus(p: float) -> list[np.ndarray]:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"damping probability {p} outside [0, 1]")
    k1 = np.diag([1.0, np.sqrt(1.0 - p)]).astype(complex)
    k2 = np.zeros((2, 2), dtype=complex)
    k2[0, 1] = np.sqrt(p)
    return [k1, k2]


def thermometry_rates(theta: float, eps: float, j_spectral: float) -> tuple[float, float]:
    """(absorption, emission) rates of the thermalizing qubit."""
    n_b = 1.0 / np.expm1(eps / theta)
    return j_spectral * n_b, j_spectral * (n_b + 1.0)


def thermometry_kraus(
    theta: float, eps: float = 1.0, j_spectral: float = 1.0, t: float = 1.0
) -> list[np.ndarray]:
    """Canonical Kraus set of the finite-time thermalization channel."""
    if theta <= 0:
        raise ValueError("temperature must be positive")
    if t < 0:
        raise ValueError("interaction time must be nonnegative")
    gamma_in, gamma_out = thermometry_rates(theta, eps, j_spectral)
    g = np.exp(-(gamma_in + gamma_out) * t)
    n_b = gamma_in / j_spectral
    p = (n_b + 1.0) / (2.0 * n_b + 1.0)
    sg, sq = np.sqrt(g), np.sqrt(1.0 - g)
    k1 = np.sqrt(p) * np.diag([1.0, sg]).astype(complex)
    k2 = np.sqrt(p) * np.array([[0, sq], [0, 0]], dtype=complex)
    k3 = np.sqrt(1.0 - p) * np.diag([sg, 1.0]).astype(complex)
    k4 = np.sqrt(1.0 - p) * np.array([[0, 0], [sq, 0]], dtype=complex)
    return [k1, k2, k3, k4]


def thermometry_choi(
    theta: float, eps: float = 1.0, j_spectral: float = 1.0, t: float = 1.0
) -> Op:
    """Closed-form Choi of the thermalization channel on (input, output)."""
    if theta <= 0:
        raise ValueError("temperature must be positive")
    if t < 0:
        raise ValueError("interaction time must be nonnegative")
    gamma_in, gamma_out = thermometry_rates(theta, eps, j_spectral)
    g = np.exp(-(gamma_in + gamma_out) * t)
    n_b = gamma_in / j_spectral
    p = (n_b + 1.0) / (2.0 * n_b + 1.0)
    J = np.zeros((4, 4), dtype=complex)
    J[0, 0] = p + (1.0 - p) * g
    J[3, 3] = (1.0 - p) + p * g
    J[1, 1] = (1.0 - p) * (1.0 - g)
    J[2, 2] = p * (1.0 - g)
    J[0, 3] = J[3, 0] = np.sqrt(g)
    return Op(Layout((("I", 2), ("O", 2))), J)


@dataclass(frozen=True)
class ChannelModel:
    """Parameter -> channel family.

    kraus_fn gives the probability kernel; unitary_fn, when set, gives the
    noiseless unitary whose Choi serves as the cost reference (noisy models
    score estimates against the unitary they try to identify).
    """

    kind: str
    param_dim: int
    in_dim: int
    out_dim: int
    kraus_fn: Callable[[np.ndarray], list[np.ndarray]]
    unitary_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def kraus(self, theta) -> list[np.ndarray]:
        return self.kraus_fn(np.atleast_1d(np.asarray(theta, dtype=float)))

    def choi(self, theta, in_label: str = "I", out_label: str = "O") -> Op:
        return choi_from_kraus(self.kraus(theta), in_label, out_label)

    def unitary_choi(self, theta, in_label: str = "I", out_label: str = "O") -> Op:
        if self.unitary_fn is None:
            return self.choi(theta, in_label, out_label)
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return choi_from_kraus([self.unitary_fn(theta)], in_label, out_label)


def su2_channel() -> ChannelModel:
    return ChannelModel(
        kind="SU2Unitary",
        param_dim=3,
        in_dim=2,
        out_dim=2,
        kraus_fn=lambda th: [su2_unitary(th)[0]],
        unitary_fn=lambda th: su2_unitary(th)[0],
    )


def phase_channel(t: float = 1.0) -> ChannelModel:
    return ChannelModel(
        kind="PhaseUnitary",
        param_dim=1,
        in_dim=2,
        out_dim=2,
        kraus_fn=lambda th: [phase_unitary(float(th[0]), t)],
        unitary_fn=lambda th: phase_unitary(float(th[0]), t),
    )


def amplitude_damping_channel(p: float) -> ChannelModel:
    ks = amplitude_damping_kraus(p)
    return ChannelModel(
        kind="AmplitudeDamping",
        param_dim=0,
        in_dim=2,
        out_dim=2,
        kraus_fn=lambda th: ks,
    )


def thermometry_channel(eps: float = 1.0, j_spectral: float = 1.0, t: float = 1.0) -> ChannelModel:
    return ChannelModel(
        kind="Thermometry",
        param_dim=1,
        in_dim=2,
        out_dim=2,
        kraus_fn=lambda th: thermometry_kraus(float(th[0]), eps, j_spectral, t),
    )


def compose(noise: ChannelModel, base: ChannelModel) -> ChannelModel:
    """Channel family theta -> noise after base(theta); Kraus products."""
    if noise.in_dim != base.out_dim:
        raise ValueError(
            f"inner output dim {base.out_dim} does not feed outer input dim {noise.in_dim}"
        )

    def kraus_fn(th: np.ndarray) -> list[np.ndarray]:
        inner = base.kraus_fn(th)
        outer = noise.kraus_fn(th)
        return [ko @ ki for ko in outer for ki in inner]

    return ChannelModel(
        kind=f"Composed({noise.kind} . {base.kind})",
        param_dim=base.param_dim,
        in_dim=base.in_dim,
        out_dim=noise.out_dim,
        kraus_fn=kraus_fn,
        unitary_fn=base.unitary_fn,
    )
