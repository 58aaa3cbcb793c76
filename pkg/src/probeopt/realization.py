"""Physical implementations extracted from testers.

A parallel tester becomes a probe state plus one joint POVM.  A two-step
sequential tester becomes a probe state, an intermediate channel acting on
the memory and the first output, and a final POVM.  A general tester is
kept as a process matrix with a pointer basis measurement.

Marginals of the tester total fix the probe state and the coherent part;
rank-deficient marginals are handled with eigenvalue-floored pseudo square
roots, and the leftover kernel weight is completed into outcome 0 of the
POVM (and into a trash branch of the intermediate channel) so that all
extracted parts are exactly normalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .operators import (
    Op,
    Layout,
    layout,
    kron,
    kron_all,
    link_product,
    max_entangled,
    partial_trace,
    permute_factors,
    split_factor,
)
from .sdp import TesterSet, class_residual

EIG_FLOOR = 1e-10
RESIDUAL_TOL = 1e-6


def _psd_sqrt_parts(mat: np.ndarray, floor: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Square root, pseudo-inverse square root, and support projector."""
    w, V = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    keep = w > floor
    s = np.where(keep, np.sqrt(w, where=keep, out=np.zeros_like(w)), 0.0)
    si = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    sqrt = (V * s) @ V.conj().T
    pinv = (V * si) @ V.conj().T
    proj = (V * keep.astype(float)) @ V.conj().T
    return sqrt, pinv, proj


def _checked_total(t: TesterSet, expected_class: str, residual_tol: float) -> Op:
    if t.strategy.name != expected_class:
        raise ValueError(f"tester class is {t.strategy.name!r}, need {expected_class!r}")
    total = t.total()
    res = class_residual(total, t.strategy)
    if res > residual_tol:
        raise ValueError(
            f"tester total violates {expected_class} constraints by {res:.3e} "
            f"(tolerance {residual_tol:.1e}); marginals are not well defined"
        )
    return total


def _relabeled_chois(chois: Sequence[Op], lay: Layout) -> list[Op]:
    """Map position j to labels (Ij, Oj), checking dims against the tester."""
    k = len(lay.factors) // 2
    if len(chois) != k:
        raise ValueError(f"need {k} channel Choi operators, got {len(chois)}")
    out = []
    for j, c in enumerate(chois, start=1):
        if len(c.layout.factors) != 2:
            raise ValueError("each Choi must have exactly (input, output) factors")
        (la, da), (lb, db) = c.layout.factors
        if (da, db) != (lay.dim(f"I{j}"), lay.dim(f"O{j}")):
            raise ValueError(f"Choi {j} dims {(da, db)} do not match the tester layout")
        out.append(c.relabel({la: f"I{j}", lb: f"O{j}"}))
    return out


def outcome_probabilities(t: TesterSet, chois: Sequence[Op]) -> np.ndarray:
    """Outcome distribution Tr[T_i (J_1 x ... x J_k)] for per-use Chois."""
    named = _relabeled_chois(chois, t.layout)
    joint = permute_factors(kron_all(named), t.layout.labels)
    return np.array([np.real(np.vdot(e.mat, joint.mat)) for e in t.elements])


@dataclass(frozen=True)
class ParallelRealization:
    """Probe state on (I1..Ik, A1..Ak) and joint POVM on (A1..Ak, O1..Ok)."""

    rho: Op
    povm: tuple[Op, ...]
    k: int

    def probabilities(self, chois: Sequence[Op]) -> np.ndarray:
        named = _relabeled_chois(chois, _povm_tester_layout(self.povm[0].layout))
        state = self.rho
        for c in named:
            state = link_product(state, c)
        state = permute_factors(state, self.povm[0].layout.labels)
        return np.array([np.real(np.vdot(m.mat, state.mat)) for m in self.povm])


@dataclass(frozen=True)
class SequentialRealization:
    """Probe state, intermediate channel Choi, and final POVM for k = 2.

    The channel maps (A1, O1) to (I2, G) where A1 is the probe memory and
    G is the second memory of dimension d_I * d_O * d_I carrying everything
    the final POVM needs alongside the last channel output.
    """

    rho: Op
    channel: Op
    povm: tuple[Op, ...]
    k: int = 2

    def probabilities(self, chois: Sequence[Op]) -> np.ndarray:
        lay = layout(("I1", self.rho.layout.dim("I1")), ("O1", self.channel.layout.dim("O1")),
                     ("I2", self.channel.layout.dim("I2")), ("O2", self.povm[0].layout.dim("O2")))
        named = _relabeled_chois(chois, lay)
        s = link_product(self.rho, named[0])      # (A1, O1)
        s = link_product(s, self.channel)         # (I2, G)
        s = link_product(s, named[1])             # (G, O2)
        return np.array([np.real(np.vdot(m.mat, s.mat)) for m in self.povm])

    def reconstructed_testers(self) -> tuple[Op, ...]:
        """Tester elements implied by (rho, channel, povm); round-trip check."""
        dI = self.rho.layout.dim("I1")
        dO = self.channel.layout.dim("O1")
        dG = self.channel.layout.dim("G")
        rho_t = self.rho.mat.reshape(dI, dI, dI, dI)
        phi_t = self.channel.mat.reshape(dI, dO, dI, dG, dI, dO, dI, dG)
        lay = layout(("I1", dI), ("O1", dO), ("I2", dI), ("O2", dO))
        out = []
        for m in self.povm:
            m_t = m.mat.reshape(dG, dO, dG, dO)
            rec = np.einsum(
                "axAy,xbchyBCg,gDhd->ABCDabcd", rho_t, phi_t, m_t, optimize=True
            ).reshape(lay.total_dim, lay.total_dim)
            out.append(Op(lay, rec))
        return tuple(out)


@dataclass(frozen=True)
class GeneralRealization:
    """Process matrix blocks W_i with a pointer basis measurement.

    The full process matrix is sum_i blocks[i] x |i><i| on the tester space
    extended by an N_O dimensional pointer; measuring the pointer in the
    computational basis reads out the outcome, so probabilities reproduce
    the tester distribution identically.
    """

    blocks: tuple[Op, ...]
    k: int

    @property
    def n_outcomes(self) -> int:
        return len(self.blocks)

    def pointer_povm(self) -> tuple[np.ndarray, ...]:
        n = self.n_outcomes
        out = []
        for i in range(n):
            m = np.zeros((n, n))
            m[i, i] = 1.0
            out.append(m)
        return tuple(out)

    def full_matrix(self) -> np.ndarray:
        n = self.n_outcomes
        out = None
        for i, b in enumerate(self.blocks):
            term = np.kron(b.mat, np.diag(np.eye(n)[i]))
            out = term if out is None else out + term
        return out

    def probabilities(self, chois: Sequence[Op]) -> np.ndarray:
        lay = self.blocks[0].layout
        named = _relabeled_chois(chois, lay)
        joint = permute_factors(kron_all(named), lay.labels)
        return np.array([np.real(np.vdot(b.mat, joint.mat)) for b in self.blocks])


def _povm_tester_layout(povm_layout: Layout) -> Layout:
    """Recover the (I1,O1,...) tester layout from a parallel POVM layout."""
    k = len(povm_layout.factors) // 2
    factors = []
    for j in range(1, k + 1):
        factors.append((f"I{j}", povm_layout.dim(f"A{j}")))
        factors.append((f"O{j}", povm_layout.dim(f"O{j}")))
    return Layout(tuple(factors))


def realize_parallel(
    t: TesterSet, *, floor: float = EIG_FLOOR, residual_tol: float = RESIDUAL_TOL
) -> ParallelRealization:
    """Probe state and joint POVM implementing a parallel tester.

    The probe is the tester's input marginal applied to half of a
    maximally entangled pair; the POVM rescales the tester elements by the
    pseudo-inverse square root of that marginal on the memory copies.
    """
    total = _checked_total(t, "parallel", residual_tol)
    lay = t.layout
    k = t.strategy.k
    o_labels = [f"O{j}" for j in range(1, k + 1)]
    i_labels = [f"I{j}" for j in range(1, k + 1)]
    a_labels = [f"A{j}" for j in range(1, k + 1)]
    d_out = 1
    for lab in o_labels:
        d_out *= lay.dim(lab)
    sigma = partial_trace(total, o_labels).mat / d_out
    d_in = sigma.shape[0]

    sq, pinv, proj = _psd_sqrt_parts(sigma, floor)
    ib = max_entangled("Ib", "Ab", d_in).mat
    sandwich = np.kron(np.eye(d_in), sq)
    rho = Op(layout(("Ib", d_in), ("Ab", d_in)), sandwich @ ib @ sandwich)
    rho = split_factor(rho, "Ib", [(lab, lay.dim(f"I{j+1}")) for j, lab in enumerate(i_labels)])
    rho = split_factor(rho, "Ab", [(lab, lay.dim(f"I{j+1}")) for j, lab in enumerate(a_labels)])

    scale = np.kron(pinv, np.eye(d_out))
    blocked = [permute_factors(e, i_labels + o_labels) for e in t.elements]
    mats = [scale @ e.mat @ scale for e in blocked]
    # kernel completion keeps the POVM exactly normalized on rank-deficient marginals
    mats[0] = mats[0] + np.kron(np.eye(d_in) - proj, np.eye(d_out))
    povm_lay = Layout(
        tuple((lab, lay.dim(f"I{j+1}")) for j, lab in enumerate(a_labels))
        + tuple((lab, lay.dim(lab)) for lab in o_labels)
    )
    povm = tuple(Op(povm_lay, m) for m in mats)
    return ParallelRealization(rho=rho, povm=povm, k=k)


def realize_sequential_k2(
    t: TesterSet, *, floor: float = EIG_FLOOR, residual_tol: float = RESIDUAL_TOL
) -> SequentialRealization:
    """Probe, intermediate channel, and POVM implementing a two-step tester.

    With W the tester total, sigma = Tr_{O1 I2 O2} W / (d_O1 d_O2) fixes the
    probe and E = Tr_{O2} W / d_O2 fixes the coherent part: the channel is
    the pure Choi built from sqrt(E) on the outgoing memory and the
    pseudo-inverse square root of sigma^T on the incoming one, and the POVM
    rescales the tester elements by the pseudo-inverse square root of E.
    """
    if t.strategy.k != 2:
        raise ValueError("sequential realization is implemented for k = 2 only")
    total = _checked_total(t, "sequential", residual_tol)
    lay = t.layout
    dI, dO = lay.dim("I1"), lay.dim("O1")
    dI2, dO2 = lay.dim("I2"), lay.dim("O2")

    sigma = partial_trace(total, ["O1", "I2", "O2"]).mat / (dO * dO2)
    E = partial_trace(total, ["O2"]).mat / dO2
    dG = dI * dO * dI2

    sq_sig, _, _ = _psd_sqrt_parts(sigma, floor)
    _, pinv_sigT, proj_sigT = _psd_sqrt_parts(sigma.T, floor)
    sq_E, pinv_E, proj_E = _psd_sqrt_parts(E, floor)

    ib = max_entangled("I1", "A1", dI).mat
    sandwich = np.kron(np.eye(dI), sq_sig)
    rho = Op(layout(("I1", dI), ("A1", dI)), sandwich @ ib @ sandwich)

    pp = max_entangled("X", "G", dG)
    pp = split_factor(pp, "X", [("A1", dI), ("O1", dO), ("I2", dI2)])
    X = np.kron(np.kron(pinv_sigT, np.eye(dO * dI2)), sq_E)
    phi = X @ pp.mat @ X
    # trash branch on the memory kernel makes the channel exactly trace preserving
    deficit = np.kron(np.eye(dI) - proj_sigT, np.eye(dO))
    tau = np.zeros((dI2 * dG, dI2 * dG), dtype=complex)
    tau[0, 0] = 1.0
    channel = Op(pp.layout, phi + np.kron(deficit, tau))

    scale = np.kron(pinv_E, np.eye(dO2))
    mats = [scale @ e.mat @ scale for e in t.elements]
    mats[0] = mats[0] + np.kron(np.eye(dG) - proj_E, np.eye(dO2))
    povm_lay = layout(("G", dG), ("O2", dO2))
    povm = tuple(Op(povm_lay, m) for m in mats)
    return SequentialRealization(rho=rho, channel=channel, povm=povm)


def realize_general(t: TesterSet) -> GeneralRealization:
    """Process-matrix form of a general tester with a pointer readout."""
    if t.strategy.name != "general":
        raise ValueError(f"tester class is {t.strategy.name!r}, need 'general'")
    return GeneralRealization(blocks=tuple(t.elements), k=t.strategy.k)


def _encode_matrix(mat: np.ndarray) -> dict:
    a = np.asarray(mat)
    return {
        "shape": list(a.shape),
        "re": [[float(x) for x in row] for row in a.real],
        "im": [[float(x) for x in row] for row in a.imag],
    }


def decode_matrix(d: dict) -> np.ndarray:
    return np.array(d["re"]) + 1j * np.array(d["im"])


def realization_bundle(r) -> dict:
    """JSON-ready dict of the realization's matrices (row-major re/im)."""
    if isinstance(r, ParallelRealization):
        return {
            "kind": "parallel",
            "k": r.k,
            "rho": _encode_matrix(r.rho.mat),
            "povm": [_encode_matrix(m.mat) for m in r.povm],
        }
    if isinstance(r, SequentialRealization):
        return {
            "kind": "sequential",
            "k": r.k,
            "rho": _encode_matrix(r.rho.mat),
            "channel": _encode_matrix(r.channel.mat),
            "povm": [_encode_matrix(m.mat) for m in r.povm],
        }
    if isinstance(r, GeneralRealization):
        return {
            "kind": "general",
            "k": r.k,
            "blocks": [_encode_matrix(b.mat) for b in r.blocks],
            "pointer_povm": [_encode_matrix(m) for m in r.pointer_povm()],
        }
    raise TypeError(f"not a realization: {type(r).__name__}")


def save_bundle(r, path) -> None:
    with open(path, "w") as fh:
        json.dump(realization_bundle(r), fh)
