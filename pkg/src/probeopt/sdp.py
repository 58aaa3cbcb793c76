"""Tester semidefinite programs over the strategy classes.

Variables are the PSD tester elements T_i on the k-copy space; the strategy
class fixes affine constraints on W = sum_i T_i built from trace-and-replace
projector differences, plus the trace normalization Tr W = prod(d_out).  The
objective is linear: sum_i Tr(T_i C_i) with C_i assembled from prior weights,
cost values, and cached Choi powers.

Backends are pluggable conic solvers behind one interface.  Complex Hermitian
blocks go to the solver either through the native complex path or through the
explicit real embedding [[Re, -Im], [Im, Re]] (both routes are kept and
cross-checked in the tests).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from math import prod
from typing import Optional, Sequence

import cvxpy as cp
import numpy as np
import scipy.linalg
import scipy.sparse as sps

from .costs import CostKernel, EstimatorSet, cost_matrix
from .operators import Layout, Op, linear_map_matrix, _trace_and_replace_mat
from .priors import HypothesisSet

RANK_TOL = 1e-9

# dedup'd constraint rows, affine projectors, and compiled problems
_ROWS_CACHE: dict = {}
_PROJ_CACHE: dict = {}
_PROBLEM_CACHE: dict = {}


@dataclass(frozen=True)
class StrategyClass:
    """parallel | sequential | general, with the copy count k."""

    name: str
    k: int

    def __post_init__(self) -> None:
        if self.name not in ("parallel", "sequential", "general"):
            raise ValueError(f"unknown strategy class {self.name!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.name == "general" and self.k > 2:
            raise ValueError("general-class constraints are implemented for k <= 2 only")


def parallel(k: int) -> StrategyClass:
    return StrategyClass("parallel", k)


def sequential(k: int) -> StrategyClass:
    return StrategyClass("sequential", k)


def general(k: int) -> StrategyClass:
    return StrategyClass("general", k)


def strategy_by_name(name: str, k: int) -> StrategyClass:
    return StrategyClass(name, k)


@dataclass(frozen=True)
class TesterSet:
    __test__ = False  # keep pytest from collecting the Test* name

    elements: tuple[Op, ...]
    strategy: StrategyClass

    @property
    def n_outcomes(self) -> int:
        return len(self.elements)

    @property
    def layout(self) -> Layout:
        return self.elements[0].layout

    def total(self) -> Op:
        W = sum(e.mat for e in self.elements)
        return Op(self.layout, W)


@dataclass
class SdpSolution:
    value: float
    status: str
    solver: str
    solve_time: float


@dataclass(frozen=True)
class AffineConstraints:
    """Equality rows acting on vec(W) plus the trace normalization."""

    rows: sps.csr_matrix
    trace_rhs: float


def _axes(lay: Layout, labels: Sequence[str]) -> list[int]:
    return [lay.axis(lab) for lab in labels]


def _equality_maps(strategy: StrategyClass, lay: Layout):
    """List of linear maps on W that must vanish for the class."""
    k = strategy.k
    dims = lay.dims

    def tr(labels):
        ax = _axes(lay, labels)
        return lambda m: _trace_and_replace_mat(m, dims, ax)

    out_labels = [f"O{c}" for c in range(1, k + 1)]
    maps = []
    if strategy.name == "parallel":
        r = tr(out_labels)
        maps.append(lambda m, r=r: m - r(m))
    elif strategy.name == "sequential":
        r_last = tr([f"O{k}"])
        maps.append(lambda m, r=r_last: m - r(m))
        for s in range(k, 1, -1):
            tail = [lab for c in range(s, k + 1) for lab in (f"I{c}", f"O{c}")]
            lhs = tr(tail)
            rhs = tr([f"O{s-1}"] + tail)
            maps.append(lambda m, a=lhs, b=rhs: a(m) - b(m))
    elif strategy.name == "general":
        if k == 1:
            r = tr(["O1"])
            maps.append(lambda m, r=r: m - r(m))
        else:
            a1, b1 = tr(["I2", "O2"]), tr(["O1", "I2", "O2"])
            maps.append(lambda m, a=a1, b=b1: a(m) - b(m))
            a2, b2 = tr(["I1", "O1"]), tr(["O2", "I1", "O1"])
            maps.append(lambda m, a=a2, b=b2: a(m) - b(m))
            r1, r2, r12 = tr(["O1"]), tr(["O2"]), tr(["O1", "O2"])
            maps.append(lambda m, r1=r1, r2=r2, r12=r12: m - r1(m) - r2(m) + r12(m))
    return maps


def _dedup_rows(M: np.ndarray) -> sps.csr_matrix:
    """Keep a maximal independent subset of the original (sparse) rows.

    Pivoted QR selects rows instead of mixing them; an SVD basis would densify
    the system and chokes interior-point backends at k = 2.
    """
    _, r, piv = scipy.linalg.qr(M.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(r))
    rank = int((diag > RANK_TOL * max(diag.max(), 1.0)).sum())
    keep = np.sort(piv[:rank])
    rows = sps.csr_matrix(M[keep])
    rows.eliminate_zeros()
    return rows


def trace_rhs(lay: Layout) -> float:
    return float(prod(d for lab, d in lay.factors if lab.startswith("O")))


def class_constraints(strategy: StrategyClass, lay: Layout) -> AffineConstraints:
    key = (strategy.name, strategy.k, lay.dims)
    if key not in _ROWS_CACHE:
        D = lay.total_dim
        blocks = []
        for fun in _equality_maps(strategy, lay):
            blocks.append(linear_map_matrix(fun, D))
        M = np.vstack(blocks)
        _ROWS_CACHE[key] = AffineConstraints(_dedup_rows(M), trace_rhs(lay))
    return _ROWS_CACHE[key]


def constraints_parallel(k: int, lay: Layout) -> AffineConstraints:
    return class_constraints(parallel(k), lay)


def constraints_sequential(k: int, lay: Layout) -> AffineConstraints:
    return class_constraints(sequential(k), lay)


def constraints_general_k2(lay: Layout) -> AffineConstraints:
    return class_constraints(general(2), lay)


def _herm_encode(M: np.ndarray) -> np.ndarray:
    """Coordinates of a Hermitian matrix in a real orthonormal basis."""
    D = M.shape[0]
    iu = np.triu_indices(D, 1)
    return np.concatenate(
        [
            np.real(np.diag(M)),
            np.sqrt(2.0) * np.real(M[iu]),
            np.sqrt(2.0) * np.imag(M[iu]),
        ]
    )


def _herm_decode(v: np.ndarray, D: int) -> np.ndarray:
    iu = np.triu_indices(D, 1)
    n_off = iu[0].size
    M = np.zeros((D, D), dtype=complex)
    M[np.diag_indices(D)] = v[:D]
    M[iu] = (v[D : D + n_off] + 1j * v[D + n_off :]) / np.sqrt(2.0)
    return M + np.triu(M, 1).conj().T


def affine_projector(strategy: StrategyClass, lay: Layout):
    """Feasible point x0 and orthonormal null-space basis Q of the class's
    affine set, in the real Hermitian parametrization.

    The projection of any Hermitian W is decode(x0 + Q Q^T (encode(W) - x0)).
    """
    key = (strategy.name, strategy.k, lay.dims)
    if key not in _PROJ_CACHE:
        D = lay.total_dim
        n = D * D
        maps = _equality_maps(strategy, lay)
        A = np.empty((len(maps) * n + 1, n))
        for j in range(n):
            ej = np.zeros(n)
            ej[j] = 1.0
            Mj = _herm_decode(ej, D)
            for mi, fun in enumerate(maps):
                A[mi * n : (mi + 1) * n, j] = _herm_encode(fun(Mj))
        A[-1] = _herm_encode(np.eye(D))
        _, s, vt = np.linalg.svd(A, full_matrices=True)
        rank = int((s > RANK_TOL * s[0]).sum())
        Q = vt[rank:].T
        x0 = _herm_encode(np.eye(D) * (trace_rhs(lay) / D))
        _PROJ_CACHE[key] = (x0, Q)
    return _PROJ_CACHE[key]


def polish_testers(testers: TesterSet) -> TesterSet:
    """Restore the affine class equalities exactly after a noisy solve.

    The total W is projected onto the affine feasible set and the correction
    is split evenly over the elements; PSD stays within solver tolerance while
    probability normalization becomes exact.
    """
    lay = testers.layout
    x0, Q = affine_projector(testers.strategy, lay)
    x = _herm_encode(testers.total().mat)
    shift = (x0 - x) + Q @ (Q.T @ (x - x0))
    delta = _herm_decode(shift, lay.total_dim) / testers.n_outcomes
    elements = tuple(Op(lay, T.mat + delta) for T in testers.elements)
    return TesterSet(elements, testers.strategy)


def class_residual(W: Op, strategy: StrategyClass) -> float:
    """Largest violation of the class equalities plus trace normalization."""
    cons = class_constraints(strategy, W.layout)
    res = np.abs(cons.rows @ W.mat.reshape(-1)).max() if cons.rows.shape[0] else 0.0
    return float(max(res, abs(W.trace() - cons.trace_rhs)))


def build_objective(
    h: HypothesisSet, kernel: CostKernel, estimators: EstimatorSet
) -> np.ndarray:
    """Per-outcome coefficient operators C_i = sum_j p_j c(theta_j, est_i) J_j."""
    h.require_cache()
    C = cost_matrix(kernel, h, estimators)  # (N_H, N_O)
    D = h.layout.total_dim
    coeff = h.weights[:, None] * C  # (N_H, N_O)
    mats = np.einsum("ji,jd->id", coeff, h.choi_vecs, optimize=True)
    return mats.reshape(len(estimators), D, D)


def _pick_solver(solver: str, D: int) -> str:
    if solver != "auto":
        return solver.upper()
    # interior point is precise and quick on small blocks; first-order ADMM
    # scales to the 16-dim two-copy problems where it is 50x faster
    return "CLARABEL" if D <= 8 else "SCS"


def _get_problem(strategy: StrategyClass, lay: Layout, n_out: int, direction: str):
    key = (strategy.name, strategy.k, lay.dims, n_out, direction)
    if key in _PROBLEM_CACHE:
        return _PROBLEM_CACHE[key]
    D = lay.total_dim
    cons_data = class_constraints(strategy, lay)
    Ts = [cp.Variable((D, D), hermitian=True, name=f"T{i}") for i in range(n_out)]
    Cs = [cp.Parameter((D, D), hermitian=True, name=f"C{i}") for i in range(n_out)]
    W = sum(Ts)
    constraints = [T >> 0 for T in Ts]
    if cons_data.rows.shape[0]:
        constraints.append(cons_data.rows @ cp.reshape(W, (D * D,), order="C") == 0)
    constraints.append(cp.real(cp.trace(W)) == cons_data.trace_rhs)
    score = cp.real(sum(cp.trace(C @ T) for C, T in zip(Cs, Ts)))
    objective = cp.Maximize(score) if direction == "max" else cp.Minimize(score)
    prob = cp.Problem(objective, constraints)
    _PROBLEM_CACHE[key] = (prob, Ts, Cs)
    return _PROBLEM_CACHE[key]


def solve_testers(
    strategy: StrategyClass,
    lay: Layout,
    objective_ops: np.ndarray,
    direction: str = "max",
    tol: float = 1e-8,
    solver: str = "auto",
    verbose: bool = False,
    polish: bool = True,
) -> tuple[TesterSet, SdpSolution]:
    """Solve for the optimal testers at fixed estimators.

    objective_ops: (N_O, D, D) stack of coefficient operators.  With polish
    the affine class equalities are restored exactly after the solve.
    """
    n_out = len(objective_ops)
    D = lay.total_dim
    chosen = _pick_solver(solver, D)
    if chosen.endswith("-REAL"):
        testers, sol = _solve_real_embedded(
            strategy, lay, objective_ops, direction, tol, chosen[:-5]
        )
        return (polish_testers(testers) if polish else testers), sol
    prob, Ts, Cs = _get_problem(strategy, lay, n_out, direction)
    for C, mat in zip(Cs, objective_ops):
        C.value = (mat + mat.conj().T) / 2
    kwargs: dict = {"verbose": verbose}
    if chosen == "SCS":
        kwargs.update(eps=max(tol, 1e-9), warm_start=True, max_iters=200_000)
    elif chosen == "CLARABEL":
        kwargs.update(tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol)
    t0 = time.time()
    prob.solve(solver=chosen, **kwargs)
    dt = time.time() - t0
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"tester SDP failed: status={prob.status} solver={chosen}")
    elements = tuple(Op(lay, (T.value + T.value.conj().T) / 2) for T in Ts)
    sol = SdpSolution(float(prob.value), prob.status, chosen, dt)
    testers = TesterSet(elements, strategy)
    return (polish_testers(testers) if polish else testers), sol


def _solve_real_embedded(
    strategy: StrategyClass,
    lay: Layout,
    objective_ops: np.ndarray,
    direction: str,
    tol: float,
    backend: str,
) -> tuple[TesterSet, SdpSolution]:
    """Second route: explicit [[Re, -Im], [Im, Re]] symmetric embedding."""
    n_out = len(objective_ops)
    D = lay.total_dim
    cons_data = class_constraints(strategy, lay)
    As = [cp.Variable((D, D), symmetric=True) for _ in range(n_out)]
    Bs = [cp.Variable((D, D)) for _ in range(n_out)]
    constraints = []
    for A, B in zip(As, Bs):
        constraints.append(B == -B.T)
        constraints.append(cp.bmat([[A, -B], [B, A]]) >> 0)
    Wa = sum(As)
    Wb = sum(Bs)
    if cons_data.rows.shape[0]:
        constraints.append(cons_data.rows @ cp.reshape(Wa, (D * D,), order="C") == 0)
        constraints.append(cons_data.rows @ cp.reshape(Wb, (D * D,), order="C") == 0)
    constraints.append(cp.trace(Wa) == cons_data.trace_rhs)
    terms = []
    for (A, B), C in zip(zip(As, Bs), objective_ops):
        terms.append(cp.trace(C.real @ A) - cp.trace(C.imag @ B))
    score = sum(terms)
    objective = cp.Maximize(score) if direction == "max" else cp.Minimize(score)
    prob = cp.Problem(objective, constraints)
    kwargs: dict = {}
    if backend.upper() == "SCS":
        kwargs.update(eps=max(tol, 1e-9), max_iters=200_000)
    elif backend.upper() == "CLARABEL":
        kwargs.update(tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol)
    t0 = time.time()
    prob.solve(solver=backend.upper(), **kwargs)
    dt = time.time() - t0
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"embedded tester SDP failed: status={prob.status}")
    elements = []
    for A, B in zip(As, Bs):
        T = A.value + 1j * B.value
        elements.append(Op(lay, (T + T.conj().T) / 2))
    sol = SdpSolution(float(prob.value), prob.status, f"{backend.lower()}-real", dt)
    return TesterSet(tuple(elements), strategy), sol


def probability_normalization_residual(testers: TesterSet, h: HypothesisSet) -> float:
    """max_j |sum_i Tr(T_i J_j) - 1|; zero for any feasible strategy."""
    from .priors import likelihood_matrix

    P = likelihood_matrix(h, testers.elements)
    return float(np.abs(P.sum(axis=0) - 1.0).max())


def dump_problem(path: str, strategy: StrategyClass, lay: Layout, objective_ops: np.ndarray) -> None:
    """Plain-text sparse-triplet dump for cross-solver debugging.

    Format: header lines starting with '#', then one line per nonzero:
      'eq row col value' for equality rows on vec(W),
      'obj i row col re im' for objective coefficient entries.
    """
    cons_data = class_constraints(strategy, lay)
    coo = cons_data.rows.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# tester SDP dump: class={strategy.name} k={strategy.k} dims={lay.dims}\n")
        fh.write(f"# trace_rhs {cons_data.trace_rhs}\n")
        fh.write(f"# n_outcomes {len(objective_ops)}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"eq {r} {c} {v!r}\n")
        for i, C in enumerate(objective_ops):
            rr, cc = np.nonzero(np.abs(C) > 0)
            for r, c in zip(rr, cc):
                fh.write(f"obj {i} {r} {c} {C[r, c].real!r} {C[r, c].imag!r}\n")
