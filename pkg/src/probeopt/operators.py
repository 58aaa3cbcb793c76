"""Dense complex-Hermitian operator algebra on labeled tensor-product spaces.

Operators carry an explicit factor layout (ordered (label, dim) pairs) so that
partial traces, partial transposes, and trace-and-replace maps can be addressed
by label instead of by axis bookkeeping at every call site.  Factor order is
canonical for multi-slot objects: I1, O1, I2, O2, ... with aux labels appended
where needed.  All operators are immutable after construction and every
operation is a pure function.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import prod
from typing import Iterable, Sequence

import numpy as np

# Hermiticity drift above this relative level triggers a warning before
# symmetrization; an order 1e-6 drift is treated as a caller bug.
HERM_WARN = 1e-10
HERM_ERROR = 1e-6


@dataclass(frozen=True)
class Layout:
    """Ordered tensor factors (label, dim); labels unique, dims positive."""

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        labels = [lab for lab, _ in self.factors]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in layout: {labels}")
        if any(d <= 0 for _, d in self.factors):
            raise ValueError("factor dimensions must be positive")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.factors)

    @property
    def total_dim(self) -> int:
        return prod(self.dims)

    def axis(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r}; layout has {self.labels}") from None

    def dim(self, label: str) -> int:
        return self.factors[self.axis(label)][1]

    def check_subset(self, labels: Iterable[str]) -> tuple[str, ...]:
        labels = tuple(labels)
        for lab in labels:
            self.axis(lab)
        return labels

    def without(self, labels: Iterable[str]) -> "Layout":
        drop = set(self.check_subset(labels))
        return Layout(tuple(f for f in self.factors if f[0] not in drop))


def layout(*factors: tuple[str, int]) -> Layout:
    return Layout(tuple(factors))


@dataclass(frozen=True)
class Op:
    """Hermitian operator paired with its factor layout.

    Construction symmetrizes (A + A^dag)/2 and warns if the drift from
    Hermiticity exceeds HERM_WARN relative to the largest entry.
    """

    layout: Layout
    mat: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        a = np.asarray(self.mat, dtype=complex)
        D = self.layout.total_dim
        if a.shape != (D, D):
            raise ValueError(f"matrix shape {a.shape} does not match layout dim {D}")
        scale = max(np.abs(a).max(), 1e-300)
        drift = np.abs(a - a.conj().T).max()
        if drift > HERM_ERROR * scale:
            raise ValueError(f"matrix is not Hermitian (relative drift {drift / scale:.2e})")
        if drift > HERM_WARN * scale:
            warnings.warn(f"Hermiticity drift {drift / scale:.2e} symmetrized away", stacklevel=3)
        a = (a + a.conj().T) / 2
        a.setflags(write=False)
        object.__setattr__(self, "mat", a)

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def trace(self) -> float:
        return float(np.trace(self.mat).real)

    def relabel(self, mapping: dict[str, str]) -> "Op":
        """Rename factors (layout only; entries untouched)."""
        factors = tuple((mapping.get(lab, lab), d) for lab, d in self.layout.factors)
        return Op(Layout(factors), self.mat)


def _as_tensor(a: Op) -> np.ndarray:
    """Reshape to 2n axes: row indices first, then column indices."""
    dims = a.layout.dims
    return a.mat.reshape(dims + dims)


def _from_tensor(t: np.ndarray, lay: Layout) -> np.ndarray:
    D = lay.total_dim
    return t.reshape(D, D)


def identity(lay: Layout) -> Op:
    return Op(lay, np.eye(lay.total_dim, dtype=complex))


def kron(a: Op, b: Op) -> Op:
    """Tensor product; layouts concatenate, labels must not collide."""
    overlap = set(a.layout.labels) & set(b.layout.labels)
    if overlap:
        raise ValueError(f"label collision in kron: {sorted(overlap)}")
    lay = Layout(a.layout.factors + b.layout.factors)
    return Op(lay, np.kron(a.mat, b.mat))


def kron_all(ops: Sequence[Op]) -> Op:
    out = ops[0]
    for op in ops[1:]:
        out = kron(out, op)
    return out


def partial_trace(a: Op, labels: Iterable[str]) -> Op:
    labels = a.layout.check_subset(labels)
    if not labels:
        return a
    mat = _partial_trace_mat(a.mat, a.layout.dims, [a.layout.axis(l) for l in labels])
    new_lay = a.layout.without(labels)
    if not new_lay.factors:
        # scalar result kept as a 1x1 operator on a trivial factor
        new_lay = Layout((("scalar", 1),))
        mat = mat.reshape(1, 1)
    return Op(new_lay, mat)


def _partial_trace_mat(mat: np.ndarray, dims: Sequence[int], axes: Sequence[int]) -> np.ndarray:
    n = len(dims)
    t = mat.reshape(tuple(dims) * 2)
    for ax in sorted(axes, reverse=True):
        t = np.trace(t, axis1=ax, axis2=ax + n)
        n -= 1
    keep = [d for i, d in enumerate(dims) if i not in set(axes)]
    D = prod(keep) if keep else 1
    return t.reshape(D, D)


def partial_transpose(a: Op, labels: Iterable[str]) -> Op:
    labels = a.layout.check_subset(labels)
    n = len(a.layout.dims)
    t = _as_tensor(a)
    perm = list(range(2 * n))
    for lab in labels:
        ax = a.layout.axis(lab)
        perm[ax], perm[ax + n] = perm[ax + n], perm[ax]
    return Op(a.layout, _from_tensor(np.transpose(t, perm), a.layout))


def trace_and_replace(a: Op, labels: Iterable[str]) -> Op:
    """Trace out the named factors and reinsert maximally mixed states there.

    Factor order is restored to the input order, so callers never permute.
    Self-adjoint idempotent projector; preserves the trace.
    """
    labels = a.layout.check_subset(labels)
    if not labels:
        return a
    mat = _trace_and_replace_mat(a.mat, a.layout.dims, [a.layout.axis(l) for l in labels])
    return Op(a.layout, mat)


def _trace_and_replace_mat(mat: np.ndarray, dims: Sequence[int], axes: Sequence[int]) -> np.ndarray:
    """Raw-array trace-and-replace used by the SDP constraint builders."""
    dims = tuple(dims)
    n = len(dims)
    axset = sorted(set(axes))
    t = mat.reshape(dims * 2)
    m = n
    for ax in sorted(axset, reverse=True):
        t = np.trace(t, axis1=ax, axis2=ax + m)
        m -= 1
    d_rep = prod(dims[ax] for ax in axset)
    keep = [i for i in range(n) if i not in axset]
    # reattach identity factors at the end, then permute axes back home
    t = np.multiply.outer(t, np.eye(d_rep).reshape([dims[ax] for ax in axset] * 2) / d_rep)
    # current axis order: keep-rows, keep-cols, rep-rows, rep-cols
    kn = len(keep)
    src_row = {}
    src_col = {}
    for pos, i in enumerate(keep):
        src_row[i] = pos
        src_col[i] = pos + kn
    for pos, i in enumerate(axset):
        src_row[i] = 2 * kn + pos
        src_col[i] = 2 * kn + len(axset) + pos
    perm = [src_row[i] for i in range(n)] + [src_col[i] for i in range(n)]
    return np.transpose(t, perm).reshape(mat.shape)


def permute_factors(a: Op, new_labels: Sequence[str]) -> Op:
    """Reorder factors to the given label order (same label set)."""
    if set(new_labels) != set(a.layout.labels) or len(new_labels) != len(a.layout.labels):
        raise ValueError(f"permutation {new_labels} does not match layout {a.layout.labels}")
    n = len(a.layout.dims)
    order = [a.layout.axis(l) for l in new_labels]
    t = _as_tensor(a)
    t = np.transpose(t, order + [ax + n for ax in order])
    new_lay = Layout(tuple(a.layout.factors[i] for i in order))
    return Op(new_lay, _from_tensor(t, new_lay))


def split_factor(a: Op, label: str, parts: Sequence[tuple[str, int]]) -> Op:
    """Reinterpret one factor as a tensor product of finer factors.

    Pure relabeling: the dims of parts must multiply to the original dim and
    the index convention is row-major (first part varies slowest), matching
    kron ordering.
    """
    ax = a.layout.axis(label)
    if prod(d for _, d in parts) != a.layout.dims[ax]:
        raise ValueError("split dims do not multiply to the factor dim")
    factors = a.layout.factors[:ax] + tuple(parts) + a.layout.factors[ax + 1 :]
    return Op(Layout(factors), a.mat)


def merge_factors(a: Op, labels: Sequence[str], new_label: str) -> Op:
    """Fuse adjacent factors (in layout order) into one; inverse of split."""
    axes = [a.layout.axis(lab) for lab in labels]
    if axes != list(range(axes[0], axes[0] + len(axes))):
        raise ValueError("factors to merge must be adjacent and in order")
    d = prod(a.layout.dims[ax] for ax in axes)
    factors = (
        a.layout.factors[: axes[0]] + ((new_label, d),) + a.layout.factors[axes[-1] + 1 :]
    )
    return Op(Layout(factors), a.mat)


def max_entangled(label_a: str, label_b: str, d: int, normalized: bool = False) -> Op:
    """Unnormalized maximally entangled projector sum_ij |ii><jj| (or /d)."""
    v = np.eye(d, dtype=complex).reshape(-1)
    m = np.outer(v, v)
    if normalized:
        m = m / d
    return Op(layout((label_a, d), (label_b, d)), m)


def choi_from_kraus(
    kraus: Sequence[np.ndarray],
    in_label: str = "I",
    out_label: str = "O",
    atol: float = 1e-10,
) -> Op:
    """Choi operator on (input, output) from Kraus matrices (each d_out x d_in).

    Built as sum_K vec(K) vec(K)^dag with vec stacking the columns of K, so the
    input factor comes first and Tr_out J = 1_in (trace preservation).
    """
    kraus = [np.asarray(K, dtype=complex) for K in kraus]
    d_out, d_in = kraus[0].shape
    if any(K.shape != (d_out, d_in) for K in kraus):
        raise ValueError("Kraus matrices must share one shape")
    comp = sum(K.conj().T @ K for K in kraus)
    if np.abs(comp - np.eye(d_in)).max() > atol:
        raise ValueError(f"Kraus completeness violated by {np.abs(comp - np.eye(d_in)).max():.2e}")
    vs = np.stack([K.T.reshape(-1) for K in kraus])
    J = vs.T @ vs.conj()
    return Op(layout((in_label, d_in), (out_label, d_out)), J)


def link_product(a: Op, b: Op) -> Op:
    """Link product contracting over the labels shared by a and b.

    Result lives on (a-only labels, b-only labels) in that order.  With a a
    state on I and b a Choi on (I, O) this is the channel output; chaining
    Chois over an intermediate label composes the channels.
    """
    shared = [lab for lab in a.layout.labels if lab in set(b.layout.labels)]
    if not shared:
        return kron(a, b)
    for lab in shared:
        if a.layout.dim(lab) != b.layout.dim(lab):
            raise ValueError(f"shared label {lab!r} has mismatched dims")
    a_only = [lab for lab in a.layout.labels if lab not in shared]
    b_only = [lab for lab in b.layout.labels if lab not in shared]
    ap = permute_factors(a, a_only + shared) if a_only + shared != list(a.layout.labels) else a
    bp = permute_factors(b, shared + b_only) if shared + b_only != list(b.layout.labels) else b
    na, ns = len(a_only), len(shared)
    da = prod(ap.layout.dims[:na]) if na else 1
    ds = prod(ap.layout.dims[na:])
    db = prod(bp.layout.dims[ns:]) if b_only else 1
    At = ap.mat.reshape(da, ds, da, ds)
    Bt = bp.mat.reshape(ds, db, ds, db)
    # (A star B)[(x,y),(x',y')] = sum_{u,v} A[(x,u),(x',v)] B[(u,y),(v,y')]
    # (the partial transpose over the shared slot is absorbed in the pairing)
    out = np.einsum("xuXv,uyvY->xyXY", At, Bt, optimize=True)
    factors = tuple((lab, a.layout.dim(lab)) for lab in a_only) + tuple(
        (lab, b.layout.dim(lab)) for lab in b_only
    )
    if not factors:
        factors = (("scalar", 1),)
    lay = Layout(factors)
    return Op(lay, out.reshape(lay.total_dim, lay.total_dim))


def frobenius_inner(a: Op, b: Op) -> complex:
    """Tr(A^dag B) on identical layouts."""
    if a.layout != b.layout:
        raise ValueError("layout mismatch in inner product")
    return complex(np.vdot(a.mat, b.mat))


def linear_map_matrix(fun, D: int) -> np.ndarray:
    """Matrix of a linear map on vec'd (row-major) D x D operators.

    Applies fun to every matrix unit; used to turn trace-and-replace
    differences into explicit constraint rows.
    """
    M = np.zeros((D * D, D * D))
    E = np.zeros((D, D))
    for r in range(D):
        for c in range(D):
            E[r, c] = 1.0
            M[:, r * D + c] = fun(E).reshape(-1)
            E[r, c] = 0.0
    return M
