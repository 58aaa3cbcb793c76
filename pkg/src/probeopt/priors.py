"""Prior discretizations: weighted hypothesis sets with cached channel powers.

A HypothesisSet holds sample points theta_j with normalized weights p_j plus,
once a channel model is attached, the vectorized k-copy Choi operators used
for outcome probabilities and (for rotation-type models) the quaternion of
each point's unitary as the cost reference.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .channels import ChannelModel, quaternion_of
from .operators import Layout, Op

WEIGHT_ATOL = 1e-12


def copies_layout(in_dim: int, out_dim: int, k: int) -> Layout:
    factors = []
    for c in range(1, k + 1):
        factors.append((f"I{c}", in_dim))
        factors.append((f"O{c}", out_dim))
    return Layout(tuple(factors))


@dataclass(frozen=True)
class HypothesisSet:
    """Discretized prior; immutable snapshot (updates return new values)."""

    points: np.ndarray  # (N, q)
    weights: np.ndarray  # (N,) nonnegative, sums to 1
    sampling_mode: str = "grid"
    domain_kind: str = "none"  # ball | box | none
    bounds: Optional[tuple[float, float]] = None
    model: Optional[ChannelModel] = None
    k: int = 0
    layout: Optional[Layout] = None
    choi_vecs: Optional[np.ndarray] = None  # (N, D^2) vec'd k-copy Chois
    quaternions: Optional[np.ndarray] = None  # (N, 4) unitary cost reference

    def __post_init__(self) -> None:
        # copy so read-only flags never leak onto caller arrays
        pts = np.atleast_2d(np.array(self.points, dtype=float, copy=True))
        w = np.array(self.weights, dtype=float, copy=True)
        if w.ndim != 1 or len(w) != len(pts):
            raise ValueError("weights must be one per point")
        if w.min() < -WEIGHT_ATOL:
            raise ValueError(f"negative weight {w.min():.3e}")
        s = w.sum()
        if abs(s - 1.0) > WEIGHT_ATOL:
            raise ValueError(f"weights sum to {s!r}, expected 1")
        w = np.clip(w, 0.0, None)
        w = w / w.sum()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)

    def require_cache(self, k: Optional[int] = None) -> None:
        if self.choi_vecs is None:
            raise ValueError("hypothesis set has no channel cache; call with_channel first")
        if k is not None and self.k != k:
            raise ValueError(f"cache built for k={self.k}, requested k={k}")


def _normalized(raw: np.ndarray) -> np.ndarray:
    return raw / raw.sum()


def fibonacci_sphere(n: int) -> np.ndarray:
    """n roughly uniform unit vectors on the 2-sphere."""
    i = np.arange(n)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - (2.0 * i + 1.0) / n
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def haar_density_su2(theta: np.ndarray) -> float:
    """Group-invariant density in exponential coordinates on the ball r < pi."""
    r = np.linalg.norm(theta)
    return float(np.sinc(r / np.pi) ** 2 / (2 * np.pi**2))


def haar_prior_su2(n_points: int, mode: str = "grid", seed: Optional[int] = None) -> HypothesisSet:
    """Group-invariant prior over rotations, discretized on the r < pi ball.

    grid: radial shells (uniform in r) times a Fibonacci direction set, with
    weights proportional to density times cell volume, i.e. sin^2(r).
    importance: points drawn from the exact density (uniform unit 4-vectors
    mapped back to exponential coordinates), uniform weights.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if n_points == 1:
        return HypothesisSet(np.zeros((1, 3)), np.ones(1), mode, "ball", (0.0, np.pi))
    if mode == "grid":
        # shells x directions; never fewer points than requested
        n_r = max(1, round(np.sqrt(n_points / 5.0)))
        n_dir = max(1, -(-n_points // n_r))
        radii = (np.arange(n_r) + 0.5) * np.pi / n_r
        dirs = fibonacci_sphere(n_dir)
        pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
        w = np.repeat(np.sin(radii) ** 2, n_dir)
        return HypothesisSet(pts, _normalized(w), "grid", "ball", (0.0, np.pi))
    if mode == "importance":
        rng = np.random.default_rng(seed)
        q = rng.normal(size=(n_points, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        r = np.arccos(np.clip(q[:, 0], -1.0, 1.0))
        vec_norm = np.linalg.norm(q[:, 1:], axis=1)
        dirs = np.where(vec_norm[:, None] > 1e-12, q[:, 1:] / np.maximum(vec_norm, 1e-300)[:, None], [[0.0, 0.0, 1.0]])
        r = np.minimum(r, np.pi * (1 - 1e-12))
        pts = r[:, None] * dirs
        w = np.full(n_points, 1.0 / n_points)
        return HypothesisSet(pts, w, "importance", "ball", (0.0, np.pi))
    raise ValueError(f"unknown sampling mode {mode!r}")


def uniform_prior(lo: float, hi: float, n_points: int) -> HypothesisSet:
    if hi <= lo:
        raise ValueError("hi must exceed lo")
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    pts = np.linspace(lo, hi, n_points)[:, None]
    w = np.full(n_points, 1.0 / n_points)
    return HypothesisSet(pts, w, "grid", "box", (lo, hi))


def sine_exp_prior(alpha: float, theta_min: float, theta_max: float, n_points: int) -> HypothesisSet:
    """Grid prior with density proportional to exp(alpha sin^2(pi u)) - 1.

    u is the position rescaled to [0, 1].  alpha > 0 concentrates mass at the
    midpoint, alpha < 0 approaches a uniform density; alpha = 0 vanishes
    identically and is rejected.
    """
    if theta_max <= theta_min:
        raise ValueError("theta_max must exceed theta_min")
    if alpha == 0:
        raise ValueError("alpha = 0 gives an identically zero density")
    pts = np.linspace(theta_min, theta_max, n_points)
    u = (pts - theta_min) / (theta_max - theta_min)
    expo = alpha * np.sin(np.pi * u) ** 2
    shift = max(expo.max(), 0.0)  # overflow guard; normalization removes it
    w = np.exp(expo - shift) - np.exp(-shift)
    return HypothesisSet(pts[:, None], _normalized(w), "grid", "box", (theta_min, theta_max))


def sine_exp_density(alpha: float, theta_min: float, theta_max: float):
    """Unnormalized density closure matching sine_exp_prior (for quadrature)."""

    def dens(theta: np.ndarray) -> np.ndarray:
        u = (np.asarray(theta) - theta_min) / (theta_max - theta_min)
        return np.exp(alpha * np.sin(np.pi * u) ** 2) - 1.0

    return dens


def with_channel(h: HypothesisSet, model: ChannelModel, k: int) -> HypothesisSet:
    """Attach the k-copy Choi cache (and quaternions for rotation models)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    lay = copies_layout(model.in_dim, model.out_dim, k)
    D = lay.total_dim
    vecs = np.empty((len(h), D * D), dtype=complex)
    for j, th in enumerate(h.points):
        J = model.choi(th).mat
        Jk = J
        for _ in range(k - 1):
            Jk = np.kron(Jk, J)
        vecs[j] = Jk.reshape(-1)
    vecs.setflags(write=False)
    quats = None
    if model.param_dim == 3:
        quats = np.array([quaternion_of(th) for th in h.points])
        quats.setflags(write=False)
    return replace(h, model=model, k=k, layout=lay, choi_vecs=vecs, quaternions=quats)


def outcome_likelihood(h: HypothesisSet, element: Op | np.ndarray) -> np.ndarray:
    """p(outcome | theta_j) = Tr(T J_j^{(x)k}) for one tester element."""
    h.require_cache()
    mat = element.mat if isinstance(element, Op) else np.asarray(element)
    like = np.real(h.choi_vecs @ mat.conj().reshape(-1))
    # solver noise can leave tiny negative probabilities
    return np.clip(like, 0.0, None)


def likelihood_matrix(h: HypothesisSet, elements) -> np.ndarray:
    """P[i, j] = Tr(T_i J_j^{(x)k}) for a list of tester elements."""
    h.require_cache()
    tvecs = np.stack([e.mat.reshape(-1) for e in elements])
    like = np.real(tvecs.conj() @ h.choi_vecs.T)
    return np.clip(like, 0.0, None)


def reweight(h: HypothesisSet, likelihood: np.ndarray) -> HypothesisSet:
    raw = h.weights * likelihood
    norm = raw.sum()
    if norm <= 1e-300:
        raise ValueError("outcome has zero likelihood under every hypothesis")
    return replace(h, weights=raw / norm)


def posterior_update(h: HypothesisSet, tester, outcome: int, m: int) -> HypothesisSet:
    """Bayes update after observing `outcome` from a tester on m copies."""
    h.require_cache(k=m)
    return reweight(h, outcome_likelihood(h, tester.elements[outcome]))


def effective_sample_size(h: HypothesisSet) -> float:
    return float(1.0 / np.sum(h.weights**2))


def resample(
    h: HypothesisSet,
    ess_threshold: float = 0.5,
    seed: Optional[int] = None,
    jitter_scale: float = 0.1,
) -> HypothesisSet:
    """Systematic resampling with jitter when the ESS drops below threshold*N.

    Jitter is Gaussian with bandwidth jitter_scale times the posterior standard
    deviation per coordinate, clipped back into the domain.  Rebuilds the
    channel cache when one was attached (points move).
    """
    if not 0 < ess_threshold <= 1:
        raise ValueError("ess_threshold must be in (0, 1]")
    n = len(h)
    if effective_sample_size(h) >= ess_threshold * n:
        return h
    rng = np.random.default_rng(seed)
    # systematic resampling: one uniform offset, stratified cumulative picks
    positions = (rng.uniform() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(h.weights), positions)
    idx = np.clip(idx, 0, n - 1)
    pts = h.points[idx].copy()
    mean = h.weights @ h.points
    var = h.weights @ (h.points - mean) ** 2
    std = np.sqrt(np.maximum(var, 0.0))
    pts += rng.normal(size=pts.shape) * (jitter_scale * std)[None, :]
    if h.domain_kind == "ball":
        r = np.linalg.norm(pts, axis=1)
        cap = np.pi * (1 - 1e-9)
        over = r > cap
        pts[over] *= (cap / r[over])[:, None]
    elif h.domain_kind == "box" and h.bounds is not None:
        lo, hi = h.bounds
        pts = np.clip(pts, lo, hi)
    out = replace(
        h,
        points=pts,
        weights=np.full(n, 1.0 / n),
        model=None,
        k=0,
        layout=None,
        choi_vecs=None,
        quaternions=None,
    )
    if h.model is not None:
        out = with_channel(out, h.model, h.k)
    return out
