"""Monte Carlo engine for adaptive (and non-adaptive) batched strategies.

Each trajectory samples a true parameter from the prior, then runs rounds of:
optimize a batch strategy on the current posterior (adaptive) or keep the
round-1 testers and refresh only the estimators (non-adaptive), simulate the
measurement outcome under the true parameter, record the round's cost, and
update the posterior.  Scores are averaged over trajectories per round.

Re-optimizations are memoized on a digest of the posterior, so trajectories
that share a posterior (always true in round 1, and common afterwards for
moderate outcome counts) reuse one seesaw solve.  Per-trajectory RNG streams
make results independent of execution order.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .costs import evaluate_cost, update_all_estimators
from .priors import (
    HypothesisSet,
    effective_sample_size,
    posterior_update,
    resample,
)
from .sdp import TesterSet
from .seesaw import SeesawConfig, SeesawProblem, SeesawResult, run_seesaw

# negative-probability window treated as solver noise: PSD slack of conic
# solvers at the default 1e-8 tolerance is ~1e-8, so the floor sits at 10x
# that; anything lower signals a broken tester rather than roundoff
PROB_CLIP = -1e-7
PROB_TOTAL_TOL = 1e-6
KEY_QUANTUM = 1e-12


@dataclass(frozen=True)
class GreedyConfig:
    n_traj: int
    rounds: int
    batch: int = 1
    adaptive: bool = True
    seed: int = 0
    n_outcomes: Optional[int] = None
    # inner seesaw settings; warm-started posterior solves use warm_restarts
    inner_epsilon: float = 1e-5
    inner_max_iters: int = 20
    inner_restarts: int = 3
    warm_restarts: int = 1
    tol: float = 1e-8
    solver: str = "auto"
    # particle-filter maintenance; threshold 0 disables resampling
    resample_threshold: float = 0.0
    jitter_scale: float = 0.1
    verbose: bool = False

    def __post_init__(self) -> None:
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


@dataclass
class GreedyReport:
    mean: np.ndarray  # (rounds,) score average over completed trajectories
    stderr: np.ndarray  # (rounds,) sample std / sqrt(n_valid)
    n_traj: int
    n_valid: int
    n_aborted: int
    config: dict
    cache_hits: int
    cache_misses: int

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])

    @property
    def final_stderr(self) -> float:
        return float(self.stderr[-1])

    def to_json(self, path: str) -> None:
        payload = {
            "mean": self.mean.tolist(),
            "stderr": self.stderr.tolist(),
            "n_traj": self.n_traj,
            "n_valid": self.n_valid,
            "n_aborted": self.n_aborted,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "config": self.config,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "mean", "stderr"])
            for i, (m, s) in enumerate(zip(self.mean, self.stderr), start=1):
                writer.writerow([i, repr(float(m)), repr(float(s))])


def posterior_cache_key(h: HypothesisSet) -> str:
    """Stable digest of the posterior (weights and points quantized at 1e-12).

    Points are included because resampling can move them while leaving the
    weights uniform; weight-only digests would alias such posteriors.
    """
    digest = hashlib.sha256()
    digest.update(np.round(h.weights / KEY_QUANTUM).astype(np.int64).tobytes())
    digest.update(np.round(h.points / KEY_QUANTUM).astype(np.int64).tobytes())
    digest.update(str(h.k).encode())
    return digest.hexdigest()


def simulate_outcome(
    testers: TesterSet, choi_vec: np.ndarray, rng: np.random.Generator
) -> int:
    """Draw an outcome from p(i) = Tr(T_i J_true); guards solver noise."""
    tvecs = np.stack([T.mat.conj().reshape(-1) for T in testers.elements])
    p = np.real(tvecs @ choi_vec)
    if p.min() < PROB_CLIP:
        raise RuntimeError(f"outcome probability {p.min():.3e} below noise floor")
    total = p.sum()
    if abs(total - 1.0) > PROB_TOTAL_TOL:
        raise RuntimeError(f"outcome probabilities sum to {total!r}")
    p = np.clip(p, 0.0, None)
    return int(rng.choice(len(p), p=p / p.sum()))


def _inner_config(cfg: GreedyConfig, warm: bool, seed: int) -> SeesawConfig:
    return SeesawConfig(
        epsilon=cfg.inner_epsilon,
        max_iters=cfg.inner_max_iters,
        n_restarts=cfg.warm_restarts if warm else cfg.inner_restarts,
        seed=seed,
        n_outcomes=cfg.n_outcomes,
        tol=cfg.tol,
        solver=cfg.solver,
    )


def run_greedy(
    problem: SeesawProblem,
    cfg: GreedyConfig,
    cache: Optional[dict] = None,
) -> GreedyReport:
    """Trajectory-averaged per-round scores for the batched greedy strategy.

    `cache` may be shared between runs (e.g. adaptive vs non-adaptive with
    the same seed) so both reuse identical solved strategies where posteriors
    coincide; first writer wins.
    """
    h0, kernel = problem.h, problem.kernel
    h0.require_cache(k=cfg.batch)
    if problem.strategy.k != cfg.batch:
        raise ValueError("strategy copy count must equal the batch size")
    if cache is None:
        cache = {}
    hits = misses = 0
    scores = np.full((cfg.n_traj, cfg.rounds), np.nan)
    aborted = 0

    def solve_on(h: HypothesisSet, warm_from):
        nonlocal hits, misses
        key = posterior_cache_key(h)
        if key in cache:
            hits += 1
            return cache[key]
        misses += 1
        sub = SeesawProblem(problem.strategy, h, kernel)
        inner_cfg = _inner_config(cfg, warm=warm_from is not None, seed=cfg.seed)
        result: SeesawResult = run_seesaw(sub, inner_cfg, initial=warm_from)
        cache[key] = (result.testers, result.estimators)
        return cache[key]

    for traj in range(cfg.n_traj):
        rng = np.random.default_rng([cfg.seed, traj])
        j_true = int(rng.choice(len(h0), p=h0.weights))
        theta_true = h0.points[j_true]
        jvec_true = h0.choi_vecs[j_true]
        h_cur = h0
        testers = est = None
        for rnd in range(cfg.rounds):
            if rnd == 0:
                testers, est = solve_on(h_cur, None)
            elif cfg.adaptive:
                testers, est = solve_on(h_cur, est)
            else:
                # fixed testers; the estimator refresh stays closed form
                est = update_all_estimators(kernel, testers, h_cur, current=est)
            outcome = simulate_outcome(testers, jvec_true, rng)
            scores[traj, rnd] = evaluate_cost(
                kernel, theta_true, est.estimates[outcome]
            )
            try:
                h_cur = posterior_update(h_cur, testers, outcome, m=cfg.batch)
            except ValueError:
                # all-zero likelihood: degenerate posterior, drop the trajectory
                scores[traj] = np.nan
                aborted += 1
                break
            if cfg.resample_threshold > 0 and effective_sample_size(
                h_cur
            ) < cfg.resample_threshold * len(h_cur):
                h_cur = resample(
                    h_cur,
                    ess_threshold=1.0,
                    seed=int(rng.integers(2**63)),
                    jitter_scale=cfg.jitter_scale,
                )
        if cfg.verbose and (traj + 1) % max(1, cfg.n_traj // 20) == 0:
            done = np.nanmean(scores[: traj + 1, -1])
            print(f"[greedy] {traj + 1}/{cfg.n_traj} running mean {done:.6f}")

    valid = ~np.isnan(scores).any(axis=1)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise RuntimeError("every trajectory aborted on a degenerate posterior")
    body = scores[valid]
    mean = body.mean(axis=0)
    stderr = body.std(axis=0, ddof=1) / np.sqrt(n_valid) if n_valid > 1 else np.zeros(cfg.rounds)
    return GreedyReport(
        mean=mean,
        stderr=stderr,
        n_traj=cfg.n_traj,
        n_valid=n_valid,
        n_aborted=aborted,
        config=asdict(cfg),
        cache_hits=hits,
        cache_misses=misses,
    )
