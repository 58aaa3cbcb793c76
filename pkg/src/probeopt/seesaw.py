"""Alternating tester/estimator optimization of the bilinear score.

One iteration solves the tester SDP at fixed estimators (exact in that
argument), then refreshes every estimator in closed form at fixed testers.
Both half steps can only improve the objective, so the recorded score trace
is monotone; a multi-restart wrapper guards against bad initial estimators.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .costs import (
    CostKernel,
    EstimatorSet,
    expected_score,
    initial_estimators,
    update_all_estimators,
)
from .priors import HypothesisSet
from .sdp import StrategyClass, TesterSet, build_objective, solve_testers

DEFAULT_OUTCOMES_SU2 = 27
DEFAULT_OUTCOMES_SCALAR = 20


@dataclass(frozen=True)
class SeesawConfig:
    epsilon: float = 1e-6
    max_iters: int = 50
    n_restarts: int = 5
    seed: int = 0
    n_outcomes: Optional[int] = None  # None picks a kernel-dependent default
    tol: float = 1e-8
    solver: str = "auto"
    verbose: bool = False
    trace_csv: Optional[str] = None

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")


@dataclass(frozen=True)
class SeesawProblem:
    strategy: StrategyClass
    h: HypothesisSet
    kernel: CostKernel

    def __post_init__(self) -> None:
        self.h.require_cache(k=self.strategy.k)


@dataclass
class SeesawResult:
    score: float
    testers: TesterSet
    estimators: EstimatorSet
    trace: list[tuple[int, int, str, float]]  # (restart, iteration, step, score)
    restart_index: int
    converged: bool
    n_iterations: int
    solve_time: float

    def scores(self, restart: Optional[int] = None) -> np.ndarray:
        """Flat score-after-half-step sequence, optionally for one restart."""
        return np.array(
            [s for r, _, _, s in self.trace if restart is None or r == restart]
        )


def default_outcomes(kernel: CostKernel) -> int:
    return DEFAULT_OUTCOMES_SU2 if kernel.kind == "fidelity_su2" else DEFAULT_OUTCOMES_SCALAR


def _write_trace_csv(path: str, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["restart", "iteration", "step", "score"])
        writer.writerows(trace)


def run_seesaw(
    problem: SeesawProblem,
    cfg: SeesawConfig = SeesawConfig(),
    initial: Optional[EstimatorSet] = None,
) -> SeesawResult:
    """Best-over-restarts alternating optimization.

    `initial` warm-starts the first restart's estimators; remaining restarts
    draw fresh starting points from the prior.
    """
    h, kernel, strategy = problem.h, problem.kernel, problem.strategy
    n_out = cfg.n_outcomes or default_outcomes(kernel)
    sign = kernel.sign
    best: Optional[SeesawResult] = None
    trace: list[tuple[int, int, str, float]] = []
    t_start = time.time()

    for restart in range(cfg.n_restarts):
        rng = np.random.default_rng([cfg.seed, restart])
        if restart == 0 and initial is not None:
            est = initial
        else:
            est = initial_estimators(kernel, h, n_out, rng)
        testers: Optional[TesterSet] = None
        prev_score = -np.inf * sign
        converged = False
        n_iter = 0
        for it in range(1, cfg.max_iters + 1):
            n_iter = it
            ops = build_objective(h, kernel, est)
            try:
                new_testers, _ = solve_testers(
                    strategy,
                    h.layout,
                    ops,
                    direction=kernel.direction,
                    tol=cfg.tol,
                    solver=cfg.solver,
                    verbose=False,
                )
            except RuntimeError as exc:
                raise RuntimeError(
                    f"seesaw restart {restart} iteration {it}: {exc}"
                ) from exc
            score_1 = expected_score(kernel, h, new_testers.elements, est)
            if testers is not None and sign * (score_1 - prev_score) < 0:
                # solver noise can no longer improve on the incumbent; keep it
                converged = True
                break
            testers = new_testers
            trace.append((restart, it, "testers", score_1))
            est_new = update_all_estimators(kernel, testers, h, current=est)
            score_2 = expected_score(kernel, h, testers.elements, est_new)
            if sign * (score_2 - score_1) < 0:
                score_2 = score_1
            else:
                est = est_new
            trace.append((restart, it, "estimators", score_2))
            if cfg.verbose:
                print(
                    f"[seesaw] restart {restart} iter {it:3d} "
                    f"score {score_2:.9f}"
                )
            if np.isfinite(prev_score) and abs(score_2 - prev_score) < cfg.epsilon:
                prev_score = score_2
                converged = True
                break
            prev_score = score_2
        assert testers is not None
        candidate = SeesawResult(
            score=prev_score,
            testers=testers,
            estimators=est,
            trace=[],
            restart_index=restart,
            converged=converged,
            n_iterations=n_iter,
            solve_time=0.0,
        )
        if best is None or sign * (candidate.score - best.score) > 0:
            best = candidate

    assert best is not None
    best.trace = trace
    best.solve_time = time.time() - t_start
    if cfg.trace_csv:
        _write_trace_csv(cfg.trace_csv, trace)
    return best
