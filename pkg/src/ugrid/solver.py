"""Outer UGrid iteration, stopping logic and the Jacobi / multigrid drivers."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .grid import batch_l2_norm, l2_norm, masked_compose
from .multigrid import build_hierarchy, vcycle
from .net import UGridParams, forward, mask_pyramid
from .stencils import PdeProblem, effective_rhs, initial_guess, residual, smooth

CONVERGED = "Converged"
MAX_ITERS = "MaxIters"
DIVERGED = "Diverged"
DIVERGENCE_FACTOR = 1e6


@dataclass
class SolveConfig:
    nu1: int = 2
    nu2: int = 2
    tol: float = 1e-4
    max_iters: int = 64
    trace: bool = True

    def __post_init__(self):
        if self.nu1 < 0 or self.nu2 < 0:
            raise ValueError("nu1, nu2 must be >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SolveReport:
    solver: str
    iterations: int = 0
    trace: list = field(default_factory=list)
    cumulative_ms: list = field(default_factory=list)
    terminated: str = MAX_ITERS
    wall_time: float = 0.0
    absolute: bool = False      # trace holds absolute residuals (degenerate RHS)

    @property
    def final_error(self) -> float:
        return self.trace[-1] if self.trace else float("nan")

    @property
    def converged(self) -> bool:
        return self.terminated == CONVERGED


def write_trace_csv(path, report: SolveReport) -> None:
    """Convergence map: ``iteration, relative_residual, cumulative_ms``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "relative_residual", "cumulative_ms"])
        for i, (e, t) in enumerate(zip(report.trace, report.cumulative_ms), start=1):
            w.writerow([i, repr(float(e)), f"{t:.3f}"])


def read_trace_csv(path) -> list[float]:
    with open(path, newline="") as fh:
        return [float(row["relative_residual"]) for row in csv.DictReader(fh)]


def ugrid_iterate(u: np.ndarray, problem: PdeProblem, params: UGridParams,
                  cfg: SolveConfig | None = None, masks: list | None = None) -> np.ndarray:
    """Pre-smooth, learned correction of the residual, post-smooth."""
    cfg = cfg or SolveConfig()
    for _ in range(cfg.nu1):
        u = smooth(problem, u)
    r = residual(problem, u)
    delta = forward(r, problem.mask, params, masks=masks)
    u = u + np.where(problem.mask != 0, delta, 0.0)
    for _ in range(cfg.nu2):
        u = smooth(problem, u)
    return u


def iterate_until(step, problem: PdeProblem, cfg: SolveConfig, u0=None,
                  name: str = "solver") -> tuple[np.ndarray, SolveReport]:
    """Apply ``step`` until the relative residual reaches ``cfg.tol``.

    A zero effective right-hand side switches to absolute residuals with
    threshold ``tol * n``.
    """
    report = SolveReport(name)
    u = initial_guess(problem) if u0 is None else masked_compose(u0, problem.b, problem.mask)
    scale = l2_norm(effective_rhs(problem))
    if scale == 0.0:
        report.absolute = True
        scale, tol = 1.0, cfg.tol * problem.n
    else:
        tol = cfg.tol
    start = l2_norm(residual(problem, u)) / scale
    limit = DIVERGENCE_FACTOR * max(start, tol)
    t0 = time.perf_counter()
    for it in range(1, cfg.max_iters + 1):
        u = step(u)
        err = l2_norm(residual(problem, u)) / scale
        report.iterations = it
        report.trace.append(err)
        report.cumulative_ms.append(1e3 * (time.perf_counter() - t0))
        if not np.isfinite(err) or err > limit:
            report.terminated = DIVERGED
            break
        if err <= tol:
            report.terminated = CONVERGED
            break
    report.wall_time = time.perf_counter() - t0
    return u, report


def solve(problem: PdeProblem, params: UGridParams, cfg: SolveConfig | None = None,
          u0=None) -> tuple[np.ndarray, SolveReport]:
    cfg = cfg or SolveConfig()
    masks = mask_pyramid(problem.mask, params.depth)
    return iterate_until(lambda u: ugrid_iterate(u, problem, params, cfg, masks),
                         problem, cfg, u0, "ugrid")


def jacobi_solve(problem: PdeProblem, cfg: SolveConfig | None = None,
                 u0=None) -> tuple[np.ndarray, SolveReport]:
    """Plain masked Jacobi; one iteration is one sweep."""
    return iterate_until(lambda u: smooth(problem, u), problem, cfg or SolveConfig(),
                         u0, "jacobi")


def mg_solve(problem: PdeProblem, cfg: SolveConfig | None = None, u0=None,
             omega: float = 0.8) -> tuple[np.ndarray, SolveReport]:
    """Classical V-cycles; one iteration is one cycle."""
    cfg = cfg or SolveConfig()
    h = build_hierarchy(problem)
    return iterate_until(lambda u: vcycle(problem, u, h, cfg.nu1, cfg.nu2, omega),
                         problem, cfg, u0, "classical-mg")


def batch_relative_residuals(problem: PdeProblem, u: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return batch_l2_norm(residual(problem, u)) / scale
