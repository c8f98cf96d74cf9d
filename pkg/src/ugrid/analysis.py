"""Spectral checks, benchmark geometries and the solver comparison harness."""
from __future__ import annotations

import csv
import statistics
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data import random_coefficients
from .grid import check_size, full_interior_mask, load_mask, write_pgm_mask
from .multigrid import assemble_operator
from .net import UGridParams
from .solver import SolveConfig, jacobi_solve, mg_solve, solve, write_trace_csv
from .stencils import PdeProblem, diagonal, make_problem, smooth

TESTCASES = ("square", "poisson_square", "l_shape", "star", "donut", "noisy", "sharp_feature")
SOLVERS = ("jacobi", "classical-mg", "ugrid")


@dataclass
class SpectralReport:
    rho_estimate: float
    iterations: int
    converged: bool
    n: int
    family: str
    mask_descriptor: str = ""

    @property
    def contractive(self) -> bool:
        return self.rho_estimate < 1.0


def homogeneous(problem: PdeProblem) -> PdeProblem:
    zero = np.zeros_like(problem.f)
    return problem.with_fields(f=zero, b=zero.copy())


def update_operator(problem: PdeProblem):
    """Matrix-free ``G = (I - M)(I - P^-1 A)``: one unforced smooth step."""
    h = homogeneous(problem)
    return lambda x: smooth(h, x)


def spectral_radius(problem: PdeProblem, tol: float = 1e-6, max_iter: int = 10_000,
                    seed: int = 0, descriptor: str = "") -> SpectralReport:
    """Power iteration on ``G^2``, which separates the ``+/- rho`` pair of a bipartite stencil."""
    if problem.n > 129:
        raise ValueError(f"spectral_radius is limited to n <= 129, got {problem.n}")
    g = update_operator(problem)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(problem.f.shape) * (problem.mask != 0)
    nx = np.linalg.norm(x)
    if nx == 0.0:
        return SpectralReport(0.0, 0, True, problem.n, problem.kind, descriptor)
    x /= nx
    est = np.inf
    for it in range(1, max_iter + 1):
        y = g(g(x))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return SpectralReport(0.0, it, True, problem.n, problem.kind, descriptor)
        new = float(np.sqrt(ny))
        if abs(new - est) <= tol * new:
            return SpectralReport(new, it, True, problem.n, problem.kind, descriptor)
        est = new
        x = y / ny
    return SpectralReport(est, max_iter, False, problem.n, problem.kind, descriptor)


def dense_update_matrix(problem: PdeProblem) -> np.ndarray:
    """Dense ``G`` assembled from the point-wise stencil (``n <= 33``)."""
    n2 = problem.n ** 2
    a = assemble_operator(problem)
    d = np.broadcast_to(diagonal(problem), problem.f.shape).ravel()
    m = problem.mask.ravel() != 0
    dinv = np.where(m, 1.0 / np.where(m, d, 1.0), 0.0)
    g = np.eye(n2) - dinv[:, None] * a
    g[~m, :] = 0.0
    return g


def dense_spectral_radius(problem: PdeProblem) -> float:
    if problem.n > 33:
        raise ValueError("dense spectral oracle limited to n <= 33")
    return float(np.max(np.abs(np.linalg.eigvals(dense_update_matrix(problem)))))


# --- testcase geometries ----------------------------------------------------

def _coords(n):
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) / (n - 1)
    return yy, xx


def points_in_polygon(xx: np.ndarray, yy: np.ndarray, verts) -> np.ndarray:
    """Even-odd crossing test, vectorised over grid points."""
    inside = np.zeros(xx.shape, dtype=bool)
    vs = list(verts)
    for (x0, y0), (x1, y1) in zip(vs, vs[1:] + vs[:1]):
        if y0 == y1:
            continue
        crosses = (yy >= min(y0, y1)) & (yy < max(y0, y1))
        xint = x0 + (yy - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (xx < xint)
    return inside


L_SHAPE = [(0.1037, 0.1037), (0.8963, 0.1037), (0.8963, 0.4513),
           (0.4513, 0.4513), (0.4513, 0.8963), (0.1037, 0.8963)]


def star_vertices(points: int = 5, r_outer: float = 0.43, r_inner: float = 0.19,
                  center=(0.5013, 0.4987), rotation: float = 0.1):
    verts = []
    for k in range(2 * points):
        r = r_outer if k % 2 == 0 else r_inner
        t = rotation + np.pi * k / points
        verts.append((center[0] + r * np.cos(t), center[1] + r * np.sin(t)))
    return verts


def _polygon_mask(n, verts):
    yy, xx = _coords(n)
    m = points_in_polygon(xx, yy, verts).astype(np.float64)
    m[[0, -1], :] = 0.0
    m[:, [0, -1]] = 0.0
    return m


def _smooth_boundary(n):
    yy, xx = _coords(n)
    return np.sin(2 * np.pi * xx) * np.cos(np.pi * yy) + 0.5 * np.cos(3 * np.pi * xx * yy)


def _component_values(mask, values):
    labels, ncomp = ndimage.label(mask == 0)
    vals = np.resize(np.asarray(values, dtype=np.float64), ncomp + 1)
    b = vals[labels]
    b[mask != 0] = 0.0
    return b


def _bumps(n):
    """Two sharp and two smooth bumps along the outer frame."""
    yy, xx = _coords(n)
    t = np.where(yy == 0, xx, np.where(xx == 1, 1 + yy, np.where(yy == 1, 3 - xx, 4 - yy)))
    b = np.zeros((n, n))
    b += np.where(np.abs(t - 0.5) < 0.15, 1.0, 0.0)                   # step
    b += np.maximum(0.0, 1.0 - np.abs(t - 1.5) / 0.1)                  # kink
    b += np.exp(-((t - 2.5) / 0.12) ** 2)
    b -= 0.8 * np.exp(-((t - 3.5) / 0.2) ** 2)
    return b


def testcase_mask(name: str, n: int, seed: int = 0) -> np.ndarray:
    check_size(n)
    if name in ("square", "poisson_square", "sharp_feature"):
        return full_interior_mask(n)
    if name == "l_shape":
        return _polygon_mask(n, L_SHAPE)
    if name == "star":
        return _polygon_mask(n, star_vertices())
    if name == "donut":
        yy, xx = _coords(n)
        rr = np.hypot(xx - 0.5, yy - 0.5)
        m = ((rr <= 0.42) & (rr > 0.18)).astype(np.float64)
        m[[0, -1], :] = 0.0
        m[:, [0, -1]] = 0.0
        return m
    if name == "noisy":
        rng = np.random.default_rng(seed)
        yy, xx = _coords(n)
        m = full_interior_mask(n)
        for _ in range(6):
            cx, cy = rng.uniform(0.15, 0.85, size=2)
            r = rng.uniform(0.03, 0.08)
            m[np.hypot(xx - cx, yy - cy) <= r] = 0.0
        return m
    raise ValueError(f"unknown testcase {name!r}; expected one of {TESTCASES} or pgm:<path>")


def testcase_boundary(name: str, mask: np.ndarray, seed: int = 0) -> np.ndarray:
    n = mask.shape[0]
    if name in ("square", "poisson_square", "l_shape", "star"):
        b = _smooth_boundary(n)
    elif name == "donut":
        b = _component_values(mask, [0.0, 1.0, -1.0])
    elif name == "noisy":
        b = np.random.default_rng(seed + 1).uniform(-1.0, 1.0, size=(n, n))
    elif name == "sharp_feature":
        b = _bumps(n)
    else:
        b = _component_values(mask, np.random.default_rng(seed).uniform(-1, 1, size=64))
    return np.where(mask != 0, 0.0, b)


def gen_testcase(name: str, n: int, family: str = "poisson", seed: int = 0,
                 f_value: float | None = None) -> PdeProblem:
    """Benchmark problem ``name`` at size ``n``.

    ``name`` may also be ``pgm:<path>`` to load an image-derived mask.
    ``f_value`` sets a constant right-hand side; ``poisson_square`` uses
    ``-4 / (n - 1)**2`` by default, everything else ``0``.
    """
    if name.startswith("pgm:"):
        mask = load_mask(name[4:])
        n = mask.shape[0]
    else:
        mask = testcase_mask(name, n, seed)
    b = testcase_boundary(name, mask, seed)
    if f_value is None:
        f_value = -4.0 / (n - 1) ** 2 if name == "poisson_square" else 0.0
    f = np.full((n, n), float(f_value))
    coeffs = random_coefficients(family, n, np.random.default_rng(seed + 7))
    return make_problem(family, f, b, mask, **coeffs)


def export_testcase_mask(name: str, n: int, path, seed: int = 0) -> None:
    write_pgm_mask(path, testcase_mask(name, n, seed))


# --- benchmark harness ------------------------------------------------------

@dataclass
class BenchRow:
    testcase: str
    solver: str
    time_ms: float
    final_error: float
    iterations: int
    terminated: str


BENCH_FIELDS = ["testcase", "solver", "time_ms", "final_error", "iterations", "terminated"]


def run_solver(name: str, problem: PdeProblem, cfg: SolveConfig,
               params: UGridParams | None = None):
    if name == "jacobi":
        return jacobi_solve(problem, cfg)
    if name == "classical-mg":
        return mg_solve(problem, cfg)
    if name == "ugrid":
        if params is None:
            raise ValueError("the ugrid solver needs a checkpoint")
        return solve(problem, params, cfg)
    raise ValueError(f"unknown solver {name!r}; expected one of {SOLVERS}")


def bench(testcases: dict, solvers, cfg: SolveConfig | None = None,
          params: UGridParams | None = None, repeats: int = 10,
          out_dir=None) -> list[BenchRow]:
    """Run every solver on every testcase ``repeats`` times.

    ``testcases`` maps names to problems.  Time is the median wall time;
    error, iteration count and status come from the (deterministic) runs.
    With ``out_dir`` writes ``bench.csv`` and ``trace_<testcase>_<solver>.csv``.
    """
    cfg = cfg or SolveConfig()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    for tname, problem in testcases.items():
        for sname in solvers:
            times, report = [], None
            for _ in range(max(1, repeats)):
                _, report = run_solver(sname, problem, cfg, params)
                times.append(report.wall_time * 1e3)
            rows.append(BenchRow(tname, sname, statistics.median(times), report.final_error,
                                 report.iterations, report.terminated))
            if out:
                write_trace_csv(out / f"trace_{tname}_{sname}.csv", report)
    if out:
        write_bench_csv(out / "bench.csv", rows)
    return rows


def write_bench_csv(path, rows: list[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow(asdict(row))
