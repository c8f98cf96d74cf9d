"""Classical geometric multigrid and a dense direct solver.

Transfer operators are the canonical pair: 9-point full weighting and
bilinear interpolation.  Coarse levels rediscretize the operator (no
Galerkin products) with coefficients restricted by full weighting and
rescaled to the coarse lattice spacing, so per-level algebra differs from
``R A P``; only convergence behaviour is meaningful.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grid import check_size, masked_compose
from .stencils import PdeProblem, residual, smooth

_FW = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0


class SingularSystemError(np.linalg.LinAlgError):
    """The assembled masked system is (numerically) singular."""


def _coarse_taps(x: np.ndarray):
    """Yield ``(a, b, view)`` for the 3x3 fine footprint of every coarse point."""
    n = x.shape[-1]
    nc = (n + 1) // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    xp = np.pad(x, pad)
    stop = 2 * (nc - 1) + 1
    for a in range(3):
        for b in range(3):
            yield a, b, xp[..., a:a + stop:2, b:b + stop:2]


def full_weight(x: np.ndarray) -> np.ndarray:
    """Full weighting at every coarse point with zero padding (linear, ``= P^T / 4``)."""
    out = 0.0
    for a, b, v in _coarse_taps(x):
        out = out + _FW[a, b] * v
    return out


def restrict_full_weighting(fine: np.ndarray) -> np.ndarray:
    """Restrict ``(..., n, n)`` to ``(..., (n+1)/2, (n+1)/2)``; frame rows injected."""
    n = fine.shape[-1]
    check_size(n)
    if n < 9:
        raise ValueError(f"cannot restrict n={n}; need n >= 9")
    out = full_weight(fine)
    out[..., 0, :] = fine[..., 0, ::2]
    out[..., -1, :] = fine[..., -1, ::2]
    out[..., :, 0] = fine[..., ::2, 0]
    out[..., :, -1] = fine[..., ::2, -1]
    return out


def prolong_bilinear(coarse: np.ndarray) -> np.ndarray:
    nc = coarse.shape[-1]
    n = 2 * nc - 1
    out = np.zeros(coarse.shape[:-2] + (n, n))
    out[..., ::2, ::2] = coarse
    out[..., 1::2, ::2] = 0.5 * (coarse[..., :-1, :] + coarse[..., 1:, :])
    out[..., ::2, 1::2] = 0.5 * (coarse[..., :, :-1] + coarse[..., :, 1:])
    out[..., 1::2, 1::2] = 0.25 * (coarse[..., :-1, :-1] + coarse[..., :-1, 1:]
                                   + coarse[..., 1:, :-1] + coarse[..., 1:, 1:])
    return out


def coarsen_mask(mask: np.ndarray) -> np.ndarray:
    """Coarse point is interior iff its whole 3x3 fine footprint is interior."""
    out = None
    for _, _, v in _coarse_taps((np.asarray(mask) != 0).astype(np.float64)):
        out = v.copy() if out is None else np.minimum(out, v)
    return out


def coarsen_problem(problem: PdeProblem) -> PdeProblem:
    """Rediscretized error-equation template one level down (``f = b = 0``).

    Coefficients are full-weighted and rescaled to the doubled lattice
    spacing: zeroth-order terms by 4, first-order terms by 2.  The
    matching right-hand side is ``4 * restrict(r)``.
    """
    p = problem
    mask = coarsen_mask(p.mask)
    zero = np.zeros(mask.shape)
    kw = {}
    if p.kind == "helmholtz":
        kw["k2"] = 4.0 * restrict_full_weighting(p.k2)
    elif p.kind == "cdr":
        kw.update(vx=2.0 * restrict_full_weighting(p.vx),
                  vy=2.0 * restrict_full_weighting(p.vy),
                  alpha=p.alpha, beta=4.0 * np.asarray(p.beta) if np.ndim(p.beta) else 4.0 * p.beta)
    return PdeProblem(p.kind, zero, zero.copy(), mask, **kw)


@dataclass(frozen=True)
class MgHierarchy:
    levels: tuple  # tuple[PdeProblem, ...], level 0 is the fine problem

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def sizes(self) -> list[int]:
        return [p.n for p in self.levels]


def build_hierarchy(problem: PdeProblem, max_depth: int | None = None,
                    min_n: int = 5) -> MgHierarchy:
    levels = [problem]
    while (levels[-1].n + 1) // 2 >= min_n and (max_depth is None or len(levels) < max_depth):
        levels.append(coarsen_problem(levels[-1]))
    return MgHierarchy(tuple(levels))


def damped_smooth(problem: PdeProblem, u: np.ndarray, omega: float) -> np.ndarray:
    if omega == 1.0:
        return smooth(problem, u)
    return u + omega * (smooth(problem, u) - u)


def vcycle(problem: PdeProblem, u: np.ndarray, hierarchy: MgHierarchy,
           nu1: int = 2, nu2: int = 2, omega: float = 0.8,
           coarse_sweeps: int = 50, level: int = 0) -> np.ndarray:
    """One correction-scheme V-cycle starting at ``hierarchy.levels[level]``.

    ``problem`` supplies ``f``/``b`` at this level; coefficients and masks
    of coarser levels come from the hierarchy.
    """
    if level == hierarchy.depth - 1:
        for _ in range(coarse_sweeps):
            u = damped_smooth(problem, u, omega)
        return u
    for _ in range(nu1):
        u = damped_smooth(problem, u, omega)
    r = residual(problem, u)
    coarse = hierarchy.levels[level + 1]
    rc = np.where(coarse.mask != 0, 4.0 * restrict_full_weighting(r), 0.0)
    e = vcycle(coarse.with_fields(f=rc), np.zeros_like(rc), hierarchy,
               nu1, nu2, omega, coarse_sweeps, level + 1)
    u = u + np.where(problem.mask != 0, prolong_bilinear(e), 0.0)
    for _ in range(nu2):
        u = damped_smooth(problem, u, omega)
    return u


# --- dense oracle ---------------------------------------------------------

def stencil_rows(problem: PdeProblem):
    """Yield ``(k, [(col, coeff), ...])`` for every interior point.

    Built point by point from the PDE coefficients, independent of the
    convolution code path.
    """
    p = problem
    n = p.n
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            if p.mask[i, j] == 0:
                continue
            k = i * n + j
            up, down, left, right = k - n, k + n, k - 1, k + 1
            if p.kind == "poisson":
                c, cu, cd, cl, cr = -4.0, 1.0, 1.0, 1.0, 1.0
            elif p.kind == "helmholtz":
                c, cu, cd, cl, cr = -4.0 + p.k2[i, j], 1.0, 1.0, 1.0, 1.0
            else:
                a, vx, vy = p.alpha, p.vx[i, j], p.vy[i, j]
                c = 4.0 * a + p.beta
                cl, cr = -a - 0.5 * vx, -a + 0.5 * vx
                cu, cd = -a + 0.5 * vy, -a - 0.5 * vy
            yield k, [(k, c), (up, cu), (down, cd), (left, cl), (right, cr)]


def assemble_operator(problem: PdeProblem) -> np.ndarray:
    """Dense ``n^2 x n^2`` matrix whose interior rows are ``A``; other rows zero."""
    n2 = problem.n ** 2
    a = np.zeros((n2, n2))
    for k, row in stencil_rows(problem):
        for col, c in row:
            a[k, col] += c
    return a


def assemble_system(problem: PdeProblem) -> tuple[np.ndarray, np.ndarray]:
    """Masked system: interior rows ``A u = f``, boundary rows ``u = b``."""
    m = problem.mask.ravel() != 0
    a = assemble_operator(problem)
    a[~m, :] = 0.0
    idx = np.flatnonzero(~m)
    a[idx, idx] = 1.0
    rhs = np.where(m, problem.f.ravel(), problem.b.ravel())
    return a, rhs


def dense_solve(problem: PdeProblem) -> np.ndarray:
    """Direct LU solve of the masked system (``n <= 33``)."""
    n = problem.n
    if n > 33:
        raise ValueError(f"dense_solve is limited to n <= 33, got {n}")
    a, rhs = assemble_system(problem)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-13 * d.max():
        raise SingularSystemError(
            f"masked {problem.kind} system is singular (min pivot {d.min():.3e})")
    u = scipy.linalg.lu_solve((lu, piv), rhs).reshape(n, n)
    return masked_compose(u, problem.b, problem.mask)
