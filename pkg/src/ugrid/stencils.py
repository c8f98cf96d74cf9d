"""Masked convolutional smoothers and residual operators.

All convolutions are zero-padded 3x3 *cross-correlations* with the kernel
read exactly as printed: ``out[i, j] = sum_{a,b} k[a, b] * x[i+a-1, j+b-1]``.
Rows (first index) are the ``y`` direction, columns the ``x`` direction.
Under this orientation ``u * JX`` is minus the central x-difference and
``u * JY`` the central y-difference; the operator formulas below are
written to match, so signs must not be "corrected".

The discrete operators in lattice units (unit spacing) are::

    poisson    A u = u * L                       diag -4
    helmholtz  A u = u * L + k2 u                diag k2 - 4
    cdr        A u = -alpha u * L + beta u
                     - vx (u * JX) - vy (u * JY)  diag 4 alpha + beta

and every smoother is the undamped Jacobi sweep
``u <- mask * (u - (A u - f) / diag) + (1 - mask) * b``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grid import as_field, as_mask, check_size, masked_compose

J = np.array([[0.0, 0.25, 0.0], [0.25, 0.0, 0.25], [0.0, 0.25, 0.0]])
L = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
JX = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, -0.5], [0.0, 0.0, 0.0]])
JY = np.array([[0.0, -0.5, 0.0], [0.0, 0.0, 0.0], [0.0, 0.5, 0.0]])

FAMILIES = ("poisson", "helmholtz", "cdr")


def conv3x3(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 cross-correlation over the last two axes.

    Zero taps are skipped and the rest are accumulated in row-major tap
    order, so ``conv3x3(u, J) == 0.25 * conv3x3(u, 4 * J)`` bitwise.
    """
    k = np.asarray(k, dtype=np.float64)
    n0, n1 = x.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    xp = np.pad(x, pad)
    out = np.zeros(x.shape, dtype=np.float64)
    for a in range(3):
        for b in range(3):
            w = k[a, b]
            if w != 0.0:
                out += w * xp[..., a:a + n0, b:b + n1]
    return out


def rot180(k: np.ndarray) -> np.ndarray:
    return np.asarray(k)[::-1, ::-1]


@dataclass(frozen=True, eq=False)
class PdeProblem:
    """A masked Dirichlet problem on an ``n x n`` lattice.

    Fields may carry leading batch axes; ``alpha``/``beta`` are then arrays
    broadcastable against ``(..., n, n)``.  Use :func:`poisson`,
    :func:`helmholtz` or :func:`cdr` for validated construction.
    """

    kind: str
    f: np.ndarray
    b: np.ndarray
    mask: np.ndarray
    k2: np.ndarray | None = None
    vx: np.ndarray | None = None
    vy: np.ndarray | None = None
    alpha: float | np.ndarray = 1.0
    beta: float | np.ndarray = 0.0

    @property
    def n(self) -> int:
        return self.f.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.f.shape[:-2]

    def with_fields(self, **kw) -> "PdeProblem":
        return replace(self, **kw)

    def validate(self) -> "PdeProblem":
        n = self.n
        check_size(n)
        fields = {"f": self.f, "b": self.b, "mask": self.mask}
        if self.kind == "helmholtz":
            fields["k2"] = self.k2
        elif self.kind == "cdr":
            fields["vx"], fields["vy"] = self.vx, self.vy
        elif self.kind != "poisson":
            raise ValueError(f"unknown PDE family {self.kind!r}")
        for name, a in fields.items():
            if a is None:
                raise ValueError(f"{self.kind} problem requires field {name!r}")
            if a.shape != self.f.shape:
                raise ValueError(f"field {name!r} has shape {a.shape}, expected {self.f.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"field {name!r} contains NaN or Inf")
        if np.any(self.mask[..., [0, -1], :] != 0) or np.any(self.mask[..., :, [0, -1]] != 0):
            raise ValueError("interior mask must be zero on the outer frame")
        d = diagonal(self)
        if np.any((self.mask != 0) & (np.broadcast_to(d, self.f.shape) == 0)):
            raise ValueError(f"{self.kind} operator has a zero diagonal at an interior point "
                             "(k2 == 4 or 4*alpha + beta == 0)")
        return self


def poisson(f, b, mask) -> PdeProblem:
    f = as_field(f)
    return PdeProblem("poisson", f, as_field(b, f.shape[-1]), as_mask(mask, f.shape[-1])).validate()


def helmholtz(f, b, mask, k2) -> PdeProblem:
    f = as_field(f)
    n = f.shape[-1]
    return PdeProblem("helmholtz", f, as_field(b, n), as_mask(mask, n),
                      k2=as_field(k2, n)).validate()


def cdr(f, b, mask, vx, vy, alpha: float, beta: float) -> PdeProblem:
    """Steady convection-diffusion-reaction ``v.grad u - alpha lap u + beta u = f``."""
    f = as_field(f)
    n = f.shape[-1]
    return PdeProblem("cdr", f, as_field(b, n), as_mask(mask, n),
                      vx=as_field(vx, n), vy=as_field(vy, n),
                      alpha=float(alpha), beta=float(beta)).validate()


def make_problem(kind: str, f, b, mask, *, k2=None, vx=None, vy=None,
                 alpha: float = 1.0, beta: float = 0.0) -> PdeProblem:
    if kind == "poisson":
        return poisson(f, b, mask)
    if kind == "helmholtz":
        return helmholtz(f, b, mask, k2)
    if kind == "cdr":
        return cdr(f, b, mask, vx, vy, alpha, beta)
    raise ValueError(f"unknown PDE family {kind!r}; expected one of {FAMILIES}")


def stack_problems(problems: list[PdeProblem]) -> PdeProblem:
    """Stack same-family, same-size problems along a new leading batch axis."""
    kinds = {p.kind for p in problems}
    if len(kinds) != 1:
        raise ValueError(f"cannot batch mixed families {sorted(kinds)}")
    kind = kinds.pop()

    def st(name):
        vals = [getattr(p, name) for p in problems]
        return None if vals[0] is None else np.stack(vals)

    kw = dict(k2=st("k2"), vx=st("vx"), vy=st("vy"))
    if kind == "cdr":
        kw["alpha"] = np.array([p.alpha for p in problems], dtype=np.float64)[:, None, None]
        kw["beta"] = np.array([p.beta for p in problems], dtype=np.float64)[:, None, None]
    return PdeProblem(kind, st("f"), st("b"), st("mask"), **kw)


def unstack_problem(problem: PdeProblem, i: int) -> PdeProblem:
    def pick(a):
        return None if a is None else a[i]

    kw = {}
    if problem.kind == "cdr":
        kw = dict(alpha=float(np.ravel(problem.alpha)[i] if np.ndim(problem.alpha) else problem.alpha),
                  beta=float(np.ravel(problem.beta)[i] if np.ndim(problem.beta) else problem.beta))
    return PdeProblem(problem.kind, problem.f[i], problem.b[i], problem.mask[i],
                      k2=pick(problem.k2), vx=pick(problem.vx), vy=pick(problem.vy), **kw)


def diagonal(problem: PdeProblem):
    """Diagonal of ``A`` (scalar or field); the implicit Jacobi preconditioner."""
    if problem.kind == "poisson":
        return -4.0
    if problem.kind == "helmholtz":
        return problem.k2 - 4.0
    return 4.0 * problem.alpha + problem.beta


def _safe(den, mask):
    return np.where(mask != 0, den, 1.0)


def smooth(problem: PdeProblem, u: np.ndarray) -> np.ndarray:
    """One masked Jacobi sweep; boundary entries are copied from ``b``."""
    p = problem
    if p.kind == "poisson":
        val = conv3x3(u, J) - 0.25 * p.f
    elif p.kind == "helmholtz":
        val = (conv3x3(u, 4.0 * J) - p.f) / _safe(4.0 - p.k2, p.mask)
    elif p.kind == "cdr":
        num = (p.alpha * conv3x3(u, 4.0 * J) + p.vx * conv3x3(u, JX)
               + p.vy * conv3x3(u, JY) + p.f)
        den = 4.0 * p.alpha + p.beta
        if np.any(np.asarray(den) == 0):
            raise ValueError("4*alpha + beta == 0: Jacobi sweep undefined")
        val = num / den
    else:
        raise ValueError(f"unknown PDE family {p.kind!r}")
    return masked_compose(val, p.b, p.mask)


def residual(problem: PdeProblem, u: np.ndarray) -> np.ndarray:
    """``(1 - M)(f - A u)``; assumes ``u`` already carries ``b`` on the boundary."""
    p = problem
    if p.kind == "poisson":
        r = p.f - conv3x3(u, L)
    elif p.kind == "helmholtz":
        r = p.f - conv3x3(u, L) - p.k2 * u
    elif p.kind == "cdr":
        r = (p.f + p.vx * conv3x3(u, JX) + p.vy * conv3x3(u, JY)
             + p.alpha * conv3x3(u, L) - p.beta * u)
    else:
        raise ValueError(f"unknown PDE family {p.kind!r}")
    return np.where(p.mask != 0, r, 0.0)


def _apply_a(p: PdeProblem, u: np.ndarray) -> np.ndarray:
    if p.kind == "poisson":
        return conv3x3(u, L)
    if p.kind == "helmholtz":
        return conv3x3(u, L) + p.k2 * u
    return (-p.alpha * conv3x3(u, L) + p.beta * u
            - p.vx * conv3x3(u, JX) - p.vy * conv3x3(u, JY))


def apply_operator(problem: PdeProblem, u: np.ndarray) -> np.ndarray:
    """``(1 - M) A u``, so that ``residual = (1 - M) f - apply_operator``."""
    return np.where(problem.mask != 0, _apply_a(problem, u), 0.0)


def operator_adjoint(problem: PdeProblem, w: np.ndarray) -> np.ndarray:
    """``A^T w`` for the unmasked zero-padded operator."""
    p = problem
    if p.kind == "poisson":
        return conv3x3(w, L)
    if p.kind == "helmholtz":
        return conv3x3(w, L) + p.k2 * w
    return (-p.alpha * conv3x3(w, L) + p.beta * w
            - conv3x3(p.vx * w, rot180(JX)) - conv3x3(p.vy * w, rot180(JY)))


def smooth_adjoint(problem: PdeProblem, g: np.ndarray) -> np.ndarray:
    """Adjoint of the linear part of :func:`smooth` (``b``, ``f`` held fixed)."""
    w = np.where(problem.mask != 0, g, 0.0)
    d = _safe(np.broadcast_to(diagonal(problem), w.shape), problem.mask)
    return w - operator_adjoint(problem, w / d)


def residual_adjoint(problem: PdeProblem, g: np.ndarray) -> np.ndarray:
    """Adjoint of ``u -> residual(problem, u)`` with respect to ``u``."""
    return -operator_adjoint(problem, np.where(problem.mask != 0, g, 0.0))


def initial_guess(problem: PdeProblem) -> np.ndarray:
    """Zero interior, boundary values from ``b``."""
    return masked_compose(np.zeros_like(problem.b), problem.b, problem.mask)


def effective_rhs(problem: PdeProblem) -> np.ndarray:
    """Right-hand side of the reduced system on interior unknowns.

    Equals ``(1 - M)(f - A (M b))``: the boundary values are folded into
    the interior equations exactly as in the assembled sparse system.
    """
    return residual(problem, initial_guess(problem))
