"""Synthetic training data and on-disk problem/dataset layout.

Training samples are donut-like: an outer rectangle or disc inset from the
frame with a smaller rectangular or circular hole, zero ``f``, and a
constant Dirichlet value on each connected boundary component.

On disk a problem is a set of UGF1 fields plus JSON metadata::

    {"family": "cdr", "alpha": 1.2, "beta": 0.3,
     "files": {"mask": "mask.ugf", "b": "b.ugf", "f": "f.ugf", "vx": ..., "vy": ...}}

``problem.json`` in a problem directory holds one such record; a dataset
``manifest.json`` holds ``family``, ``seed``, ``n`` and a ``samples`` list.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from .grid import load_mask, read_field, write_field
from .stencils import FAMILIES, PdeProblem, make_problem

FIELD_NAMES = {"poisson": (), "helmholtz": ("k2",), "cdr": ("vx", "vy")}


def helmholtz_k2_max(n: int) -> float:
    """Half the smallest eigenvalue of ``-L`` on the full ``n x n`` square.

    Any ``0 <= k2 < k2_max`` keeps ``-(L + k2)`` positive definite on every
    sub-domain, so the masked Jacobi iterator converges.
    """
    return 0.5 * 4.0 * (1.0 - np.cos(np.pi / (n - 1)))


def random_coefficients(family: str, n: int, rng: np.random.Generator) -> dict:
    if family == "poisson":
        return {}
    if family == "helmholtz":
        return {"k2": rng.uniform(0.0, helmholtz_k2_max(n), size=(n, n))}
    if family == "cdr":
        vx = rng.uniform(-1.0, 1.0, size=(n, n))
        vy = rng.uniform(-1.0, 1.0, size=(n, n))
        while True:
            alpha, beta = rng.uniform(0.5, 2.0), rng.uniform(0.0, 1.0)
            if 4.0 * alpha + beta != 0.0:
                return {"vx": vx, "vy": vy, "alpha": float(alpha), "beta": float(beta)}
    raise ValueError(f"unknown PDE family {family!r}; expected one of {FAMILIES}")


def _shape_region(kind, cx, cy, rx, ry, yy, xx):
    if kind == "disc":
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    return (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)


def donut_mask(n: int, rng: np.random.Generator) -> np.ndarray:
    """Annulus-like interior mask: random outer shape minus a random hole."""
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) / (n - 1)
    while True:
        outer = rng.choice(["rect", "disc"])
        inner = rng.choice(["rect", "disc"])
        ox, oy = rng.uniform(0.3, 0.48, size=2)
        cx = rng.uniform(0.5 - (0.49 - ox), 0.5 + (0.49 - ox))
        cy = rng.uniform(0.5 - (0.49 - oy), 0.5 + (0.49 - oy))
        ix, iy = rng.uniform(0.15, 0.5) * ox, rng.uniform(0.15, 0.5) * oy
        hx = cx + rng.uniform(-0.3, 0.3) * (ox - ix)
        hy = cy + rng.uniform(-0.3, 0.3) * (oy - iy)
        region = _shape_region(outer, cx, cy, ox, oy, yy, xx)
        hole = _shape_region(inner, hx, hy, ix, iy, yy, xx)
        mask = (region & ~hole).astype(np.float64)
        mask[[0, -1], :] = 0.0
        mask[:, [0, -1]] = 0.0
        _, ncomp = ndimage.label(mask == 0)
        if mask.sum() > 0 and hole.any() and ncomp == 2:
            return mask


def piecewise_constant_boundary(mask: np.ndarray, rng: np.random.Generator,
                                low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """One uniform value per 4-connected boundary component; interior 0."""
    labels, ncomp = ndimage.label(mask == 0)
    values = rng.uniform(low, high, size=ncomp + 1)
    b = values[labels]
    b[mask != 0] = 0.0
    return b


def gen_donut_sample(n: int, family: str, rng: np.random.Generator,
                     nonzero_f: bool = False) -> PdeProblem:
    mask = donut_mask(n, rng)
    b = piecewise_constant_boundary(mask, rng)
    f = np.zeros((n, n))
    if nonzero_f:
        f = rng.uniform(-1.0, 1.0, size=(n, n)) * (4.0 / (n - 1) ** 2)
    coeffs = random_coefficients(family, n, rng)
    return make_problem(family, f, b, mask, **coeffs)


def gen_dataset(n: int, family: str, count: int, seed: int,
                nonzero_f: bool = False) -> list[PdeProblem]:
    """Deterministic list of samples; sample ``i`` uses its own child stream."""
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [gen_donut_sample(n, family, np.random.default_rng(s), nonzero_f) for s in seeds]


# --- problem / dataset files ----------------------------------------------

def problem_record(problem: PdeProblem, directory, prefix: str = "") -> dict:
    directory = Path(directory)
    files = {}
    for name in ("mask", "b", "f") + FIELD_NAMES[problem.kind]:
        fname = f"{prefix}{name}.ugf"
        write_field(directory / fname, getattr(problem, name))
        files[name] = fname
    rec = {"family": problem.kind, "files": files}
    if problem.kind == "cdr":
        rec.update(alpha=float(problem.alpha), beta=float(problem.beta))
    return rec


def problem_from_record(rec: dict, directory) -> PdeProblem:
    directory = Path(directory)
    family = rec["family"]
    files = rec["files"]
    fields = {}
    for name, fname in files.items():
        path = directory / fname
        fields[name] = load_mask(path) if name == "mask" else read_field(path)
    n = fields["mask"].shape[0]
    f = fields.get("f", np.zeros((n, n)))
    return make_problem(family, f, fields["b"], fields["mask"],
                        k2=fields.get("k2"), vx=fields.get("vx"), vy=fields.get("vy"),
                        alpha=rec.get("alpha", 1.0), beta=rec.get("beta", 0.0))


def save_problem(directory, problem: PdeProblem, **extra) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rec = problem_record(problem, directory)
    rec.update(extra)
    (directory / "problem.json").write_text(json.dumps(rec, indent=2, sort_keys=True))
    return directory


def load_problem(directory) -> PdeProblem:
    directory = Path(directory)
    rec = json.loads((directory / "problem.json").read_text())
    return problem_from_record(rec, directory)


def write_dataset(directory, problems: list[PdeProblem], family: str, seed: int) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    samples = [problem_record(p, directory, prefix=f"sample_{i:05d}_")
               for i, p in enumerate(problems)]
    manifest = {"family": family, "seed": seed,
                "n": problems[0].n if problems else None,
                "count": len(problems), "samples": samples}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_dataset(directory) -> tuple[dict, list[PdeProblem]]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    return manifest, [problem_from_record(rec, directory) for rec in manifest["samples"]]
