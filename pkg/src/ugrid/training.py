"""Self-supervised training of the UGrid correction network.

The network is trained by unrolling ``T`` outer iterations from the
zero-interior initial guess and minimising the mean L2 norm of the masked
residual of the last iterate.  Gradients flow back through every smoother
sweep, residual evaluation and network call via hand-written adjoints.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import gen_dataset, read_dataset
from .grid import batch_l2_norm
from .multigrid import build_hierarchy, vcycle
from .net import (UGridParams, backward, forward, init_params, mask_pyramid,
                  save_checkpoint, zero_params)
from .solver import SolveConfig, ugrid_iterate
from .stencils import (PdeProblem, effective_rhs, initial_guess, residual,
                       residual_adjoint, smooth, smooth_adjoint, stack_problems,
                       unstack_problem)

log = logging.getLogger(__name__)

LEGACY_EPS = 1e-12


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    family: str = "poisson"
    grid_n: int = 257
    dataset_size: int = 2000
    epochs: int = 300
    lr0: float = 1e-3
    lr_decay: float = 0.1
    decay_every: int = 50
    batch_size: int = 8
    unroll: int = 3
    loss: str = "residual"          # or "legacy"
    seed: int = 0
    depth: int = 6
    channels: int = 8
    n_pre: int = 2
    n_post: int = 2
    nu1: int = 2
    nu2: int = 2
    val_fraction: float = 0.1
    val_iters: int = 64
    val_tol: float = 1e-4
    val_every: int = 1
    nonzero_f: bool = False
    data_dir: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        for name in ("grid_n", "dataset_size", "epochs", "decay_every", "batch_size",
                     "unroll", "depth", "channels", "val_iters", "val_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be > 0")
        if self.loss not in ("residual", "legacy"):
            raise ValueError(f"loss must be 'residual' or 'legacy', not {self.loss!r}")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        """Build from string values (config files, CLI); unknown keys are errors."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ValueError(f"unknown training option {key!r}")
            default = getattr(cls, key, None) if key in cls.__dataclass_fields__ else None
            kw[key] = _coerce(raw, known[key].type, default)
        return cls(**kw)


def _coerce(raw, type_name, default):
    if not isinstance(raw, str):
        return raw
    t = str(type_name)
    if raw.lower() in ("none", "") and "None" in t:
        return None
    if t.startswith("bool"):
        return raw.lower() in ("1", "true", "yes", "on")
    if t.startswith("int"):
        return int(raw)
    if t.startswith("float"):
        return float(raw)
    return raw


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# --- losses ---------------------------------------------------------------

def residual_loss(problem: PdeProblem, x: np.ndarray) -> float:
    """Mean over the batch of ``||(1 - M)(f - A x)||_2``."""
    return float(np.mean(batch_l2_norm(residual(problem, x))))


def legacy_loss(x, y, eps: float = LEGACY_EPS) -> float:
    """``mean(|x - y| / |y|)`` over entries with ``|y| >= eps``."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    keep = np.abs(y) >= eps
    if not keep.any():
        return 0.0
    return float(np.mean(np.abs(x[keep] - y[keep]) / np.abs(y[keep])))


def legacy_excluded(y, eps: float = LEGACY_EPS) -> int:
    return int(np.count_nonzero(np.abs(np.asarray(y)) < eps))


def legacy_loss_grad(x, y, eps: float = LEGACY_EPS) -> np.ndarray:
    keep = np.abs(y) >= eps
    count = max(int(keep.sum()), 1)
    safe = np.where(keep, np.abs(y), 1.0)
    return np.where(keep, np.sign(x - y) / safe, 0.0) / count


# --- optimiser --------------------------------------------------------------

@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: list, grads: list, state: AdamState, lr: float):
    """Bias-corrected Adam on a list of arrays; returns ``(new_params, state)``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append(p - lr * mhat / (np.sqrt(vhat) + state.eps))
    return out, state


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule; ``epoch`` counts from 0."""
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.decay_every)


# --- unrolled objective -----------------------------------------------------

def unrolled_loss_and_grad(params: UGridParams, problem: PdeProblem, unroll: int,
                           cfg: SolveConfig | None = None, masks=None,
                           target: np.ndarray | None = None):
    """Loss of the ``unroll``-th iterate and its gradient w.r.t. ``params``.

    ``problem`` is batched ``(B, n, n)``.  Without ``target`` the loss is
    the batch-mean residual norm; with ``target`` it is the legacy relative
    error against that reference solution.
    """
    cfg = cfg or SolveConfig()
    if masks is None:
        masks = mask_pyramid(problem.mask, params.depth)
    mask = problem.mask
    u = initial_guess(problem)
    tapes = []
    for _ in range(unroll):
        for _ in range(cfg.nu1):
            u = smooth(problem, u)
        r = residual(problem, u)
        delta, tape = forward(r, mask, params, masks=masks, record=True)
        tapes.append(tape)
        u = u + np.where(mask != 0, delta, 0.0)
        for _ in range(cfg.nu2):
            u = smooth(problem, u)
    if target is None:
        r = residual(problem, u)
        norms = batch_l2_norm(r)
        loss = float(np.mean(norms))
        w = r / np.where(norms > 0, norms, 1.0)[..., None, None] / norms.size
        g_u = residual_adjoint(problem, w)
    else:
        loss = legacy_loss(u, target)
        g_u = legacy_loss_grad(u, target)
    total = zero_params(params.depth, params.channels, params.n_pre, params.n_post).tensors()
    for tape in reversed(tapes):
        for _ in range(cfg.nu2):
            g_u = smooth_adjoint(problem, g_u)
        grads, g_r = backward(tape, np.where(mask != 0, g_u, 0.0))
        total = [a + b for a, b in zip(total, grads.tensors())]
        g_u = g_u + residual_adjoint(problem, g_r)
        for _ in range(cfg.nu1):
            g_u = smooth_adjoint(problem, g_u)
    return loss, params.with_tensors(total), u


def reference_solution(problem: PdeProblem, tol: float = 1e-10, max_cycles: int = 200) -> np.ndarray:
    """Ground truth for the legacy loss: classical V-cycles to ``tol``."""
    h = build_hierarchy(problem)
    u = initial_guess(problem)
    scale = float(np.linalg.norm(effective_rhs(problem))) or 1.0
    for _ in range(max_cycles):
        u = vcycle(problem, u, h)
        if np.linalg.norm(residual(problem, u)) / scale <= tol:
            break
    return u


def batched_solve_errors(params: UGridParams, problem: PdeProblem, cfg: SolveConfig) -> np.ndarray:
    """Final relative residual per sample, mirroring :func:`solver.solve` stopping."""
    masks = mask_pyramid(problem.mask, params.depth)
    scale = batch_l2_norm(effective_rhs(problem))
    scale = np.where(scale > 0, scale, 1.0)
    u = initial_guess(problem)
    final = np.full(scale.shape, np.nan)
    active = np.ones(scale.shape, dtype=bool)
    for _ in range(cfg.max_iters):
        u = ugrid_iterate(u, problem, params, cfg, masks)
        err = batch_l2_norm(residual(problem, u)) / scale
        final = np.where(active, err, final)
        done = (err <= cfg.tol) | ~np.isfinite(err) | (err > 1e6)
        active &= ~done
        if not active.any():
            break
    return final


# --- training loop ----------------------------------------------------------

METRIC_FIELDS = ["epoch", "train_loss", "val_rel_residual", "lr", "residual_loss", "legacy_loss"]


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def train(cfg: TrainConfig, init: UGridParams | None = None, progress=None):
    """Run the training protocol; returns ``(params, metrics)``.

    With ``cfg.out_dir`` set, writes ``checkpoint_epochNNN.ugck`` every
    epoch, ``checkpoint.ugck`` at the end and ``metrics.csv``.
    """
    rng = np.random.default_rng(cfg.seed)
    if cfg.data_dir:
        _, problems = read_dataset(cfg.data_dir)
        problems = [p for p in problems if p.kind == cfg.family][: cfg.dataset_size]
        if not problems:
            raise ValueError(f"no {cfg.family} samples in {cfg.data_dir}")
    else:
        problems = gen_dataset(cfg.grid_n, cfg.family, cfg.dataset_size, cfg.seed, cfg.nonzero_f)
    train_set, val_set = split_validation(problems, cfg.val_fraction)
    if not train_set:
        raise ValueError("dataset too small for the requested validation split")
    targets = None
    if cfg.loss == "legacy":
        targets = [reference_solution(p) for p in train_set]

    params = init if init is not None else init_params(
        cfg.depth, cfg.channels, cfg.seed, cfg.n_pre, cfg.n_post)
    scfg = SolveConfig(nu1=cfg.nu1, nu2=cfg.nu2, tol=cfg.val_tol, max_iters=cfg.val_iters)
    state = AdamState()
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    meta = {k: v for k, v in asdict(cfg).items() if k not in ("out_dir", "data_dir")}
    metrics = []

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        order = rng.permutation(len(train_set))
        losses, res_losses, leg_losses = [], [], []
        for bi, idx in enumerate(_batches(order, cfg.batch_size)):
            batch = stack_problems([train_set[i] for i in idx])
            target = None if targets is None else np.stack([targets[i] for i in idx])
            loss, grads, u_last = unrolled_loss_and_grad(params, batch, cfg.unroll, scfg,
                                                         target=target)
            if not math.isfinite(loss):
                dump = {"seed": cfg.seed, "epoch": epoch, "batch_index": bi, "loss": repr(loss)}
                if out_dir:
                    (out_dir / "nan_dump.json").write_text(json.dumps(dump, indent=2))
                raise TrainingDivergedError(f"non-finite loss: {dump}")
            new, state = adam_step(params.tensors(), grads.tensors(), state, lr)
            params = params.with_tensors(new)
            losses.append(loss)
            if target is not None:
                res_losses.append(residual_loss(batch, u_last))
                leg_losses.append(loss)
        row = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "lr": lr,
               "residual_loss": float(np.mean(res_losses)) if res_losses else float(np.mean(losses)),
               "legacy_loss": float(np.mean(leg_losses)) if leg_losses else float("nan"),
               "val_rel_residual": float("nan")}
        if val_set and ((epoch + 1) % cfg.val_every == 0 or epoch + 1 == cfg.epochs):
            errs = np.concatenate([batched_solve_errors(params, stack_problems(chunk), scfg)
                                   for chunk in _batches(val_set, 32)])
            row["val_rel_residual"] = float(np.mean(errs))
        metrics.append(row)
        log.info("epoch %d loss %.4e val %.3e lr %.1e", row["epoch"], row["train_loss"],
                 row["val_rel_residual"], lr)
        if progress:
            progress(row)
        if out_dir:
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1:03d}.ugck", params,
                            dict(meta, epoch=epoch + 1))
            write_metrics_csv(out_dir / "metrics.csv", metrics)
    if out_dir:
        save_checkpoint(out_dir / "checkpoint.ugck", params, dict(meta, epoch=cfg.epochs))
    return params, metrics


def write_metrics_csv(path, metrics: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for row in metrics:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def split_validation(problems: list[PdeProblem], fraction: float = 0.1):
    n_val = int(round(fraction * len(problems)))
    return problems[: len(problems) - n_val], problems[len(problems) - n_val:]


def unstack(problem: PdeProblem) -> list[PdeProblem]:
    return [unstack_problem(problem, i) for i in range(problem.batch_shape[0])]
