"""The recursive UGrid correction network and its hand-written adjoint.

The network is linear in its residual input: bias-free 3x3 convolutions,
mask gating, full-weighting pooling, bilinear upsampling and additive skip
connections.  Feature maps are laid out channel-first as ``(C, B, n, n)``.

One level of the recursion (``x`` already gated by the level's mask)::

    h = x
    for w in pre:  h = mask * conv(h, w)
    if coarser level exists:
        h = mask * up(level(mask_c * pool(h)))
    for w in post: h = mask * conv(h, w)
    return h + x

The finest level is wrapped by a 1 -> C ``lift`` and a C -> 1 ``project``
convolution, both gated by the interior mask.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .multigrid import coarsen_mask, full_weight, prolong_bilinear

CHECKPOINT_MAGIC = b"UGCK"
SCHEMA_VERSION = 1
MIN_LEVEL_N = 5


class CheckpointError(ValueError):
    pass


@dataclass
class UGridParams:
    depth: int
    channels: int
    lift: np.ndarray                # (C, 1, 3, 3)
    project: np.ndarray             # (1, C, 3, 3)
    pre: list = field(default_factory=list)   # pre[level][k]: (C, C, 3, 3)
    post: list = field(default_factory=list)
    seed: int | None = None

    @property
    def n_pre(self) -> int:
        return len(self.pre[0]) if self.pre else 0

    @property
    def n_post(self) -> int:
        return len(self.post[0]) if self.post else 0

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [("lift", self.lift)]
        for lvl in range(self.depth):
            out += [(f"level{lvl}.pre{k}", w) for k, w in enumerate(self.pre[lvl])]
            out += [(f"level{lvl}.post{k}", w) for k, w in enumerate(self.post[lvl])]
        out.append(("project", self.project))
        return out

    def tensors(self) -> list[np.ndarray]:
        return [w for _, w in self.named_tensors()]

    def with_tensors(self, ts) -> "UGridParams":
        ts = list(ts)
        it = iter(ts[1:-1])
        pre, post = [], []
        for _ in range(self.depth):
            pre.append([next(it) for _ in range(self.n_pre)])
            post.append([next(it) for _ in range(self.n_post)])
        return UGridParams(self.depth, self.channels, ts[0], ts[-1], pre, post, self.seed)

    def map(self, fn) -> "UGridParams":
        return self.with_tensors([fn(w) for w in self.tensors()])

    def num_params(self) -> int:
        return sum(w.size for w in self.tensors())

    def copy(self) -> "UGridParams":
        return self.map(np.copy)


def count_params(depth: int, channels: int, n_pre: int = 2, n_post: int = 2) -> int:
    return 2 * 9 * channels + depth * (n_pre + n_post) * 9 * channels * channels


def _shapes(depth, channels, n_pre, n_post):
    c = channels
    out = [("lift", (c, 1, 3, 3))]
    for lvl in range(depth):
        out += [(f"level{lvl}.pre{k}", (c, c, 3, 3)) for k in range(n_pre)]
        out += [(f"level{lvl}.post{k}", (c, c, 3, 3)) for k in range(n_post)]
    out.append(("project", (1, c, 3, 3)))
    return out


def _from_flat(depth, channels, n_pre, n_post, arrays, seed=None) -> UGridParams:
    proto = UGridParams(depth, channels, None, None,
                        [[None] * n_pre for _ in range(depth)],
                        [[None] * n_post for _ in range(depth)], seed)
    return proto.with_tensors(arrays)


def init_params(depth: int = 6, channels: int = 8, seed: int = 0,
                n_pre: int = 2, n_post: int = 2) -> UGridParams:
    """Uniform ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` init, ``fan_in = 9 * c_in``."""
    if depth < 1 or channels < 1:
        raise ValueError("depth and channels must be positive")
    rng = np.random.default_rng(seed)
    arrays = []
    for _, shape in _shapes(depth, channels, n_pre, n_post):
        bound = 1.0 / np.sqrt(9 * shape[1])
        arrays.append(rng.uniform(-bound, bound, size=shape))
    return _from_flat(depth, channels, n_pre, n_post, arrays, seed)


def zero_params(depth: int = 6, channels: int = 8, n_pre: int = 2, n_post: int = 2) -> UGridParams:
    arrays = [np.zeros(s) for _, s in _shapes(depth, channels, n_pre, n_post)]
    return _from_flat(depth, channels, n_pre, n_post, arrays)


# --- multi-channel convolution ------------------------------------------

def _im2col(x: np.ndarray) -> np.ndarray:
    c, b, n0, n1 = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))        # (C, B, n, n, 3, 3)
    return win.transpose(0, 4, 5, 1, 2, 3).reshape(c * 9, b * n0 * n1)


def conv(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Zero-padded multi-channel 3x3 cross-correlation, ``(C,B,n,n) -> (O,B,n,n)``."""
    o = w.shape[0]
    return (w.reshape(o, -1) @ _im2col(x)).reshape((o,) + x.shape[1:])


def conv_backward(x: np.ndarray, w: np.ndarray, g: np.ndarray):
    """Return ``(dL/dw, dL/dx)`` given the input ``x`` and upstream ``g``."""
    o = w.shape[0]
    dw = (g.reshape(o, -1) @ _im2col(x).T).reshape(w.shape)
    dx = conv(g, w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return dw, dx


# --- forward / backward -------------------------------------------------

def mask_pyramid(mask: np.ndarray, depth: int) -> list[np.ndarray]:
    """Interior masks for every level actually visited (stops before n < 5)."""
    masks = [(np.asarray(mask) != 0).astype(np.float64)]
    while len(masks) < depth and (masks[-1].shape[-1] + 1) // 2 >= MIN_LEVEL_N:
        masks.append(coarsen_mask(masks[-1]))
    return masks


@dataclass
class Tape:
    params: UGridParams
    masks: list
    squeeze: bool
    x_in: np.ndarray = None
    y: np.ndarray = None
    levels: list = field(default_factory=list)


def _level_forward(x, lvl, params, masks, tape):
    m = masks[lvl]
    rec = {"pre_in": [], "post_in": [], "down": None}
    h = x
    for w in params.pre[lvl]:
        rec["pre_in"].append(h)
        h = conv(h, w) * m
    if lvl + 1 < len(masks):
        d = full_weight(h) * masks[lvl + 1]
        rec["down"] = True
        h = prolong_bilinear(_level_forward(d, lvl + 1, params, masks, tape)) * m
    for w in params.post[lvl]:
        rec["post_in"].append(h)
        h = conv(h, w) * m
    tape.levels[lvl] = rec
    return h + x


def forward(r: np.ndarray, mask: np.ndarray, params: UGridParams,
            masks: list | None = None, record: bool = False):
    """Correction ``delta`` for residual ``r`` (``(n, n)`` or ``(B, n, n)``).

    ``masks`` may pass a precomputed :func:`mask_pyramid`.  With
    ``record=True`` returns ``(delta, tape)`` for :func:`backward`.
    """
    r = np.asarray(r, dtype=np.float64)
    n = r.shape[-1]
    if n < MIN_LEVEL_N:
        raise ValueError(f"UGrid forward needs n >= {MIN_LEVEL_N}, got {n}")
    squeeze = r.ndim == 2
    if squeeze:
        r = r[None]
        mask = np.asarray(mask)[None]
        if masks is not None and masks[0].ndim == 2:
            masks = [m[None] for m in masks]
    if masks is None:
        masks = mask_pyramid(mask, params.depth)
    tape = Tape(params, masks, squeeze)
    tape.levels = [None] * len(masks)
    m0 = masks[0]
    x_in = (r * m0)[None]
    x0 = conv(x_in, params.lift) * m0
    y = _level_forward(x0, 0, params, masks, tape)
    delta = (conv(y, params.project) * m0)[0]
    if squeeze:
        delta = delta[0]
    if not record:
        return delta
    tape.x_in, tape.y = x_in, y
    return delta, tape


def _level_backward(g_out, lvl, params, tape, grads):
    m = tape.masks[lvl]
    rec = tape.levels[lvl]
    g_x = g_out
    g = g_out
    for k in reversed(range(len(params.post[lvl]))):
        g = g * m
        dw, g = conv_backward(rec["post_in"][k], params.post[lvl][k], g)
        grads.post[lvl][k] = dw
    if rec["down"]:
        g = g * m
        g_d = 4.0 * full_weight(g)                  # prolong^T = 4 * full_weight
        g_d = _level_backward(g_d, lvl + 1, params, tape, grads)
        g = 0.25 * prolong_bilinear(g_d * tape.masks[lvl + 1])   # full_weight^T
    for k in reversed(range(len(params.pre[lvl]))):
        g = g * m
        dw, g = conv_backward(rec["pre_in"][k], params.pre[lvl][k], g)
        grads.pre[lvl][k] = dw
    return g_x + g


def backward(tape: Tape, upstream: np.ndarray):
    """Reverse pass: returns ``(param_grads, grad_r)`` for ``sum(upstream * delta)``."""
    params = tape.params
    up = np.asarray(upstream, dtype=np.float64)
    if tape.squeeze:
        up = up[None]
    if up.shape != tape.x_in.shape[1:]:
        raise ValueError(f"upstream shape {up.shape} does not match tape {tape.x_in.shape[1:]}")
    if len(tape.levels) > params.depth:
        raise ValueError("tape has more levels than the parameter set")
    grads = zero_params(params.depth, params.channels, params.n_pre, params.n_post)
    m0 = tape.masks[0]
    g = (up * m0)[None]
    grads.project, g_y = conv_backward(tape.y, params.project, g)
    g_x0 = _level_backward(g_y, 0, params, tape, grads)
    grads.lift, g_in = conv_backward(tape.x_in, params.lift, g_x0 * m0)
    g_r = g_in[0] * m0
    if tape.squeeze:
        g_r = g_r[0]
    return grads, g_r


# --- checkpoints --------------------------------------------------------

def save_checkpoint(path, params: UGridParams, meta: dict | None = None) -> None:
    """Versioned container: magic, uint32 header length, JSON header, LE float64 payload."""
    named = params.named_tensors()
    header = {
        "format": "ugrid-checkpoint",
        "schema_version": SCHEMA_VERSION,
        "depth": params.depth,
        "channels": params.channels,
        "n_pre": params.n_pre,
        "n_post": params.n_post,
        "seed": params.seed,
        "meta": meta or {},
        "tensors": [{"name": name, "shape": list(w.shape)} for name, w in named],
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        for _, w in named:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def read_checkpoint_header(path) -> dict:
    data = Path(path).read_bytes()
    return _parse_header(data, path)[0]


def _parse_header(data: bytes, path):
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a UGrid checkpoint")
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    return header, 8 + hlen


def load_checkpoint(path, depth: int | None = None, channels: int | None = None) -> UGridParams:
    data = Path(path).read_bytes()
    header, off = _parse_header(data, path)
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: schema version {version}, expected {SCHEMA_VERSION}")
    d, c = header["depth"], header["channels"]
    if channels is not None and c != channels:
        raise CheckpointError(f"{path}: checkpoint has {c} channels, expected {channels}")
    if depth is not None and d != depth:
        lvl = min(d, depth)
        what = "has extra" if d > depth else "is missing"
        raise CheckpointError(
            f"{path}: checkpoint depth {d} but expected {depth}: it {what} level{lvl} "
            f"(tensor 'level{lvl}.pre0')")
    expected = _shapes(d, c, header["n_pre"], header["n_post"])
    recorded = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    if recorded != expected:
        raise CheckpointError(f"{path}: tensor table does not match depth={d}, channels={c}")
    total = sum(int(np.prod(s)) for _, s in expected)
    if len(data) - off != 8 * total:
        raise CheckpointError(f"{path}: payload has {len(data) - off} bytes, expected {8 * total}")
    flat = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
    if not np.all(np.isfinite(flat)):
        raise CheckpointError(f"{path}: payload contains non-finite weights")
    arrays, pos = [], 0
    for _, s in expected:
        size = int(np.prod(s))
        arrays.append(flat[pos:pos + size].reshape(s).copy())
        pos += size
    return _from_flat(d, c, header["n_pre"], header["n_post"], arrays, header.get("seed"))
