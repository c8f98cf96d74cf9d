"""Grid fields, interior masks, norms and the UGF1 / PGM file formats.

Fields are plain ``float64`` numpy arrays of shape ``(n, n)`` with
``n = 2**k + 1`` (``k >= 2``).  Most routines also accept a leading batch
axis, i.e. arrays of shape ``(..., n, n)``.

Masks store the *interior* indicator (1 = unknown, 0 = Dirichlet point);
this is the complement of the diagonal boundary mask used in the masked
linear system.  The outermost frame of every mask is always 0.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

UGF_MAGIC = b"UGF1"


class FieldFormatError(ValueError):
    """Raised for malformed field or mask files."""


class GridSizeError(ValueError):
    """Raised when a grid side length is not of the form 2**k + 1, k >= 2."""


class DegenerateProblemError(ZeroDivisionError):
    """The effective right-hand side has zero norm; use an absolute residual."""


def is_valid_size(n: int) -> bool:
    m = n - 1
    return n >= 5 and (m & (m - 1)) == 0


def check_size(n: int) -> int:
    if not is_valid_size(int(n)):
        raise GridSizeError(f"grid size {n} is not 2**k + 1 with k >= 2")
    return int(n)


def as_field(x, n: int | None = None) -> np.ndarray:
    """Validate and convert ``x`` to a finite float64 field of side ``n``."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise GridSizeError(f"expected square (..., n, n) field, got shape {a.shape}")
    check_size(a.shape[-1])
    if n is not None and a.shape[-1] != n:
        raise GridSizeError(f"field has n={a.shape[-1]}, expected n={n}")
    if not np.all(np.isfinite(a)):
        raise ValueError("field contains NaN or Inf")
    return a


def as_mask(m, n: int | None = None) -> np.ndarray:
    """Return ``m`` as a float64 0/1 interior mask with a zeroed frame.

    Any nonzero value is treated as interior.  The frame is *cleared*
    rather than rejected because the trivial outer boundary is always a
    Dirichlet boundary.
    """
    a = np.asarray(m)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise GridSizeError(f"expected square (..., n, n) mask, got shape {a.shape}")
    check_size(a.shape[-1])
    if n is not None and a.shape[-1] != n:
        raise GridSizeError(f"mask has n={a.shape[-1]}, expected n={n}")
    out = (a != 0).astype(np.float64)
    clear_frame(out)
    return out


def clear_frame(a: np.ndarray, value: float = 0.0) -> np.ndarray:
    a[..., 0, :] = value
    a[..., -1, :] = value
    a[..., :, 0] = value
    a[..., :, -1] = value
    return a


def full_interior_mask(n: int) -> np.ndarray:
    return clear_frame(np.ones((check_size(n),) * 2))


def masked_compose(x, b, mask) -> np.ndarray:
    """Take ``x`` on interior points and ``b`` on boundary points."""
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mask = np.asarray(mask)
    if x.shape[-2:] != b.shape[-2:] or x.shape[-2:] != mask.shape[-2:]:
        raise GridSizeError(
            f"shape mismatch: x {x.shape}, b {b.shape}, mask {mask.shape}")
    return np.where(mask != 0, x, b)


def l2_norm(x) -> float:
    """Plain sum-of-squares norm (no rescaling; entries below ~1e-154 underflow)."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.sum(x * x)))


def batch_l2_norm(x: np.ndarray) -> np.ndarray:
    """Per-sample L2 norm over the last two axes."""
    return np.sqrt(np.sum(x * x, axis=(-2, -1)))


def relative_residual(r, f_eff) -> float:
    """``||r|| / ||f_eff||``; raises :class:`DegenerateProblemError` if ``f_eff = 0``."""
    den = l2_norm(f_eff)
    if den == 0.0:
        raise DegenerateProblemError("effective right-hand side is zero")
    return l2_norm(r) / den


# --- file I/O -------------------------------------------------------------

def write_field(path, x) -> None:
    """Write a single field as UGF1: magic, uint32 LE side, n*n LE float64."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GridSizeError(f"expected an (n, n) field, got shape {a.shape}")
    n = check_size(a.shape[0])
    with open(path, "wb") as fh:
        fh.write(UGF_MAGIC)
        fh.write(struct.pack("<I", n))
        fh.write(a.astype("<f8", copy=False).tobytes(order="C"))


def read_field(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise FieldFormatError(f"{path}: truncated header")
    if data[:4] != UGF_MAGIC:
        raise FieldFormatError(f"{path}: bad magic {data[:4]!r}")
    (n,) = struct.unpack("<I", data[4:8])
    if not is_valid_size(n):
        raise GridSizeError(f"{path}: invalid grid size {n}")
    expected = 8 + 8 * n * n
    if len(data) != expected:
        raise FieldFormatError(
            f"{path}: expected {expected} bytes for n={n}, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=8).reshape(n, n).astype(np.float64)


def read_pgm_mask(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5); nonzero pixels are interior."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FieldFormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FieldFormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise FieldFormatError(f"{path}: only 8-bit PGM supported")
    if width != height:
        raise GridSizeError(f"{path}: mask must be square, got {width}x{height}")
    check_size(width)
    pos += 1  # single whitespace byte after maxval
    body = data[pos:pos + width * height]
    if len(body) != width * height:
        raise FieldFormatError(f"{path}: truncated PGM payload")
    pix = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return as_mask(pix)


def write_pgm_mask(path, mask) -> None:
    m = np.asarray(mask)
    n = m.shape[0]
    header = f"P5\n{n} {n}\n255\n".encode("ascii")
    Path(path).write_bytes(header + ((m != 0) * 255).astype(np.uint8).tobytes())


def load_mask(path) -> np.ndarray:
    """Load a mask from either a UGF1 field or a PGM image."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == UGF_MAGIC:
        return as_mask(read_field(path))
    return read_pgm_mask(path)
