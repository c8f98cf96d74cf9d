import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ugrid.grid import (DegenerateProblemError, FieldFormatError, GridSizeError, as_mask,
                        check_size, is_valid_size, l2_norm, load_mask, masked_compose,
                        read_field, read_pgm_mask, relative_residual, write_field,
                        write_pgm_mask)


def loop_norm(x):
    s = 0.0
    for v in np.asarray(x).ravel():
        s += v * v
    return s ** 0.5


@pytest.mark.parametrize("n, ok", [(5, True), (9, True), (17, True), (257, True),
                                   (3, False), (4, False), (6, False), (8, False), (10, False)])
def test_valid_sizes(n, ok):
    assert is_valid_size(n) is ok


def test_check_size_rejects():
    with pytest.raises(GridSizeError):
        check_size(6)


def test_compose_all_boundary():
    out = masked_compose(np.full((5, 5), 5.0), np.full((5, 5), 2.0), np.zeros((5, 5)))
    assert np.all(out == 2.0)


def test_compose_single_interior_point():
    mask = np.zeros((5, 5))
    mask[2, 3] = 1
    out = masked_compose(np.full((5, 5), 5.0), np.full((5, 5), 2.0), mask)
    assert out[2, 3] == 5.0
    assert np.count_nonzero(out == 2.0) == 24


def test_compose_matches_loop(rng):
    x, b = rng.normal(size=(2, 9, 9))
    mask = rng.integers(0, 2, (9, 9))
    out = masked_compose(x, b, mask)
    for i in range(9):
        for j in range(9):
            assert out[i, j] == (x[i, j] if mask[i, j] else b[i, j])


def test_compose_shape_mismatch():
    with pytest.raises(GridSizeError):
        masked_compose(np.zeros((5, 5)), np.zeros((9, 9)), np.zeros((5, 5)))


@given(arrays(np.float64, (9, 9), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (9, 9), elements=st.floats(-1e3, 1e3)),
       arrays(np.int8, (9, 9), elements=st.integers(0, 1)))
def test_compose_idempotent(x, b, mask):
    once = masked_compose(x, b, mask)
    assert np.array_equal(masked_compose(once, b, mask), once)
    assert np.array_equal(once[mask == 0], b[mask == 0])


def test_norm_trivial():
    assert l2_norm(np.zeros((5, 5))) == 0.0
    x = np.zeros((5, 5))
    x[1, 2] = 3.0
    assert l2_norm(x) == 3.0


def test_norm_matches_loop(rng):
    x = rng.normal(size=(5, 5))
    assert l2_norm(x) == pytest.approx(loop_norm(x), rel=1e-14)


# squares of |x| < ~1e-154 underflow; the norm is a plain sum of squares
representable = st.floats(-1e6, 1e6).filter(lambda v: v == 0.0 or abs(v) > 1e-100)


@given(arrays(np.float64, (5, 5), elements=representable), st.just(0.0) | st.floats(1e-50, 1e3))
def test_norm_homogeneous(x, a):
    assert l2_norm(a * x) == pytest.approx(a * l2_norm(x), rel=1e-12, abs=1e-300)


def test_relative_residual_cases(rng):
    f = rng.normal(size=(9, 9))
    assert relative_residual(np.zeros((9, 9)), f) == 0.0
    assert relative_residual(f, f) == 1.0
    r = rng.normal(size=(9, 9))
    assert relative_residual(r, f) == pytest.approx(loop_norm(r) / loop_norm(f), rel=1e-13)


def test_relative_residual_degenerate():
    with pytest.raises(DegenerateProblemError):
        relative_residual(np.ones((5, 5)), np.zeros((5, 5)))


def test_ugf_roundtrip(tmp_path, rng):
    x = rng.normal(size=(5, 5))
    write_field(tmp_path / "x.ugf", x)
    y = read_field(tmp_path / "x.ugf")
    assert y.tobytes() == x.tobytes()


def test_ugf_layout(tmp_path):
    x = np.arange(25, dtype=np.float64).reshape(5, 5)
    write_field(tmp_path / "x.ugf", x)
    raw = (tmp_path / "x.ugf").read_bytes()
    assert raw[:4] == b"UGF1"
    assert struct.unpack("<I", raw[4:8]) == (5,)
    assert struct.unpack("<25d", raw[8:]) == tuple(range(25))


def test_ugf_bad_magic(tmp_path):
    (tmp_path / "x.ugf").write_bytes(b"NOPE" + struct.pack("<I", 5) + bytes(200))
    with pytest.raises(FieldFormatError):
        read_field(tmp_path / "x.ugf")


def test_ugf_invalid_size(tmp_path):
    (tmp_path / "x.ugf").write_bytes(b"UGF1" + struct.pack("<I", 6) + bytes(8 * 36))
    with pytest.raises(GridSizeError):
        read_field(tmp_path / "x.ugf")


def test_ugf_truncated(tmp_path):
    (tmp_path / "x.ugf").write_bytes(b"UGF1" + struct.pack("<I", 5) + bytes(100))
    with pytest.raises(FieldFormatError):
        read_field(tmp_path / "x.ugf")


def test_mask_clears_frame():
    m = as_mask(np.ones((9, 9)))
    assert m[0].sum() == 0 and m[:, -1].sum() == 0
    assert m.sum() == 49


def test_pgm_roundtrip(tmp_path, rng):
    m = as_mask(rng.integers(0, 2, (17, 17)))
    write_pgm_mask(tmp_path / "m.pgm", m)
    assert np.array_equal(read_pgm_mask(tmp_path / "m.pgm"), m)
    assert np.array_equal(load_mask(tmp_path / "m.pgm"), m)


def test_pgm_with_comment(tmp_path):
    body = bytes([0] * 5 + ([0] + [200] * 3 + [0]) * 3 + [0] * 5)
    (tmp_path / "m.pgm").write_bytes(b"P5\n# a comment\n5 5\n255\n" + body)
    assert read_pgm_mask(tmp_path / "m.pgm").sum() == 9


def test_load_mask_from_ugf(tmp_path):
    write_field(tmp_path / "m.ugf", np.ones((5, 5)))
    assert load_mask(tmp_path / "m.ugf").sum() == 9


@settings(max_examples=25)
@given(st.integers(2, 5), st.data())
def test_ugf_roundtrip_property(k, data):
    n = 2 ** k + 1
    x = data.draw(arrays(np.float64, (n, n), elements=st.floats(allow_nan=False,
                                                                allow_infinity=False)))
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as d:
        write_field(Path(d) / "x.ugf", x)
        assert read_field(Path(d) / "x.ugf").tobytes() == x.tobytes()
