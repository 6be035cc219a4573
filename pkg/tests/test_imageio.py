"""Binary netpbm round trips and header edge cases."""

import numpy as np
import pytest

from cropseg.imageio import read_pgm, read_ppm, write_pgm, write_ppm


def test_pgm_round_trip(tmp_path, rng):
    arr = rng.integers(0, 256, size=(7, 5), dtype=np.uint8)
    p = tmp_path / "a.pgm"
    write_pgm(p, arr)
    np.testing.assert_array_equal(read_pgm(p), arr)


def test_ppm_round_trip(tmp_path, rng):
    arr = rng.integers(0, 256, size=(4, 6, 3), dtype=np.uint8)
    p = tmp_path / "a.ppm"
    write_ppm(p, arr)
    np.testing.assert_array_equal(read_ppm(p), arr)


def test_header_is_canonical(tmp_path):
    p = tmp_path / "a.pgm"
    write_pgm(p, np.zeros((2, 3), dtype=np.uint8))
    assert p.read_bytes() == b"P5\n3 2\n255\n" + b"\x00" * 6


def test_comments_and_extra_whitespace_tolerated(tmp_path):
    p = tmp_path / "weird.pgm"
    p.write_bytes(b"P5 # magic\n# a comment line\n  3\t2 # dims\n255\n" + bytes(range(6)))
    np.testing.assert_array_equal(read_pgm(p), np.arange(6, dtype=np.uint8).reshape(2, 3))


def test_wrong_magic_rejected(tmp_path):
    p = tmp_path / "a.pgm"
    write_pgm(p, np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError, match="P6"):
        read_ppm(p)


def test_unsupported_maxval(tmp_path):
    p = tmp_path / "deep.pgm"
    p.write_bytes(b"P5\n2 2\n65535\n" + b"\x00" * 8)
    with pytest.raises(ValueError, match="maxval"):
        read_pgm(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "cut.pgm"
    p.write_bytes(b"P5\n3")
    with pytest.raises(ValueError, match="truncated"):
        read_pgm(p)


def test_shape_validation():
    with pytest.raises(ValueError, match="2-D"):
        write_pgm("x.pgm", np.zeros((2, 2, 3), dtype=np.uint8))
    with pytest.raises(ValueError, match=r"H,W,3"):
        write_ppm("x.ppm", np.zeros((2, 2), dtype=np.uint8))
