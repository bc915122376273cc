import struct
import time

import numpy as np
import pytest

from eomap import io as eio


def test_grid_roundtrip_bitwise(tmp_path):
    g = np.array([[1.5, -0.0], [3.25, 1e-30]], dtype=np.float32)
    eio.write_grid(g, tmp_path / "g.eomg")
    back = eio.read_grid(tmp_path / "g.eomg")
    assert back.dtype == np.float32 and back.tobytes() == g.tobytes()
    m = (np.random.default_rng(0).random((7, 5)) > 0.5).astype(np.uint8)
    eio.write_grid(m, tmp_path / "m.eomg")
    assert eio.read_grid(tmp_path / "m.eomg", np.uint8).tobytes() == m.tobytes()


def test_grid_errors(tmp_path):
    buf = eio.grid_bytes(np.zeros((2, 2), np.float32))
    with pytest.raises(ValueError, match="bad magic"):
        eio.grid_from_bytes(b"NOPE" + buf[4:])
    with pytest.raises(ValueError, match="truncated"):
        eio.grid_from_bytes(buf[:-1])
    with pytest.raises(ValueError, match="version"):
        eio.grid_from_bytes(buf[:4] + struct.pack("<H", 9) + buf[6:])
    with pytest.raises(ValueError, match="dtype mismatch"):
        eio.grid_from_bytes(buf, np.uint8)
    with pytest.raises(ValueError):
        eio.grid_bytes(np.array([[np.nan]]))


def test_header_layout():
    buf = eio.grid_bytes(np.zeros((3, 4), np.uint8))
    assert buf[:4] == b"EOMG"
    assert struct.unpack("<HBII", buf[4:15]) == (1, 0, 3, 4)
    assert len(buf) == 15 + 12


def test_large_grid_speed(tmp_path):
    g = np.random.default_rng(1).random((500, 500)).astype(np.float32)
    t0 = time.perf_counter()
    eio.write_grid(g, tmp_path / "big.eomg")
    back = eio.read_grid(tmp_path / "big.eomg")
    elapsed = time.perf_counter() - t0
    assert back.tobytes() == g.tobytes()
    print(f"500x500 round-trip {elapsed * 1000:.1f} ms")


def test_pnm_roundtrip(tmp_path):
    E = np.array([[0.0, 15.0], [30.0, 7.0]])
    gray = eio.eom_to_gray(E, 30)
    assert gray[0, 0] == 255 and gray[1, 0] == 0
    eio.write_pgm(tmp_path / "e.pgm", gray)
    assert np.array_equal(eio.read_pnm(tmp_path / "e.pgm"), gray)
    rgb = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    eio.write_ppm(tmp_path / "r.ppm", rgb)
    assert np.array_equal(eio.read_pnm(tmp_path / "r.ppm"), rgb)
