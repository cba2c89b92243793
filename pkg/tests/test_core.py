import numpy as np
import pytest

from qmri.core import (
    ArrayFormatError,
    MGREImage,
    QMaps,
    RngStream,
    read_array,
    write_array,
)


class TestQar:
    def test_2x2_identity_is_56_bytes(self, tmp_path):
        path = tmp_path / "eye.qar"
        write_array(path, np.eye(2))
        assert path.stat().st_size == 4 + 1 + 1 + 2 + 16 + 32

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        a = (rng.standard_normal((3, 4, 5)) + 1j * rng.standard_normal((3, 4, 5))).astype(
            np.complex64
        )
        path = tmp_path / "c.qar"
        write_array(path, a)
        b = read_array(path)
        assert b.dtype == a.dtype
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("dtype", [np.float32, np.float64, np.complex64, np.complex128])
    @pytest.mark.parametrize("shape", [(7,), (3, 5), (2, 3, 4), (2, 2, 3, 3)])
    def test_round_trip_all_dtypes_shapes(self, tmp_path, dtype, shape):
        rng = np.random.default_rng(hash((str(dtype), shape)) % 2**32)
        a = rng.standard_normal(shape)
        if np.issubdtype(dtype, np.complexfloating):
            a = a + 1j * rng.standard_normal(shape)
        a = a.astype(dtype)
        path = tmp_path / "x.qar"
        write_array(path, a)
        b = read_array(path)
        assert b.shape == a.shape and b.dtype == a.dtype
        assert a.tobytes() == b.tobytes()

    def test_zero_dim_rejected(self, tmp_path):
        with pytest.raises(ArrayFormatError, match="shape"):
            write_array(tmp_path / "s.qar", np.float64(3.0))

    def test_five_dims_rejected(self, tmp_path):
        with pytest.raises(ArrayFormatError, match="shape"):
            write_array(tmp_path / "s.qar", np.zeros((1, 1, 1, 1, 1)))

    def test_int_dtype_rejected(self, tmp_path):
        with pytest.raises(ArrayFormatError, match="dtype"):
            write_array(tmp_path / "i.qar", np.arange(4))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.qar"
        write_array(path, np.zeros(3))
        raw = bytearray(path.read_bytes())
        raw[0:4] = b"XAR1"
        path.write_bytes(bytes(raw))
        with pytest.raises(ArrayFormatError, match="magic"):
            read_array(path)

    def test_unknown_dtype_code(self, tmp_path):
        path = tmp_path / "bad.qar"
        write_array(path, np.zeros(3))
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(ArrayFormatError, match="dtype code"):
            read_array(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "bad.qar"
        write_array(path, np.zeros(8))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ArrayFormatError, match="truncated"):
            read_array(path)


class TestRngStream:
    def test_equal_streams_equal_draws(self):
        a = RngStream(99, 7).uniform(size=10_000)
        b = RngStream(99, 7).uniform(size=10_000)
        assert np.array_equal(a, b)

    def test_different_stream_ids_differ(self):
        a = RngStream(99, 7).uniform(size=100)
        b = RngStream(99, 8).uniform(size=100)
        assert not np.array_equal(a, b)

    def test_child_streams_reproducible_and_distinct(self):
        r = RngStream(5)
        c1 = r.child(3).normal(50)
        c2 = RngStream(5).child(3).normal(50)
        assert np.array_equal(c1, c2)
        assert not np.array_equal(c1, RngStream(5).child(4).normal(50))


class TestTypes:
    def test_mgre_validation(self):
        data = np.zeros((3, 4, 4), dtype=complex)
        t = np.array([0.004, 0.008, 0.012])
        img = MGREImage(data, t)
        assert img.n_echoes == 3 and img.grid_shape == (4, 4)
        with pytest.raises(ValueError):
            MGREImage(data, t[:2])
        with pytest.raises(ValueError):
            MGREImage(data, np.array([0.0, 0.004, 0.008]))
        with pytest.raises(ValueError):
            MGREImage(data, t[::-1])

    def test_qmaps_invariants(self):
        rem = np.zeros((4, 4), dtype=bool)
        rem[1:3, 1:3] = True
        x0 = np.where(rem, 10.0, 0.0)
        r2s = np.where(rem, 20.0, 0.0)
        omega = np.zeros((4, 4))
        f = np.ones((2, 4, 4), dtype=complex)
        QMaps(x0, r2s, omega, f, rem)
        with pytest.raises(ValueError, match="outside"):
            QMaps(np.full((4, 4), 10.0), r2s, omega, f, rem)
        with pytest.raises(ValueError, match="<= 1"):
            QMaps(x0, r2s, omega, 1.5 * f, rem)
        with pytest.raises(ValueError, match="nonnegative"):
            QMaps(-x0, r2s, omega, f, rem)
