import math

import numpy as np
import pytest

from qmri.core import RngStream
from qmri.phantom import (
    PhantomSpec,
    forward_biophysics,
    make_coil_maps,
    make_qmaps,
    unnormalized_sinc,
)


def small_spec(seed=42, **kw):
    args = dict(height=32, width=32, n_echoes=10, n_coils=4, rng=RngStream(seed))
    args.update(kw)
    return PhantomSpec(**args)


class TestMakeQmaps:
    def test_zero_gradient_range_gives_flat_attenuation(self):
        q = make_qmaps(small_spec(bg_gradient_range=(0.0, 0.0)))
        assert np.array_equal(q.f_of_t, np.ones_like(q.f_of_t))

    def test_maps_zero_outside_mask(self):
        q = make_qmaps(small_spec())
        out = ~q.rem
        assert np.all(q.x0[out] == 0) and np.all(q.r2s[out] == 0)

    def test_fixed_seed_bit_identical(self):
        q1 = make_qmaps(small_spec(seed=42))
        q2 = make_qmaps(small_spec(seed=42))
        for a, b in [(q1.x0, q2.x0), (q1.r2s, q2.r2s), (q1.omega, q2.omega), (q1.f_of_t, q2.f_of_t)]:
            assert np.array_equal(a, b)

    def test_degenerate_geometry_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            make_qmaps(small_spec(height=4))

    def test_attenuation_magnitude_bounded(self):
        q = make_qmaps(small_spec())
        assert np.all(np.abs(q.f_of_t) <= 1.0 + 1e-12)


class TestCoilMaps:
    def test_single_coil_is_unity(self):
        c = make_coil_maps(small_spec(n_coils=1))
        assert np.array_equal(c.s, np.ones_like(c.s))

    def test_sum_of_squares_normalized(self):
        c = make_coil_maps(small_spec(n_coils=4))
        ssq = np.sum(np.abs(c.s) ** 2, axis=0)
        assert np.max(np.abs(ssq - 1.0)) < 1e-12

    def test_reproducible(self):
        a = make_coil_maps(small_spec(seed=3)).s
        b = make_coil_maps(small_spec(seed=3)).s
        assert np.array_equal(a, b)


class TestForwardBiophysics:
    def test_identity_case(self):
        q = make_qmaps(small_spec(bg_gradient_range=(0.0, 0.0)))
        # constant maps inside the mask
        x0 = np.where(q.rem, 1.0, 0.0)
        zeros = np.zeros_like(x0)
        from qmri.core import QMaps

        q1 = QMaps(x0, zeros, zeros, np.ones_like(q.f_of_t), q.rem)
        t = small_spec().echo_times
        img = forward_biophysics(q1, t)
        assert np.allclose(img.data[:, q.rem], 1.0)

    def test_scalar_magnitude_oracle(self):
        # independent one-line evaluation of the decay model
        expected = 100.0 * math.exp(-25.0 * 0.040)
        rem = np.ones((8, 8), dtype=bool)
        from qmri.core import QMaps

        q = QMaps(
            np.full((8, 8), 100.0),
            np.full((8, 8), 25.0),
            np.zeros((8, 8)),
            np.ones((1, 8, 8), dtype=complex),
            rem,
        )
        img = forward_biophysics(q, np.array([0.040]))
        assert abs(abs(img.data[0, 0, 0]) - expected) < 1e-10
        assert abs(expected - 36.7879) < 5e-5

    def test_magnitude_invariant_to_omega(self):
        spec = small_spec()
        q = make_qmaps(spec)
        from qmri.core import QMaps

        q2 = QMaps(q.x0, q.r2s, q.omega + 17.0, q.f_of_t, q.rem)
        a = forward_biophysics(q, spec.echo_times)
        b = forward_biophysics(q2, spec.echo_times)
        assert np.allclose(np.abs(a.data), np.abs(b.data), atol=1e-12)

    def test_magnitude_nonincreasing_within_main_lobe(self):
        spec = small_spec(bg_gradient_range=(0.0, 40.0))
        q = make_qmaps(spec)
        img = forward_biophysics(q, spec.echo_times)
        mags = np.abs(img.data)[:, q.rem]
        assert np.all(np.diff(mags, axis=0) <= 1e-12)


def test_sinc_limit():
    assert unnormalized_sinc(0.0) == 1.0
    z = np.linspace(-3, 3, 101)
    assert np.allclose(unnormalized_sinc(z)[z != 0], np.sin(z[z != 0]) / z[z != 0])
