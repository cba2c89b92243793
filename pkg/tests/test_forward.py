import numpy as np
import pytest

from qmri.core import RngStream
from qmri.forward import KSpaceSet, MeasurementOperator, add_noise, make_mask
from qmri.phantom import PhantomSpec, forward_biophysics, make_coil_maps, make_qmaps


def build_problem(h=32, coils=4, echoes=4, accel=2, cap=8, seed=0):
    spec = PhantomSpec(height=h, width=h, n_echoes=echoes, n_coils=coils, rng=RngStream(seed))
    coil_maps = make_coil_maps(spec)
    mask = make_mask(h, accel, cap, RngStream(seed + 1))
    op = MeasurementOperator(coils=coil_maps, mask=mask)
    img = forward_biophysics(make_qmaps(spec), spec.echo_times)
    return op, img


class TestMakeMask:
    def test_x2_central60_of_192(self):
        m = make_mask(192, 2, 60, RngStream(1))
        assert m.n_kept == 96
        assert m.central_block == 60
        center = m.keep[192 // 2 - 30 : 192 // 2 + 30]
        assert center.all()
        assert m.n_kept - 60 == 36

    def test_x8_cap_clips_to_budget(self):
        m = make_mask(192, 8, 60, RngStream(1))
        assert m.n_kept == 24 and m.central_block == 24

    def test_accel_1_keeps_all(self):
        m = make_mask(64, 1, 16, RngStream(0))
        assert m.keep.all()

    @pytest.mark.parametrize("accel", [2, 4, 8])
    def test_cardinality_exact(self, accel):
        m = make_mask(96, accel, 12, RngStream(5))
        assert m.n_kept == round(96 / accel)

    def test_budget_zero_rejected(self):
        with pytest.raises(ValueError):
            make_mask(4, 8, 0, RngStream(0))

    def test_reproducible(self):
        a = make_mask(64, 4, 8, RngStream(9)).keep
        b = make_mask(64, 4, 8, RngStream(9)).keep
        assert np.array_equal(a, b)


class TestOperator:
    def test_zero_image_zero_measurements(self):
        op, img = build_problem()
        y = op.apply(np.zeros_like(img.data))
        assert np.all(y.data == 0)

    def test_unitary_full_mask_recovery(self):
        op, img = build_problem(accel=1, cap=0, coils=1)
        rec = op.adjoint(op.apply(img))
        assert np.linalg.norm(rec - img.data) / np.linalg.norm(img.data) < 1e-12

    def test_multicoil_full_mask_recovery(self):
        op, img = build_problem(accel=1, cap=0, coils=4)
        rec = op.adjoint(op.apply(img))
        assert np.linalg.norm(rec - img.data) / np.linalg.norm(img.data) < 1e-12

    def test_adjoint_identity(self):
        op, img = build_problem(accel=4, cap=6)
        rng = RngStream(11)
        x = rng.complex_normal(img.data.shape)
        y = rng.complex_normal((op.coils.n_coils,) + img.data.shape)
        lhs = np.vdot(op.apply(x).data, y)
        rhs = np.vdot(x, op.adjoint(y))
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(op.apply(x).data) * np.linalg.norm(y)

    def test_operator_norm_at_most_one(self):
        op, img = build_problem(accel=2, cap=8)
        rng = RngStream(3)
        x = rng.complex_normal(img.data.shape)
        for _ in range(50):
            x = op.normal(x)
            x = x / np.linalg.norm(x)
        norm_sq = np.linalg.norm(op.apply(x).data) / np.linalg.norm(x)
        assert norm_sq <= 1 + 1e-6

    def test_measurements_zero_on_unkept_lines(self):
        op, img = build_problem(accel=4, cap=6)
        y = op.apply(img)
        assert np.all(y.data[:, :, ~op.mask.keep, :] == 0)

    def test_shape_mismatch_rejected(self):
        op, img = build_problem()
        with pytest.raises(ValueError):
            op.apply(np.zeros((2, 5, 5), dtype=complex))


class TestAddNoise:
    def test_realized_snr_close(self):
        op, img = build_problem(h=48, echoes=6)
        y = op.apply(img)
        realized = []
        for seed in range(100):
            yn = add_noise(y, 40.0, RngStream(seed, 77))
            e = yn.data - y.data
            realized.append(20 * np.log10(np.linalg.norm(y.data) / np.linalg.norm(e)))
        assert abs(np.mean(realized) - 40.0) < 0.5

    def test_infinite_snr_is_noop(self):
        op, img = build_problem()
        y = op.apply(img)
        assert add_noise(y, np.inf, RngStream(0)) is y

    def test_noise_only_on_kept_lines(self):
        op, img = build_problem(accel=4, cap=6)
        y = op.apply(img)
        yn = add_noise(y, 30.0, RngStream(5))
        e = yn.data - y.data
        assert np.all(e[:, :, ~op.mask.keep, :] == 0)
        assert np.any(e[:, :, op.mask.keep, :] != 0)

    def test_fixed_seed_identical(self):
        op, img = build_problem()
        y = op.apply(img)
        a = add_noise(y, 40.0, RngStream(21)).data
        b = add_noise(y, 40.0, RngStream(21)).data
        assert np.array_equal(a, b)

    def test_zero_measurements_rejected(self):
        op, img = build_problem()
        y = op.apply(np.zeros_like(img.data))
        with pytest.raises(ValueError, match="SNR"):
            add_noise(y, 40.0, RngStream(0))


def test_kspace_set_validates_mask_zeroes():
    op, img = build_problem(accel=4, cap=6)
    y = op.apply(img)
    bad = y.data.copy()
    bad[:, :, ~op.mask.keep, :] = 1.0
    with pytest.raises(ValueError, match="unkept"):
        KSpaceSet(data=bad, mask=op.mask)
