import numpy as np
import pytest
from scipy import stats

from qmri.core import RngStream
from qmri.forward import MeasurementOperator, add_noise, make_mask
from qmri.motion import (
    MotionConfig,
    MotionEvent,
    MotionSchedule,
    RigidMotion,
    apply_rigid,
    corrupt,
    load_schedule,
    sample_schedule,
    save_schedule,
)
from qmri.phantom import PhantomSpec, forward_biophysics, make_coil_maps, make_qmaps


def toy_problem(h=32, echoes=4, coils=3, accel=2, cap=8, seed=42):
    spec = PhantomSpec(height=h, width=h, n_echoes=echoes, n_coils=coils, rng=RngStream(seed))
    coils_m = make_coil_maps(spec)
    img = forward_biophysics(make_qmaps(spec), spec.echo_times)
    mask = make_mask(h, accel, cap, RngStream(seed + 1))
    return MeasurementOperator(coils=coils_m, mask=mask), img


class TestApplyRigid:
    def test_identity_returns_input_unchanged(self):
        x = RngStream(1).complex_normal((3, 16, 16))
        assert apply_rigid(x, RigidMotion()) is x

    def test_integer_shift_equals_circular_roll(self):
        x = RngStream(2).complex_normal((3, 16, 16))
        out = apply_rigid(x, RigidMotion(dx=3))
        assert np.abs(out - np.roll(x, 3, axis=2)).max() < 1e-12
        out = apply_rigid(x, RigidMotion(dy=-2))
        assert np.abs(out - np.roll(x, -2, axis=1)).max() < 1e-12

    def test_quarter_turn_matches_index_permutation(self):
        x = RngStream(3).complex_normal((2, 20, 20))
        out = apply_rigid(x, RigidMotion(angle=90.0))
        oracle = np.stack([np.rot90(x[k]) for k in range(2)])
        assert np.abs(out - oracle).max() < 1e-10

    def test_translation_preserves_energy(self):
        x = RngStream(4).complex_normal((2, 16, 16))
        out = apply_rigid(x, RigidMotion(dx=1.3, dy=-0.7))
        assert abs(np.linalg.norm(out) - np.linalg.norm(x)) <= 1e-10 * np.linalg.norm(x)

    def test_shift_bound_enforced(self):
        x = np.zeros((1, 16, 16), dtype=complex)
        with pytest.raises(ValueError, match="H/4"):
            apply_rigid(x, RigidMotion(dx=8.0))


class TestSampleSchedule:
    def test_l_max_zero_gives_empty(self):
        assert len(sample_schedule(MotionConfig(l_max=0), 96, RngStream(1))) == 0

    def test_reproducible(self):
        a = sample_schedule(MotionConfig(), 96, RngStream(7))
        b = sample_schedule(MotionConfig(), 96, RngStream(7))
        assert a == b

    def test_events_disjoint_and_in_range(self):
        for seed in range(50):
            s = sample_schedule(MotionConfig(l_max=3), 64, RngStream(seed))
            taken = np.zeros(64, dtype=bool)
            for ev in s.events:
                assert ev.start >= 0 and ev.start + ev.length <= 64
                assert not taken[ev.lines].any()
                taken[ev.lines] = True

    def test_block_length_distribution_uniform(self):
        # tall line count so rounding cannot bias the KS statistic
        n_lines = 4096
        cfg = MotionConfig(l_max=1, duration_frac=(0.05, 0.20))
        fracs = []
        rng = RngStream(123)
        for k in range(10_000):
            s = sample_schedule(cfg, n_lines, rng.child(k))
            fracs.extend(ev.length / n_lines for ev in s.events)
        res = stats.kstest(fracs, stats.uniform(loc=0.05, scale=0.15).cdf)
        assert res.pvalue > 0.01

    def test_infeasible_duration_rejected(self):
        cfg = MotionConfig(l_max=3, duration_frac=(0.9, 0.95))
        with pytest.raises(ValueError, match="infeasible"):
            # l_max=3 with ~90% each always exceeds the 80% budget
            sample_schedule(cfg, 100, RngStream(0))

    def test_max_angle_envelope(self):
        with pytest.raises(ValueError, match="envelope"):
            MotionConfig(max_angle=45.0)


class TestCorrupt:
    def test_empty_schedule_equals_plain_measurement(self):
        op, img = toy_problem()
        y1 = corrupt(op, img, MotionSchedule(()), 40.0, RngStream(5))
        y2 = add_noise(op.apply(img), 40.0, RngStream(5))
        assert np.array_equal(y1.data, y2.data)

    def test_identity_transforms_equal_motion_free(self):
        op, img = toy_problem()
        sched = MotionSchedule(
            (MotionEvent(RigidMotion(), 0, 8), MotionEvent(RigidMotion(), 16, 4))
        )
        y1 = corrupt(op, img, sched, 40.0, RngStream(5))
        y2 = add_noise(op.apply(img), 40.0, RngStream(5))
        assert np.array_equal(y1.data, y2.data)

    def test_full_coverage_translation_matches_phase_ramp_oracle(self):
        op, img = toy_problem()
        h = img.data.shape[1]
        dx, dy = 2.5, -1.25
        sched = MotionSchedule((MotionEvent(RigidMotion(dx=dx, dy=dy), 0, h),))
        y = corrupt(op, img, sched, np.inf, RngStream(5))
        # independent subpixel-shift oracle: explicit ramp in the plain FFT domain
        fy = np.fft.fftfreq(h)[:, None]
        fx = np.fft.fftfreq(img.data.shape[2])[None, :]
        ramp = np.exp(-2j * np.pi * (fy * dy + fx * dx))
        shifted = np.fft.ifft2(np.fft.fft2(img.data, axes=(-2, -1)) * ramp, axes=(-2, -1))
        oracle = op.apply(shifted)
        scale = np.abs(oracle.data).max()
        assert np.abs(y.data - oracle.data).max() <= 1e-10 * scale

    def test_linear_in_image_for_fixed_schedule(self):
        op, img = toy_problem()
        sched = MotionSchedule((MotionEvent(RigidMotion(dx=2, angle=4.0), 4, 10),))
        xa = RngStream(11).complex_normal(img.data.shape)
        xb = RngStream(12).complex_normal(img.data.shape)
        ya = corrupt(op, xa, sched, np.inf, RngStream(5)).data
        yb = corrupt(op, xb, sched, np.inf, RngStream(5)).data
        yab = corrupt(op, xa + 0.7 * xb, sched, np.inf, RngStream(5)).data
        assert np.abs(yab - (ya + 0.7 * yb)).max() <= 1e-10 * np.abs(yab).max()

    def test_linewise_provenance(self):
        op, img = toy_problem()
        ev = MotionEvent(RigidMotion(dx=1.5, dy=0.5, angle=2.0), 6, 9)
        y = corrupt(op, img, MotionSchedule((ev,)), np.inf, RngStream(5))
        y_still = op.apply(img).data
        y_moved = op.apply(apply_rigid(img, ev.transform)).data
        moved_lines = np.zeros(img.data.shape[1], dtype=bool)
        moved_lines[ev.lines] = True
        assert np.array_equal(y.data[:, :, moved_lines, :], y_moved[:, :, moved_lines, :])
        assert np.array_equal(y.data[:, :, ~moved_lines, :], y_still[:, :, ~moved_lines, :])

    def test_envelope_enforced(self):
        op, img = toy_problem()
        sched = MotionSchedule((MotionEvent(RigidMotion(dx=20.0), 0, 4),))
        with pytest.raises(ValueError, match="envelope"):
            corrupt(op, img, sched, np.inf, RngStream(0))

    def test_overlapping_events_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            MotionSchedule(
                (MotionEvent(RigidMotion(), 0, 10), MotionEvent(RigidMotion(), 5, 10))
            )


def test_schedule_manifest_round_trip(tmp_path):
    sched = MotionSchedule(
        (
            MotionEvent(RigidMotion(1.25, -2.5, 3.75), 3, 7),
            MotionEvent(RigidMotion(-0.5, 0.0, -1.0), 20, 4),
        )
    )
    path = tmp_path / "sched.txt"
    save_schedule(path, sched)
    assert load_schedule(path) == sched
