"""Rigid in-plane motion and k-space motion-event corruption.

Each motion event freezes one rigid transform over a contiguous block of ky
lines: those lines of the measurement are replaced by the measurement of the
moved image. Events are defined on line indices before masking, so the same
schedule composes with any sampling pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MGREImage, RngStream
from .forward import KSpaceSet, MeasurementOperator, add_noise

__all__ = [
    "RigidMotion",
    "MotionEvent",
    "MotionSchedule",
    "MotionConfig",
    "apply_rigid",
    "sample_schedule",
    "corrupt",
    "save_schedule",
    "load_schedule",
]


@dataclass(frozen=True)
class RigidMotion:
    """In-plane shift (voxels) and rotation (degrees).

    Scheduled corruption stays inside |angle| <= 30 and |shift| <= H/4
    (checked by `corrupt`); the transform itself handles any angle.
    """

    dx: float = 0.0
    dy: float = 0.0
    angle: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.dx == 0.0 and self.dy == 0.0 and self.angle == 0.0


@dataclass(frozen=True)
class MotionEvent:
    """One transform applied over a contiguous ky-line block [start, start+length)."""

    transform: RigidMotion
    start: int
    length: int

    def __post_init__(self):
        if self.start < 0 or self.length < 1:
            raise ValueError("event block must be a nonempty range of lines")

    @property
    def lines(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.length)


@dataclass(frozen=True)
class MotionSchedule:
    events: tuple[MotionEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        spans = sorted((e.start, e.start + e.length) for e in self.events)
        for (_, stop), (nxt, _) in zip(spans, spans[1:]):
            if nxt < stop:
                raise ValueError("motion-event blocks overlap")

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class MotionConfig:
    """Randomized-schedule settings: count, per-event duration and amplitudes."""

    l_max: int = 3
    duration_frac: tuple[float, float] = (0.05, 0.20)
    max_shift: float = 5.0  # voxels
    max_angle: float = 5.0  # degrees

    def __post_init__(self):
        lo, hi = self.duration_frac
        if not (0 < lo <= hi <= 1):
            raise ValueError("duration_frac must satisfy 0 < lo <= hi <= 1")
        if self.l_max < 0 or self.max_shift < 0 or self.max_angle < 0:
            raise ValueError("negative motion config values")
        if self.max_angle > 30.0:
            raise ValueError("max_angle exceeds the 30-degree envelope")


def _rotate_bilinear(arr: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate each echo about the grid center; bilinear, zero outside.

    Positive angles follow the rot90 orientation: a 90-degree rotation equals
    the exact index permutation on a square grid.
    """
    _, h, w = arr.shape
    th = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    dr, dc = rr - cy, cc - cx
    src_r = np.cos(th) * dr + np.sin(th) * dc + cy
    src_c = -np.sin(th) * dr + np.cos(th) * dc + cx
    r0 = np.floor(src_r).astype(int)
    c0 = np.floor(src_c).astype(int)
    fr = src_r - r0
    fc = src_c - c0

    out = np.zeros_like(arr)
    for (ro, co), wgt in (
        ((0, 0), (1 - fr) * (1 - fc)),
        ((0, 1), (1 - fr) * fc),
        ((1, 0), fr * (1 - fc)),
        ((1, 1), fr * fc),
    ):
        rs, cs = r0 + ro, c0 + co
        ok = (rs >= 0) & (rs < h) & (cs >= 0) & (cs < w)
        rs_c = np.clip(rs, 0, h - 1)
        cs_c = np.clip(cs, 0, w - 1)
        out += np.where(ok, wgt, 0.0)[None] * arr[:, rs_c, cs_c]
    return out


def _translate_fourier(arr: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Subpixel circular translation via a Fourier phase ramp (exact)."""
    _, h, w = arr.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    ramp = np.exp(-2j * np.pi * (fy * dy + fx * dx))
    return np.fft.ifft2(np.fft.fft2(arr, axes=(-2, -1)) * ramp[None], axes=(-2, -1))


def apply_rigid(x, m: RigidMotion):
    """Rotate (bilinear, about the center) then translate (Fourier, subpixel).

    The same transform is applied to every echo. The identity transform
    returns the input unchanged.
    """
    is_image = isinstance(x, MGREImage)
    arr = x.data if is_image else np.asarray(x, dtype=np.complex128)
    if arr.ndim != 3:
        raise ValueError("expected an (echoes, H, W) image")
    if m.is_identity:
        return x
    h = arr.shape[1]
    if max(abs(m.dx), abs(m.dy)) > h / 4:
        raise ValueError(f"|shift| exceeds H/4 = {h / 4}")
    out = arr
    if m.angle != 0.0:
        out = _rotate_bilinear(out, m.angle)
    if m.dx != 0.0 or m.dy != 0.0:
        out = _translate_fourier(out, m.dx, m.dy)
    return MGREImage(out, x.echo_times) if is_image else out


def sample_schedule(cfg: MotionConfig, n_lines: int, rng: RngStream) -> MotionSchedule:
    """Random schedule: L ~ U{1..l_max} events with uniform durations/amplitudes.

    Block lengths are drawn once (uniform fractions of n_lines); starts are
    redrawn until the blocks are pairwise disjoint, so the length distribution
    is not biased by the disjointness constraint.
    """
    if cfg.l_max == 0:
        return MotionSchedule(())
    n_events = int(rng.integers(1, cfg.l_max + 1))
    fracs = rng.uniform(cfg.duration_frac[0], cfg.duration_frac[1], n_events)
    lengths = np.maximum(1, np.rint(fracs * n_lines).astype(int))
    if int(lengths.sum()) > 0.8 * n_lines:
        raise ValueError(
            f"infeasible schedule: {int(lengths.sum())} lines requested "
            f"of {n_lines} (over the 80% budget)"
        )
    for _ in range(10_000):
        starts = np.array([int(rng.integers(0, n_lines - l + 1)) for l in lengths])
        spans = sorted(zip(starts, starts + lengths))
        if all(b0 >= a1 for (_, a1), (b0, _) in zip(spans, spans[1:])):
            break
    else:
        raise ValueError("could not place disjoint motion events")
    events = []
    for start, length in zip(starts, lengths):
        dx = float(rng.uniform(-cfg.max_shift, cfg.max_shift))
        dy = float(rng.uniform(-cfg.max_shift, cfg.max_shift))
        ang = float(rng.uniform(-cfg.max_angle, cfg.max_angle))
        events.append(MotionEvent(RigidMotion(dx, dy, ang), int(start), int(length)))
    return MotionSchedule(tuple(events))


def corrupt(
    op: MeasurementOperator,
    x,
    sched: MotionSchedule,
    snr_db: float,
    rng: RngStream,
) -> KSpaceSet:
    """Measure x, replace event line blocks by measurements of the moved image,
    then add calibrated noise. Whole lines are swapped across all coils and
    echoes; there is no blending."""
    h = op.grid_shape[0]
    for ev in sched.events:
        if ev.start + ev.length > h:
            raise ValueError("motion event exceeds the ky range")
        t = ev.transform
        if abs(t.angle) > 30.0 or max(abs(t.dx), abs(t.dy)) > h / 4:
            raise ValueError("event transform outside the |angle|<=30, |shift|<=H/4 envelope")
    y = op.apply(x)
    if len(sched) == 0:
        return add_noise(y, snr_db, rng)
    data = y.data.copy()
    for ev in sched.events:
        moved = apply_rigid(x, ev.transform)
        y_moved = op.apply(moved)
        data[:, :, ev.lines, :] = y_moved.data[:, :, ev.lines, :]
    return add_noise(KSpaceSet(data=data, mask=y.mask), snr_db, rng)


def save_schedule(path, sched: MotionSchedule) -> None:
    """One event per line: start, length, dx, dy, angle."""
    lines = ["# start\tlen\tdx\tdy\tangle"]
    for ev in sched.events:
        t = ev.transform
        lines.append(f"{ev.start}\t{ev.length}\t{t.dx!r}\t{t.dy!r}\t{t.angle!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_schedule(path) -> MotionSchedule:
    events = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            start, length, dx, dy, angle = line.split("\t")
            events.append(
                MotionEvent(
                    RigidMotion(float(dx), float(dy), float(angle)),
                    int(start),
                    int(length),
                )
            )
    return MotionSchedule(tuple(events))
