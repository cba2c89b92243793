"""Synthetic brain-like ground truth: tissue maps, coil maps, and clean images.

The field-inhomogeneity attenuation is modeled analytically as sinc(g*t) for a
smooth voxel-wise background-gradient rate g; the array stays complex-typed so
a measured attenuation function can drop in later.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import MGREImage, QMaps, RngStream

__all__ = [
    "PhantomSpec",
    "CoilMaps",
    "make_qmaps",
    "make_coil_maps",
    "forward_biophysics",
]


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, echo schedule, value ranges and seeding for one phantom slice."""

    height: int = 96
    width: int = 96
    n_echoes: int = 10
    t1: float = 0.004  # first echo time [s]
    dt: float = 0.004  # echo spacing [s]
    n_ellipses: int = 8
    r2s_range: tuple[float, float] = (5.0, 60.0)
    x0_range: tuple[float, float] = (20.0, 200.0)
    omega_range: tuple[float, float] = (-40.0, 40.0)  # keeps |omega|*dt < pi
    bg_gradient_range: tuple[float, float] = (0.0, 40.0)  # rad/s, sinc main lobe
    n_coils: int = 4
    rng: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self):
        if self.t1 <= 0 or self.dt <= 0:
            raise ValueError("t1 and dt must be positive")
        if self.n_echoes < 1 or self.n_coils < 1:
            raise ValueError("need at least one echo and one coil")
        for name in ("r2s_range", "x0_range", "omega_range", "bg_gradient_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty")
        if self.r2s_range[0] < 0:
            raise ValueError("r2s_range must be nonnegative")

    @property
    def echo_times(self) -> np.ndarray:
        return self.t1 + self.dt * np.arange(self.n_echoes)


@dataclass(frozen=True)
class CoilMaps:
    """Complex receive sensitivities, shape (coils, H, W), sum |s|^2 = 1."""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.complex128)
        if s.ndim != 3:
            raise ValueError(f"coil maps must be (coils, H, W), got {s.shape}")
        object.__setattr__(self, "s", s)

    @property
    def n_coils(self) -> int:
        return self.s.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.s.shape[1], self.s.shape[2]


def _ellipse_mask(shape, center, semi_axes, angle_rad):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy = yy - center[0]
    dx = xx - center[1]
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    u = c * dy + s * dx
    v = -s * dy + c * dx
    return (u / semi_axes[0]) ** 2 + (v / semi_axes[1]) ** 2 <= 1.0


def _smooth_field(shape, value_range, rng, n_ctrl=5):
    """Bilinear upsampling of a coarse random grid; values stay in range."""
    lo, hi = value_range
    ctrl = rng.uniform(lo, hi, (n_ctrl, n_ctrl))
    h, w = shape
    yi = np.linspace(0, n_ctrl - 1, h)
    xi = np.linspace(0, n_ctrl - 1, w)
    y0 = np.clip(yi.astype(int), 0, n_ctrl - 2)
    x0 = np.clip(xi.astype(int), 0, n_ctrl - 2)
    fy = (yi - y0)[:, None]
    fx = (xi - x0)[None, :]
    a = ctrl[y0[:, None], x0[None, :]]
    b = ctrl[y0[:, None], x0[None, :] + 1]
    c = ctrl[y0[:, None] + 1, x0[None, :]]
    d = ctrl[y0[:, None] + 1, x0[None, :] + 1]
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)


def unnormalized_sinc(z):
    """sin(z)/z with the limit value 1 at z=0."""
    return np.sinc(np.asarray(z) / np.pi)


def make_qmaps(spec: PhantomSpec) -> QMaps:
    """Piecewise-smooth tissue maps from overlapping ellipses in a head mask."""
    h, w = spec.height, spec.width
    if h < 8 or w < 8:
        raise ValueError(f"degenerate geometry: grid {h}x{w} is below 8x8")
    rng = spec.rng.child(11)

    head = _ellipse_mask((h, w), ((h - 1) / 2, (w - 1) / 2), (0.46 * h, 0.40 * w), 0.0)

    def draw(rg):
        return rng.uniform(rg[0], rg[1])

    x0 = np.full((h, w), draw(spec.x0_range))
    r2s = np.full((h, w), draw(spec.r2s_range))
    omega = np.full((h, w), draw(spec.omega_range))
    for _ in range(spec.n_ellipses):
        cy = rng.uniform(0.25 * h, 0.75 * h)
        cx = rng.uniform(0.25 * w, 0.75 * w)
        axes = (rng.uniform(0.06 * h, 0.22 * h), rng.uniform(0.06 * w, 0.22 * w))
        ang = rng.uniform(0.0, np.pi)
        region = _ellipse_mask((h, w), (cy, cx), axes, ang)
        x0[region] = draw(spec.x0_range)
        r2s[region] = draw(spec.r2s_range)
        omega[region] = draw(spec.omega_range)

    # light blur -> piecewise smooth; mask re-applied so outside stays exactly 0
    x0 = gaussian_filter(x0, 1.0, mode="nearest")
    r2s = gaussian_filter(r2s, 1.0, mode="nearest")
    omega = gaussian_filter(omega, 1.0, mode="nearest")
    x0 = np.where(head, np.maximum(x0, 0.0), 0.0)
    r2s = np.where(head, np.maximum(r2s, 0.0), 0.0)
    omega = np.where(head, omega, 0.0)

    g = _smooth_field((h, w), spec.bg_gradient_range, rng)
    t = spec.echo_times
    f = unnormalized_sinc(g[None, :, :] * t[:, None, None]).astype(np.complex128)
    return QMaps(x0=x0, r2s=r2s, omega=omega, f_of_t=f, rem=head)


def make_coil_maps(spec: PhantomSpec) -> CoilMaps:
    """Smooth Gaussian-lobe coil profiles normalized to sum |s|^2 = 1.

    The first coil is the phase reference (zero phase), so a single-coil setup
    normalizes to s = 1 on the grid.
    """
    h, w = spec.height, spec.width
    c = spec.n_coils
    if c == 1:
        return CoilMaps(np.ones((1, h, w), dtype=np.complex128))
    rng = spec.rng.child(12)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy0, cx0 = (h - 1) / 2, (w - 1) / 2
    s = np.empty((c, h, w), dtype=np.complex128)
    for i in range(c):
        phi = 2 * np.pi * i / c + rng.uniform(-0.2, 0.2)
        cy = cy0 + 0.55 * h * np.sin(phi)
        cx = cx0 + 0.55 * w * np.cos(phi)
        sigma = rng.uniform(0.5, 0.7) * min(h, w)
        amp = rng.uniform(0.8, 1.2)
        lobe = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        if i == 0:
            phase = np.zeros((h, w))
        else:
            ay = rng.uniform(-0.5, 0.5)
            ax = rng.uniform(-0.5, 0.5)
            phase = 2 * np.pi * (ay * yy / h + ax * xx / w) + rng.uniform(-np.pi, np.pi)
        s[i] = lobe * np.exp(1j * phase)
    s /= np.sqrt(np.sum(np.abs(s) ** 2, axis=0))[None]
    return CoilMaps(s)


def forward_biophysics(q: QMaps, echo_times) -> MGREImage:
    """Clean multi-echo image x(t) = x0 * exp(-r2s*t - i*omega*t) * f(t)."""
    t = np.asarray(echo_times, dtype=np.float64)
    if t.shape[0] != q.f_of_t.shape[0]:
        raise ValueError("echo count of the maps does not match echo_times")
    tt = t[:, None, None]
    data = q.x0[None] * np.exp(-q.r2s[None] * tt - 1j * q.omega[None] * tt) * q.f_of_t
    data = np.where(q.rem[None], data, 0.0)
    return MGREImage(data=data, echo_times=t)
