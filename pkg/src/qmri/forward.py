"""Multi-coil measurement operator, Cartesian line masks, and noise injection.

k-space arrays are kept in centered convention (DC at row H//2) so that
"central lines" and motion-event line indices are literal array rows. The 2-D
Fourier transform is unitary both ways, which together with normalized coil
maps bounds the operator norm by 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MGREImage, RngStream
from .phantom import CoilMaps

__all__ = [
    "SamplingMask",
    "MeasurementOperator",
    "KSpaceSet",
    "make_mask",
    "add_noise",
    "fft2c",
    "ifft2c",
]


def fft2c(a):
    """Centered unitary 2-D FFT over the trailing two axes."""
    shifted = np.fft.ifftshift(a, axes=(-2, -1))
    k = np.fft.fft2(shifted, norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


def ifft2c(a):
    """Inverse (= adjoint) of fft2c."""
    shifted = np.fft.ifftshift(a, axes=(-2, -1))
    img = np.fft.ifft2(shifted, norm="ortho")
    return np.fft.fftshift(img, axes=(-2, -1))


@dataclass(frozen=True)
class SamplingMask:
    """Kept ky lines (bool over rows), with the acceleration that produced it."""

    keep: np.ndarray
    acceleration: int
    central_block: int

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if keep.ndim != 1:
            raise ValueError("keep must be a 1-D line mask")
        h = keep.shape[0]
        if int(keep.sum()) != int(round(h / self.acceleration)):
            raise ValueError("kept-line count does not match the acceleration")
        cb = self.central_block
        if cb > 0:
            start = h // 2 - cb // 2
            if not keep[start : start + cb].all():
                raise ValueError("central block is not fully kept")
        object.__setattr__(self, "keep", keep)

    @property
    def n_lines(self) -> int:
        return self.keep.shape[0]

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())


def make_mask(h: int, accel: int, central_cap: int, rng: RngStream) -> SamplingMask:
    """Line mask: central block capped by the budget, remainder uniform random.

    The budget is round(h/accel). The central block is min(central_cap, budget),
    so at high acceleration the cap clips to an all-central mask. The mask is
    shared by all echoes and coils.
    """
    if accel not in (1, 2, 4, 8):
        raise ValueError(f"acceleration {accel} not in (1, 2, 4, 8)")
    if not h >= central_cap >= 0:
        raise ValueError("need h >= central_cap >= 0")
    budget = int(round(h / accel))
    if budget == 0:
        raise ValueError("sampling budget is zero")
    cb = min(central_cap, budget)
    keep = np.zeros(h, dtype=bool)
    start = h // 2 - cb // 2
    keep[start : start + cb] = True
    n_outer = budget - cb
    if n_outer > 0:
        outer = np.flatnonzero(~keep)
        picked = rng.choice(outer, size=n_outer, replace=False)
        keep[picked] = True
    return SamplingMask(keep=keep, acceleration=accel, central_block=cb)


@dataclass(frozen=True)
class KSpaceSet:
    """Per-coil measurements (coils, echoes, H, W); unkept lines are zero."""

    data: np.ndarray
    mask: SamplingMask
    input_snr_db: float = np.inf

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 4:
            raise ValueError(f"k-space must be (coils, echoes, H, W), got {data.shape}")
        if data.shape[2] != self.mask.n_lines:
            raise ValueError("mask length does not match the ky dimension")
        if np.any(data[:, :, ~self.mask.keep, :] != 0):
            raise ValueError("data must be zero on unkept lines")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class MeasurementOperator:
    """A = mask * F * S per coil, with the unitary centered FFT."""

    coils: CoilMaps
    mask: SamplingMask
    norm: str = "ortho"

    def __post_init__(self):
        if self.coils.grid_shape[0] != self.mask.n_lines:
            raise ValueError("mask length does not match the coil-map grid height")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.coils.grid_shape

    def apply(self, x) -> KSpaceSet:
        """Forward model per coil and echo: keep-masked F(S * x)."""
        arr = x.data if isinstance(x, MGREImage) else np.asarray(x)
        if arr.ndim != 3 or arr.shape[1:] != self.grid_shape:
            raise ValueError(f"image shape {arr.shape} does not match operator grid")
        coil_imgs = self.coils.s[:, None, :, :] * arr[None, :, :, :]
        k = fft2c(coil_imgs)
        k *= self.mask.keep[None, None, :, None]
        return KSpaceSet(data=k, mask=self.mask)

    def adjoint(self, y) -> np.ndarray:
        """Zero-filled image: sum_i conj(S_i) * F^-1(masked y_i), per echo."""
        arr = y.data if isinstance(y, KSpaceSet) else np.asarray(y)
        if arr.ndim != 4 or arr.shape[2:] != self.grid_shape:
            raise ValueError(f"k-space shape {arr.shape} does not match operator grid")
        if arr.shape[0] != self.coils.n_coils:
            raise ValueError("coil count mismatch")
        k = arr * self.mask.keep[None, None, :, None]
        imgs = ifft2c(k)
        return np.sum(np.conj(self.coils.s)[:, None, :, :] * imgs, axis=0)

    def normal(self, arr: np.ndarray) -> np.ndarray:
        """A^H A applied to a plain (echoes, H, W) array."""
        coil_imgs = self.coils.s[:, None, :, :] * arr[None, :, :, :]
        k = fft2c(coil_imgs)
        k *= self.mask.keep[None, None, :, None]
        imgs = ifft2c(k)
        return np.sum(np.conj(self.coils.s)[:, None, :, :] * imgs, axis=0)


def add_noise(y: KSpaceSet, snr_db: float, rng: RngStream) -> KSpaceSet:
    """Complex AWGN on kept lines, scaled to the requested measurement SNR.

    The per-component std is chosen so E 20*log10(|y| / |e|) = snr_db over the
    whole measurement set. snr_db = inf leaves the set untouched.
    """
    if np.isinf(snr_db):
        return y
    ynorm = np.linalg.norm(y.data)
    if ynorm == 0:
        raise ValueError("SNR undefined for all-zero measurements")
    keep = y.mask.keep
    n_kept = int(keep.sum())
    c, n, _, w = y.data.shape
    m = c * n * n_kept * w  # kept complex samples
    sigma = ynorm * 10.0 ** (-snr_db / 20.0) / np.sqrt(2.0 * m)
    noise = sigma * rng.complex_normal((c, n, n_kept, w))
    data = y.data.copy()
    data[:, :, keep, :] += noise
    return KSpaceSet(data=data, mask=y.mask, input_snr_db=snr_db)
