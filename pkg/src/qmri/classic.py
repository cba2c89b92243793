"""Baseline reconstructions: zero-fill, TV proximal gradient, and denoiser-
regularized fixed-point iteration.

TV is anisotropic (l1 of forward differences, real and imaginary parts
separately); its prox is solved by a short projected-gradient dual loop that
is warm-started across outer iterations.
"""

from __future__ import annotations

import numpy as np

from .core import NumericFailure
from .forward import KSpaceSet, MeasurementOperator
from .metrics import snr_db

__all__ = [
    "DivergenceError",
    "zero_fill",
    "tv_recon",
    "red_recon",
    "select_tau",
    "tv_objective",
]


class DivergenceError(NumericFailure):
    """Objective increased for several consecutive iterations."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def zero_fill(op: MeasurementOperator, y: KSpaceSet) -> np.ndarray:
    """Adjoint of the measurement operator applied to the data."""
    return op.adjoint(y)


def _dgrad(u):
    """Forward differences with Neumann boundary; shape (..., 2, H, W)."""
    dv = np.zeros_like(u)
    dh = np.zeros_like(u)
    dv[..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    dh[..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    return np.stack([dv, dh], axis=-3)


def _dgrad_adj(p):
    """Adjoint of _dgrad (negative divergence)."""
    pv = p[..., 0, :, :]
    ph = p[..., 1, :, :]
    out = np.zeros_like(pv)
    out[..., :-1, :] -= pv[..., :-1, :]
    out[..., 1:, :] += pv[..., :-1, :]
    out[..., :, :-1] -= ph[..., :, :-1]
    out[..., :, 1:] += ph[..., :, :-1]
    return out


def _tv_prox(z, alpha, p, n_inner=10):
    """prox of alpha*||D . ||_1 at z via dual projected gradient (step 1/8).

    `z` is a real array (..., H, W); `p` is the warm-started dual variable of
    shape (..., 2, H, W), clamped to [-alpha, alpha].
    """
    if alpha == 0:
        return z, p
    for _ in range(n_inner):
        u = z - _dgrad_adj(p)
        p = np.clip(p + _dgrad(u) / 8.0, -alpha, alpha)
    return z - _dgrad_adj(p), p


def tv_norm(x) -> float:
    """Anisotropic TV of a complex image stack: l1 over real+imag differences."""
    planes = np.stack([x.real, x.imag], axis=1)
    return float(np.abs(_dgrad(planes)).sum())


def tv_objective(op, y, x, tau) -> float:
    r = op.apply(x).data - y.data
    return float(0.5 * np.vdot(r, r).real + tau * tv_norm(x))


def tv_recon(
    op: MeasurementOperator,
    y: KSpaceSet,
    tau: float,
    iters: int = 50,
    gamma: float = 0.5,
    n_inner: int = 10,
    return_info: bool = False,
):
    """Proximal-gradient minimization of 0.5*||y - A x||^2 + tau*||D x||_1."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must be in (0, 1]")
    aty = op.adjoint(y)
    x = aty.copy()
    dual = np.zeros(x.shape[:1] + (2, 2) + x.shape[1:], dtype=np.float64)
    objective = [tv_objective(op, y, x, tau)]
    rising = 0
    for _ in range(iters):
        x = x - gamma * (op.normal(x) - aty)
        if tau > 0:
            planes = np.stack([x.real, x.imag], axis=1)
            planes, dual = _tv_prox(planes, gamma * tau, dual, n_inner)
            x = planes[:, 0] + 1j * planes[:, 1]
        obj = tv_objective(op, y, x, tau)
        rising = rising + 1 if obj > objective[-1] else 0
        objective.append(obj)
        if rising >= 5:
            raise DivergenceError(
                "TV objective increased for 5 consecutive iterations", objective
            )
    if return_info:
        return x, {"objective": objective}
    return x


def red_recon(
    op: MeasurementOperator,
    y: KSpaceSet,
    denoiser,
    tau: float,
    gamma: float = 0.5,
    iters: int = 50,
    return_info: bool = False,
):
    """Fixed-point iteration x <- x - gamma*(A^H(Ax - y) + tau*(x - D(x))).

    `denoiser` maps an (echoes, H, W) complex array to one of the same shape;
    the identity denoiser reduces the update to plain gradient descent on the
    data term.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    aty = op.adjoint(y)
    x = aty.copy()
    residuals = []
    rising = 0
    for k in range(iters):
        update = (op.normal(x) - aty) + tau * (x - denoiser(x))
        x_next = x - gamma * update
        res = float(np.linalg.norm(x_next - x))
        # divergence guard on the fixed-point residual (the iteration has no
        # objective to track when the denoiser is not a gradient map)
        rising = rising + 1 if residuals and res > residuals[-1] else 0
        residuals.append(res)
        if rising >= 5:
            raise DivergenceError(
                f"fixed-point iteration diverging at step {k}", residuals
            )
        x = x_next
    if return_info:
        return x, {"fixed_point_residual": residuals}
    return x


def select_tau(
    recon_fn,
    reference,
    tau_lo: float = 1e-4,
    tau_hi: float = 10.0,
    n_iters: int = 12,
):
    """Golden-section search over log(tau) maximizing SNR against a reference.

    `recon_fn(tau)` must return an image comparable to `reference`. Returns
    (best_tau, best_snr).
    """
    phi = (np.sqrt(5.0) - 1) / 2
    lo, hi = np.log(tau_lo), np.log(tau_hi)
    cache: dict[float, float] = {}

    def score(logt):
        if logt not in cache:
            cache[logt] = snr_db(reference, recon_fn(float(np.exp(logt))))
        return cache[logt]

    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    for _ in range(n_iters):
        if score(c) >= score(d):
            b = d
        else:
            a = c
        c = b - phi * (b - a)
        d = a + phi * (b - a)
    best_log = max(cache, key=cache.get)
    return float(np.exp(best_log)), cache[best_log]
