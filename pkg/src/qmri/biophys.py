"""Voxel-wise nonlinear least-squares fitting of the multi-echo decay model.

The complex signal model per voxel is

    x(t_k) = x0 * exp(-r2s * t_k - i * omega * t_k) * f_k

with a known per-echo attenuation f. Fitting runs a damped Gauss-Newton
(Levenberg-Marquardt with Marquardt diagonal scaling) on the real+imag
residual stack, vectorized over voxels; the single-voxel fit is the batch of
one, so map and voxel paths cannot drift apart.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import MGREImage, QMaps

__all__ = [
    "VoxelFit",
    "FitReport",
    "FitOptions",
    "model_eval",
    "nlls_fit_voxel",
    "nlls_fit_map",
]

STATUS_OK = "ok"
STATUS_LOW_SIGNAL = "low_signal"
STATUS_MAX_ITER = "max_iter"


@dataclass(frozen=True)
class VoxelFit:
    x0: float
    r2s: float
    omega: float
    residual: float
    converged: bool
    iters: int
    status: str = STATUS_OK


@dataclass(frozen=True)
class FitOptions:
    r2s_max: float = 200.0
    max_iters: int = 100
    damping_init: float = 1e-2  # x10 on reject, /10 on accept
    step_tol: float = 1e-11
    fit_omega: bool = True
    magnitude_only: bool = False  # fit |signal| only; robust to bad phase


@dataclass(frozen=True)
class FitReport:
    n_voxels: int
    n_ok: int
    n_low_signal: int
    n_max_iter: int
    mean_iters: float

    def summary(self) -> str:
        return (
            f"fitted {self.n_voxels} voxels: {self.n_ok} ok, "
            f"{self.n_low_signal} below signal threshold, "
            f"{self.n_max_iter} hit the iteration cap "
            f"(mean {self.mean_iters:.1f} iters)"
        )


def model_eval(x0, r2s, omega, f, echo_times):
    """x(t_k) = x0 * exp(-r2s*t_k - i*omega*t_k) * f_k; broadcasts over voxels."""
    t = np.asarray(echo_times, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)[..., None]
    r2s = np.asarray(r2s, dtype=np.float64)[..., None]
    omega = np.asarray(omega, dtype=np.float64)[..., None]
    return x0 * np.exp(-(r2s + 1j * omega) * t) * np.asarray(f)


def _init_params(sig, f, t, opts):
    """Log-linear magnitude regression for (x0, r2s); two-echo phase for omega."""
    mag = np.abs(sig)
    fmag = np.abs(f)
    valid = (mag > 0) & (fmag > 1e-12)
    y = np.zeros_like(mag)
    np.log(np.where(valid, mag / np.where(valid, fmag, 1.0), 1.0), out=y, where=valid)
    w = valid.astype(np.float64)
    sw = w.sum(axis=1)
    st = (w * t).sum(axis=1)
    stt = (w * t * t).sum(axis=1)
    sy = (w * y).sum(axis=1)
    sty = (w * t * y).sum(axis=1)
    den = sw * stt - st * st
    ok = (sw >= 2) & (den > 1e-30)
    slope = np.where(ok, (sw * sty - st * sy) / np.where(ok, den, 1.0), 0.0)
    icept = np.where(ok, (sy - slope * st) / np.where(sw > 0, sw, 1.0), 0.0)
    x0 = np.where(ok, np.exp(icept), np.max(mag, axis=1))
    r2s = np.clip(-slope, 0.0, opts.r2s_max)

    if opts.fit_omega and sig.shape[1] >= 2 and not opts.magnitude_only:
        rot = sig[:, 1] * np.conj(sig[:, 0]) * np.conj(f[:, 1]) * f[:, 0]
        omega = -np.angle(rot) / (t[1] - t[0])
    else:
        omega = np.zeros(sig.shape[0])
    return np.stack([np.maximum(x0, 0.0), r2s, omega], axis=1)


def _residual_stack(sig, model, magnitude_only):
    if magnitude_only:
        return np.abs(sig) - np.abs(model)
    return np.concatenate([(sig - model).real, (sig - model).imag], axis=1)


def _jacobian_stack(model, u, t, magnitude_only):
    """d(model)/d(x0, r2s, omega) stacked as real rows, shape (M, rows, 3)."""
    jc = np.stack([u, -t * model, -1j * t * model], axis=2)
    if magnitude_only:
        mag = np.abs(model)
        safe = np.where(mag > 0, mag, 1.0)
        # d|m|/dp = Re(conj(m) dm/dp) / |m|
        return (np.conj(model)[:, :, None] * jc).real / safe[:, :, None]
    return np.concatenate([jc.real, jc.imag], axis=1)


def _lm_fit(sig, f, t, init, opts: FitOptions):
    """Batched LM over voxels; returns params (M,3), residual, iters, converged."""
    m_vox = sig.shape[0]
    p = _init_params(sig, f, t, opts) if init is None else init.copy()

    def cost_of(params):
        model = model_eval(params[:, 0], params[:, 1], params[:, 2], f, t)
        r = _residual_stack(sig, model, opts.magnitude_only)
        return (r * r).sum(axis=1)

    cost = cost_of(p)
    mu = np.full(m_vox, opts.damping_init)
    active = np.ones(m_vox, dtype=bool)
    iters = np.zeros(m_vox, dtype=int)
    pmask = np.array([True, True, opts.fit_omega and not opts.magnitude_only])

    for _ in range(opts.max_iters):
        if not active.any():
            break
        ex = np.exp(-(p[:, 1:2] + 1j * p[:, 2:3]) * t[None, :])
        u = ex * f
        model = p[:, 0:1] * u
        r = _residual_stack(sig, model, opts.magnitude_only)
        j = _jacobian_stack(model, u, t, opts.magnitude_only)
        j = j * pmask[None, None, :]
        jtj = np.einsum("mnp,mnq->mpq", j, j)
        g = np.einsum("mnp,mn->mp", j, r)
        diag = np.einsum("mpp->mp", jtj).copy()
        diag = np.maximum(diag, 1e-30)
        diag[:, ~pmask] = 1.0  # keep frozen-parameter rows solvable
        lhs = jtj + mu[:, None, None] * diag[:, None, :] * np.eye(3)[None]
        try:
            delta = np.linalg.solve(lhs, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            lhs = lhs + 1e-12 * np.eye(3)[None]
            delta = np.linalg.solve(lhs, g[..., None])[..., 0]
        delta = delta * pmask[None, :]

        trial = p + delta
        trial[:, 0] = np.maximum(trial[:, 0], 0.0)
        trial[:, 1] = np.clip(trial[:, 1], 0.0, opts.r2s_max)
        trial_cost = cost_of(trial)
        accept = active & (trial_cost <= cost)
        reject = active & ~accept

        applied = trial - p  # after clamping
        rel_step = np.max(np.abs(applied) / (np.abs(p) + 1e-12), axis=1)
        p = np.where(accept[:, None], trial, p)
        cost = np.where(accept, trial_cost, cost)
        mu = np.where(accept, np.maximum(mu / 10.0, 1e-14), mu)
        mu = np.where(reject, mu * 10.0, mu)
        iters = iters + active.astype(int)

        done = accept & (rel_step < opts.step_tol)
        stalled = reject & (mu > 1e14)
        active = active & ~(done | stalled)

    converged = ~active
    return p, np.sqrt(cost), iters, converged


def nlls_fit_voxel(
    signal,
    f,
    echo_times,
    init: VoxelFit | None = None,
    eps_sig: float = 0.0,
    opts: FitOptions = FitOptions(),
) -> VoxelFit:
    """Fit one voxel; signals at or below `eps_sig` are flagged and zeroed."""
    sig = np.asarray(signal, dtype=np.complex128)[None, :]
    fv = np.asarray(f, dtype=np.complex128)[None, :]
    t = np.asarray(echo_times, dtype=np.float64)
    if sig.shape[1] < 3:
        raise ValueError("need at least 3 echoes to fit")
    if sig.shape[1] != fv.shape[1] or sig.shape[1] != t.shape[0]:
        raise ValueError("signal, f and echo_times lengths disagree")
    if np.linalg.norm(sig) <= eps_sig:
        return VoxelFit(0.0, 0.0, 0.0, 0.0, False, 0, STATUS_LOW_SIGNAL)
    p0 = None
    if init is not None:
        p0 = np.array([[init.x0, init.r2s, init.omega]])
    p, resid, iters, conv = _lm_fit(sig, fv, t, p0, opts)
    status = STATUS_OK if conv[0] else STATUS_MAX_ITER
    return VoxelFit(
        x0=float(p[0, 0]),
        r2s=float(p[0, 1]),
        omega=float(p[0, 2]),
        residual=float(resid[0]),
        converged=bool(conv[0]),
        iters=int(iters[0]),
        status=status,
    )


def nlls_fit_map(
    x: MGREImage,
    f_of_t,
    rem,
    opts: FitOptions = FitOptions(),
    workers: int = 1,
) -> tuple[QMaps, FitReport]:
    """Per-voxel fit inside the mask; zeros outside.

    The signal threshold is 1e-3 times the mean first-echo magnitude over the
    mask. Voxel batches are independent, so the result does not depend on the
    worker count.
    """
    f = np.asarray(f_of_t, dtype=np.complex128)
    rem = np.asarray(rem, dtype=bool)
    if f.shape != x.data.shape or rem.shape != x.data.shape[1:]:
        raise ValueError("f_of_t / rem shapes do not match the image")
    t = x.echo_times

    idx = np.flatnonzero(rem.ravel())
    h, w = rem.shape
    x0_map = np.zeros((h, w))
    r2s_map = np.zeros((h, w))
    omega_map = np.zeros((h, w))

    n_low = 0
    n_ok = 0
    n_maxit = 0
    total_iters = 0

    if idx.size:
        sig = x.data.reshape(x.n_echoes, -1)[:, idx].T
        fv = f.reshape(x.n_echoes, -1)[:, idx].T
        eps_sig = 1e-3 * float(np.mean(np.abs(x.data[0])[rem]))
        norms = np.linalg.norm(sig, axis=1)
        fit_sel = norms > eps_sig
        n_low = int((~fit_sel).sum())

        sel = np.flatnonzero(fit_sel)
        if sel.size:
            chunks = np.array_split(sel, max(1, int(workers)))
            chunks = [c for c in chunks if c.size]

            def run(chunk):
                return _lm_fit(sig[chunk], fv[chunk], t, None, opts)

            if workers > 1 and len(chunks) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(run, chunks))
            else:
                results = [run(c) for c in chunks]

            flat_x0 = x0_map.ravel()
            flat_r2s = r2s_map.ravel()
            flat_om = omega_map.ravel()
            for chunk, (p, _resid, iters, conv) in zip(chunks, results):
                flat_x0[idx[chunk]] = p[:, 0]
                flat_r2s[idx[chunk]] = p[:, 1]
                flat_om[idx[chunk]] = p[:, 2]
                n_ok += int(conv.sum())
                n_maxit += int((~conv).sum())
                total_iters += int(iters.sum())

    n_fitted = n_ok + n_maxit
    report = FitReport(
        n_voxels=int(idx.size),
        n_ok=n_ok,
        n_low_signal=n_low,
        n_max_iter=n_maxit,
        mean_iters=total_iters / n_fitted if n_fitted else 0.0,
    )
    maps = QMaps(x0=x0_map, r2s=r2s_map, omega=omega_map, f_of_t=f, rem=rem)
    return maps, report
