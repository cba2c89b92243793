"""Unfolded reconstruction, estimation head, losses, and joint training.

The reconstruction module runs K gradient-descent steps on the data term,
each damped toward a learned denoiser (weights shared across steps); the
estimation module maps echo magnitudes to (x0, r2s). Training minimizes

    loss_rec(x_hat, x_gt) + lambda * loss_est(maps, x_gt)

where the estimation loss pushes the maps through the decay model and
compares magnitudes to the ground-truth image inside the region mask, so no
ground-truth parameter maps are needed. The attenuation f and the mask enter
only through loss_est: inference (`r_theta`, `e_phi`) never reads them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .core import MGREImage, NumericFailure, RngStream
from .forward import KSpaceSet, MeasurementOperator, make_mask
from .motion import MotionConfig, corrupt, sample_schedule
from .nets import (
    AdamState,
    DenoiserSpec,
    EstimatorSpec,
    NetworkWeights,
    adam_step,
    denoiser_forward,
    estimator_forward,
    init_denoiser,
    init_estimator,
    save_weights,
)
from .phantom import PhantomSpec, forward_biophysics, make_coil_maps, make_qmaps

__all__ = [
    "UnfoldSpec",
    "TrainConfig",
    "TrainSample",
    "init_unfold_weights",
    "r_theta",
    "r_theta_graph",
    "e_phi",
    "e_phi_graph",
    "loss_rec",
    "loss_est",
    "train",
    "train_denoiser",
    "make_denoiser_callable",
    "simulate_training_set",
    "moving_average",
]


@dataclass(frozen=True)
class UnfoldSpec:
    """Unrolling depth, fixed step size, and weight sharing across steps."""

    k_steps: int = 8
    gamma: float = 0.5
    shared_weights: bool = True

    def __post_init__(self):
        if self.k_steps < 0:
            raise ValueError("k_steps must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    """Flat training configuration; every field maps to a config-file key."""

    lam: float = 1.0
    lr: float = 1e-5
    epochs: int = 10
    batch_size: int = 1
    seed: int = 0
    k_steps: int = 8
    gamma: float = 0.5
    tau_init: float = 1.0
    width_factor: float = 0.25
    denoiser_pattern: str = "conventional"
    precision: str = "f64"  # "f32" halves memory/time for desk-scale runs
    # dataset knobs
    n_train: int = 64
    img_h: int = 32
    img_w: int = 32
    n_echoes: int = 10
    n_coils: int = 4
    accels: tuple[int, ...] = (2, 4, 8)
    central_cap: int = 10
    snr_db: float = 40.0
    motion_l_max: int = 3
    motion_duration: tuple[float, float] = (0.05, 0.20)
    motion_max_shift: float = 5.0
    motion_max_angle: float = 5.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.precision not in ("f64", "f32"):
            raise ValueError("precision must be f64 or f32")
        if self.motion_l_max > 0 and self.motion_max_shift > self.img_h / 4:
            raise ValueError("motion_max_shift exceeds the H/4 envelope for this grid")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def motion_config(self) -> MotionConfig:
        return MotionConfig(
            l_max=self.motion_l_max,
            duration_frac=self.motion_duration,
            max_shift=self.motion_max_shift,
            max_angle=self.motion_max_angle,
        )

    def denoiser_spec(self) -> DenoiserSpec:
        return DenoiserSpec(width=self.width_factor, pattern=self.denoiser_pattern)

    def estimator_spec(self) -> EstimatorSpec:
        return EstimatorSpec(in_channels=self.n_echoes, width=self.width_factor)

    def unfold_spec(self) -> UnfoldSpec:
        return UnfoldSpec(k_steps=self.k_steps, gamma=self.gamma)


@dataclass(frozen=True)
class TrainSample:
    """One training pair plus everything loss_est needs."""

    x_gt: np.ndarray  # complex (N, H, W)
    y: KSpaceSet
    op: MeasurementOperator
    f_of_t: np.ndarray
    rem: np.ndarray
    echo_times: np.ndarray


def to_channels(arr: np.ndarray, dtype=np.float64) -> np.ndarray:
    """(N, H, W) complex -> (N, 2, H, W) real."""
    return np.stack([arr.real, arr.imag], axis=1).astype(dtype)


def to_complex(arr: np.ndarray) -> np.ndarray:
    """(N, 2, H, W) real -> (N, H, W) complex."""
    return arr[:, 0].astype(np.complex128) + 1j * arr[:, 1]


def _inv_softplus(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus output must be positive")
    return float(np.log(np.expm1(y)))


def init_unfold_weights(
    cfg: TrainConfig, rng: RngStream, with_estimator: bool | None = None
) -> NetworkWeights:
    """Denoiser + learnable tau (softplus-parameterized) + optional estimator."""
    if with_estimator is None:
        with_estimator = cfg.lam > 0
    weights = NetworkWeights()
    uspec = cfg.unfold_spec()
    dspec = cfg.denoiser_spec()
    if uspec.shared_weights:
        init_denoiser(dspec, rng.child(1), weights, "den.", cfg.dtype)
    else:
        for k in range(uspec.k_steps):
            init_denoiser(dspec, rng.child(1 + k), weights, f"den.k{k}.", cfg.dtype)
    weights.add("tau.raw", np.asarray(_inv_softplus(cfg.tau_init), dtype=cfg.dtype), "softplus-inverse")
    if with_estimator:
        init_estimator(cfg.estimator_spec(), rng.child(2), weights, "est.", cfg.dtype)
    return weights


# ---------------------------------------------------------------------------
# forward graphs
# ---------------------------------------------------------------------------


def r_theta_graph(
    weights: NetworkWeights,
    op: MeasurementOperator,
    y: KSpaceSet,
    uspec: UnfoldSpec,
    dspec: DenoiserSpec,
    x0: np.ndarray | None = None,
    dtype=np.float64,
) -> ad.Tensor:
    """K unrolled steps x <- x - gamma*(A^H(Ax - y) + tau*(x - D(x))).

    Differentiable in the denoiser weights and tau; the measurement operator
    enters through a self-adjoint linear node.
    """
    aty = op.adjoint(y)
    start = aty if x0 is None else np.asarray(x0, dtype=np.complex128)

    def dc_fwd(x2):
        xc = x2[:, 0] + 1j * x2[:, 1]
        return to_channels(op.normal(xc) - aty, x2.dtype)

    def dc_adj(g2):
        gc = g2[:, 0] + 1j * g2[:, 1]
        return to_channels(op.normal(gc), g2.dtype)

    x = ad.tensor(to_channels(start, dtype))
    if uspec.k_steps == 0:
        return x
    tau = ad.softplus(weights["tau.raw"])
    for k in range(uspec.k_steps):
        prefix = "den." if uspec.shared_weights else f"den.k{k}."
        dc = ad.linear_map(x, dc_fwd, dc_adj)
        denoised = denoiser_forward(dspec, weights, x, prefix)
        update = ad.add(dc, ad.mul_by_scalar(ad.sub(x, denoised), tau))
        x = ad.sub(x, ad.scale(update, uspec.gamma))
        if not np.all(np.isfinite(x.data)):
            raise NumericFailure(f"non-finite iterate at unrolled step {k + 1}")
    return x


def r_theta(
    weights: NetworkWeights,
    op: MeasurementOperator,
    y: KSpaceSet,
    uspec: UnfoldSpec = UnfoldSpec(),
    dspec: DenoiserSpec = DenoiserSpec(),
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Inference wrapper returning a complex (N, H, W) reconstruction."""
    return to_complex(r_theta_graph(weights, op, y, uspec, dspec, x0).data)


def e_phi_graph(
    weights: NetworkWeights, x_hat: ad.Tensor, espec: EstimatorSpec
) -> tuple[ad.Tensor, ad.Tensor]:
    """Estimator on per-echo magnitudes normalized by the first-echo mean.

    The x0 output is rescaled back to input units, so r2s is invariant to a
    global intensity scale while x0 tracks it.
    """
    mag = ad.magnitude(x_hat)  # (N, H, W)
    scale_t = ad.mean(ad.take_channel(mag, 0, axis=0))
    if float(scale_t.data) == 0.0:
        zero = np.zeros(x_hat.data.shape[-2:], dtype=x_hat.data.dtype)
        return ad.tensor(zero), ad.tensor(zero.copy())
    normed = ad.div_by_scalar(mag, scale_t)
    n, h, w = mag.data.shape
    x0n, r2s = estimator_forward(espec, weights, ad.reshape(normed, (1, n, h, w)))
    return ad.mul_by_scalar(x0n, scale_t), r2s


def e_phi(
    weights: NetworkWeights, x_hat, espec: EstimatorSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Inference wrapper: complex image (or MGREImage) -> (x0, r2s) arrays."""
    arr = x_hat.data if isinstance(x_hat, MGREImage) else np.asarray(x_hat)
    dtype = weights["est.out.w"].data.dtype
    x0_t, r2s_t = e_phi_graph(weights, ad.tensor(to_channels(arr, dtype)), espec)
    return x0_t.data.copy(), r2s_t.data.copy()


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_rec_graph(x_hat: ad.Tensor, x_gt: np.ndarray) -> ad.Tensor:
    """Mean over complex entries of |x_hat - x_gt|^2."""
    if x_hat.data.shape[0] != x_gt.shape[0] or x_hat.data.shape[-2:] != x_gt.shape[-2:]:
        raise ValueError("shape mismatch between reconstruction and target")
    target = to_channels(x_gt, x_hat.data.dtype)
    n = x_gt.size  # complex entries; re+im squares sum to |.|^2
    return ad.scale(ad.ssum(ad.square(ad.sub_const(x_hat, target))), 1.0 / n)


def loss_rec(x_hat, x_gt) -> float:
    x_hat = x_hat.data if isinstance(x_hat, MGREImage) else np.asarray(x_hat)
    x_gt = x_gt.data if isinstance(x_gt, MGREImage) else np.asarray(x_gt)
    return float(loss_rec_graph(ad.tensor(to_channels(x_hat)), x_gt).data)


def loss_est_graph(
    x0_t: ad.Tensor,
    r2s_t: ad.Tensor,
    x_gt: np.ndarray,
    f_of_t: np.ndarray,
    rem: np.ndarray,
    echo_times,
) -> ad.Tensor:
    """Self-supervised map loss: decay-model magnitudes vs target magnitudes.

    The off-resonance phase drops out of magnitudes, so only (x0, r2s) enter.
    Mean over masked voxels x echoes.
    """
    rem = np.asarray(rem, dtype=bool)
    n_masked = int(rem.sum())
    if n_masked == 0:
        raise ValueError("empty region mask")
    t = np.asarray(echo_times, dtype=np.float64)
    n = t.shape[0]
    dtype = x0_t.data.dtype
    absf_masked = (np.abs(f_of_t) * rem[None]).astype(dtype)
    target = (np.abs(x_gt) * rem[None]).astype(dtype)
    model = ad.mul(ad.broadcast_echoes(ad.absval(x0_t), n), ad.decay(r2s_t, t))
    diff = ad.sub_const(ad.mul_const(model, absf_masked), target)
    return ad.scale(ad.ssum(ad.square(diff)), 1.0 / (n * n_masked))


def loss_est(maps, x_gt, f_of_t, rem, echo_times) -> float:
    """Plain-array wrapper; `maps` is an (x0, r2s) pair."""
    x0, r2s = maps
    x_gt = x_gt.data if isinstance(x_gt, MGREImage) else np.asarray(x_gt)
    return float(
        loss_est_graph(
            ad.tensor(np.asarray(x0)),
            ad.tensor(np.asarray(r2s)),
            x_gt,
            f_of_t,
            rem,
            echo_times,
        ).data
    )


# ---------------------------------------------------------------------------
# dataset simulation and training
# ---------------------------------------------------------------------------


def simulate_training_set(cfg: TrainConfig, n: int, stream: int = 0) -> list[TrainSample]:
    """n simulated slices; coil maps fixed across the set, masks/motion vary.

    Acceleration rates cycle round-robin through cfg.accels, which mixes them
    uniformly; pin a single rate by passing a one-element tuple.
    """
    master = RngStream(cfg.seed, 9000 + stream)
    base = PhantomSpec(
        height=cfg.img_h,
        width=cfg.img_w,
        n_echoes=cfg.n_echoes,
        n_coils=cfg.n_coils,
        rng=master.child(0),
    )
    coils = make_coil_maps(base)
    mcfg = cfg.motion_config()
    samples = []
    for j in range(n):
        srng = master.child(100 + j)
        spec = replace(base, rng=srng.child(0))
        q = make_qmaps(spec)
        x_gt = forward_biophysics(q, spec.echo_times)
        accel = cfg.accels[j % len(cfg.accels)]
        mask = make_mask(cfg.img_h, accel, cfg.central_cap, srng.child(1))
        op = MeasurementOperator(coils=coils, mask=mask)
        sched = sample_schedule(mcfg, cfg.img_h, srng.child(2))
        y = corrupt(op, x_gt, sched, cfg.snr_db, srng.child(3))
        samples.append(
            TrainSample(
                x_gt=x_gt.data,
                y=y,
                op=op,
                f_of_t=q.f_of_t,
                rem=q.rem,
                echo_times=spec.echo_times,
            )
        )
    return samples


def _sample_loss(cfg: TrainConfig, weights: NetworkWeights, s: TrainSample) -> ad.Tensor:
    x_hat = r_theta_graph(
        weights, s.op, s.y, cfg.unfold_spec(), cfg.denoiser_spec(), dtype=cfg.dtype
    )
    total = loss_rec_graph(x_hat, s.x_gt)
    if cfg.lam > 0:
        x0_t, r2s_t = e_phi_graph(weights, x_hat, cfg.estimator_spec())
        l_est = loss_est_graph(x0_t, r2s_t, s.x_gt, s.f_of_t, s.rem, s.echo_times)
        total = ad.add(total, ad.scale(l_est, cfg.lam))
    return total


def train(
    cfg: TrainConfig,
    dataset: list[TrainSample],
    out_dir: str | None = None,
    weights: NetworkWeights | None = None,
) -> tuple[NetworkWeights, list[float]]:
    """Joint Adam training; returns the weights and the per-step loss curve.

    lambda = 0 trains the reconstruction module alone (no estimator
    parameters are created or updated). Checkpoints and the loss log are
    written per epoch when `out_dir` is given.
    """
    if not dataset:
        raise ValueError("empty dataset")
    for s in dataset:
        if s.x_gt.shape[0] != cfg.n_echoes:
            raise ValueError("dataset echo count does not match the config")
    rng = RngStream(cfg.seed, 4242)
    if weights is None:
        weights = init_unfold_weights(cfg, rng.child(0))
    adam = AdamState(lr=cfg.lr)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            weights.zero_grads()
            step_loss = 0.0
            for j in batch:
                loss = ad.scale(_sample_loss(cfg, weights, dataset[j]), 1.0 / len(batch))
                if not np.isfinite(loss.data):
                    raise NumericFailure(f"non-finite loss at step {len(history)}")
                ad.backward(loss)
                step_loss += float(loss.data)
            adam_step(adam, weights)
            history.append(step_loss)
        if out_dir is not None:
            save_weights(os.path.join(out_dir, f"epoch{epoch:03d}"), weights)
    if out_dir is not None:
        save_weights(os.path.join(out_dir, "final"), weights)
        with open(os.path.join(out_dir, "loss_log.txt"), "w") as fh:
            fh.write("# step\tloss\n")
            for i, val in enumerate(history):
                fh.write(f"{i}\t{val!r}\n")
    return weights, history


def moving_average(series, window: int) -> np.ndarray:
    series = np.asarray(series, dtype=np.float64)
    if window <= 1 or series.size < window:
        return series
    kernel = np.full(window, 1.0 / window)
    return np.convolve(series, kernel, mode="valid")


# ---------------------------------------------------------------------------
# standalone denoiser training (for the denoiser-regularized baseline)
# ---------------------------------------------------------------------------


def train_denoiser(
    dspec: DenoiserSpec,
    images: list[np.ndarray],
    sigma: float,
    epochs: int = 20,
    lr: float = 1e-3,
    seed: int = 0,
    dtype=np.float64,
) -> tuple[NetworkWeights, list[float]]:
    """Train the denoiser for additive-noise removal on unit-normalized images.

    `sigma` is the per-component noise std relative to the mean first-echo
    magnitude; fresh noise is drawn every epoch.
    """
    rng = RngStream(seed, 31)
    weights = init_denoiser(dspec, rng.child(0), dtype=dtype)
    adam = AdamState(lr=lr)
    noise_rng = rng.child(1)
    history = []
    clean = []
    for img in images:
        s = float(np.mean(np.abs(img[0])))
        clean.append(to_channels(img / s if s > 0 else img, dtype))
    for _ in range(epochs):
        for target in clean:
            noise = sigma * noise_rng.normal(target.shape).astype(dtype)
            weights.zero_grads()
            out = denoiser_forward(dspec, weights, ad.tensor(target + noise))
            loss = ad.mean(ad.square(ad.sub_const(out, target)))
            ad.backward(loss)
            adam_step(adam, weights)
            history.append(float(loss.data))
    return weights, history


def make_denoiser_callable(dspec: DenoiserSpec, weights: NetworkWeights):
    """Scale-equivariant wrapper: normalize, denoise each echo, rescale."""

    dtype = weights[next(iter(weights.params))].data.dtype

    def denoise(x: np.ndarray) -> np.ndarray:
        s = float(np.mean(np.abs(x[0])))
        if s == 0:
            return x.copy()
        out = denoiser_forward(dspec, weights, ad.tensor(to_channels(x / s, dtype)))
        return to_complex(out.data) * s

    return denoise
