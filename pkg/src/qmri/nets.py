"""Network definitions on top of the autodiff engine.

Two architectures share one flat parameter store:

* a 7-layer residual convolutional denoiser on (re, im) channel pairs, and
* an encoder-decoder estimator mapping N echo magnitudes to (x0, r2s) maps,
  with 5 encoder blocks, 4 skip-connected decoder blocks and a 1-conv output
  block; filter counts (64..1024) scale by a width factor.

Plus He-uniform init, Adam, and QAR1-based checkpointing.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .core import NumericFailure, RngStream, read_array, write_array

__all__ = [
    "DenoiserSpec",
    "EstimatorSpec",
    "AdamState",
    "NetworkWeights",
    "init_denoiser",
    "init_estimator",
    "denoiser_forward",
    "estimator_forward",
    "denoiser_param_count",
    "estimator_param_count",
    "adam_step",
    "save_weights",
    "load_weights",
]


@dataclass(frozen=True)
class DenoiserSpec:
    """7-layer, 3x3, stride-1 residual denoiser on 2 (re, im) channels.

    `pattern` selects the activation placement: "edge-relu" puts a ReLU after
    the first and last convolutions only; "conventional" after every
    convolution except the last.
    """

    layers: int = 7
    kernel: int = 3
    filters: int = 64
    channels: int = 2
    residual: bool = True
    pattern: str = "edge-relu"
    width: float = 1.0

    def __post_init__(self):
        if self.pattern not in ("edge-relu", "conventional"):
            raise ValueError(f"unknown activation pattern {self.pattern!r}")
        if self.layers < 2:
            raise ValueError("need at least an input and an output convolution")

    @property
    def n_filters(self) -> int:
        return max(1, round(self.filters * self.width))

    def layer_channels(self):
        """(in, out) channel pairs for each convolution."""
        f = self.n_filters
        chans = [self.channels] + [f] * (self.layers - 1) + [self.channels]
        return list(zip(chans[:-1], chans[1:]))


@dataclass(frozen=True)
class EstimatorSpec:
    """Encoder-decoder with skips; N magnitude channels in, 2 map channels out."""

    in_channels: int = 10
    enc_filters: tuple[int, ...] = (64, 128, 256, 512, 1024)
    dec_filters: tuple[int, ...] = (512, 256, 128, 64)
    kernel: int = 3
    width: float = 1.0

    def enc_channels(self):
        return [max(1, round(f * self.width)) for f in self.enc_filters]

    def dec_channels(self):
        return [max(1, round(f * self.width)) for f in self.dec_filters]

    @property
    def n_pool(self) -> int:
        return len(self.enc_filters) - 1


class NetworkWeights:
    """Flat name -> parameter tensor store with init tags for the manifest."""

    def __init__(self):
        self.params: dict[str, ad.Tensor] = {}
        self.init_tags: dict[str, str] = {}

    def add(self, name: str, array: np.ndarray, init_tag: str = "explicit"):
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.params[name] = ad.param(array, name=name)
        self.init_tags[name] = init_tag

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return list(self.params)

    def tensors(self):
        return list(self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def copy(self) -> "NetworkWeights":
        out = NetworkWeights()
        for name, p in self.params.items():
            out.add(name, p.data.copy(), self.init_tags[name])
        return out


def _he_uniform(rng: RngStream, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape).astype(dtype)


def init_denoiser(
    spec: DenoiserSpec,
    rng: RngStream,
    weights: NetworkWeights | None = None,
    prefix: str = "den.",
    dtype=np.float64,
) -> NetworkWeights:
    """He-uniform kernels, zero biases.

    With the "conventional" pattern the final convolution is zero-initialized
    so the residual denoiser starts as the identity; the trailing ReLU of the
    "edge-relu" pattern would block all gradients through an exactly-zero
    output, so there the final layer gets a small He init instead.
    """
    w = weights if weights is not None else NetworkWeights()
    k = spec.kernel
    pairs = spec.layer_channels()
    for i, (cin, cout) in enumerate(pairs):
        fan_in = cin * k * k
        last = i == len(pairs) - 1
        if last and spec.pattern == "conventional":
            kern = np.zeros((cout, cin, k, k), dtype=dtype)
            tag = "zero"
        elif last:
            kern = 0.1 * _he_uniform(rng, (cout, cin, k, k), fan_in, dtype)
            tag = "he-uniform-small"
        else:
            kern = _he_uniform(rng, (cout, cin, k, k), fan_in, dtype)
            tag = "he-uniform"
        w.add(f"{prefix}l{i}.w", kern, tag)
        w.add(f"{prefix}l{i}.b", np.zeros(cout, dtype=dtype), "zero")
    return w


def denoiser_forward(
    spec: DenoiserSpec, weights: NetworkWeights, x: ad.Tensor, prefix: str = "den."
) -> ad.Tensor:
    """Residual denoising of (B, 2, H, W): input minus the predicted artifact."""
    if x.data.shape[1] != spec.channels:
        raise ValueError(f"expected {spec.channels} channels, got {x.data.shape[1]}")
    pad = spec.kernel // 2
    h = x
    n_layers = len(spec.layer_channels())
    for i in range(n_layers):
        h = ad.conv2d(h, weights[f"{prefix}l{i}.w"], weights[f"{prefix}l{i}.b"], pad)
        last = i == n_layers - 1
        if spec.pattern == "edge-relu":
            if i == 0 or last:
                h = ad.relu(h)
        else:
            if not last:
                h = ad.relu(h)
    return ad.sub(x, h) if spec.residual else h


def denoiser_param_count(spec: DenoiserSpec) -> int:
    k = spec.kernel
    return sum(cout * (cin * k * k + 1) for cin, cout in spec.layer_channels())


def init_estimator(
    spec: EstimatorSpec,
    rng: RngStream,
    weights: NetworkWeights | None = None,
    prefix: str = "est.",
    dtype=np.float64,
) -> NetworkWeights:
    w = weights if weights is not None else NetworkWeights()
    k = spec.kernel

    def conv_init(name, cin, cout):
        w.add(name + ".w", _he_uniform(rng, (cout, cin, k, k), cin * k * k, dtype), "he-uniform")
        w.add(name + ".b", np.zeros(cout, dtype=dtype), "zero")

    enc = spec.enc_channels()
    dec = spec.dec_channels()
    cin = spec.in_channels
    for i, cout in enumerate(enc):
        conv_init(f"{prefix}enc{i}.a", cin, cout)
        conv_init(f"{prefix}enc{i}.b", cout, cout)
        cin = cout
    for j, cout in enumerate(dec):
        skip = enc[len(enc) - 2 - j]
        conv_init(f"{prefix}dec{j}.up", cin, cout)
        conv_init(f"{prefix}dec{j}.a", cout + skip, cout)
        conv_init(f"{prefix}dec{j}.b", cout, cout)
        cin = cout
    conv_init(f"{prefix}out", cin, 2)
    return w


def estimator_forward(
    spec: EstimatorSpec, weights: NetworkWeights, mag: ad.Tensor, prefix: str = "est."
) -> tuple[ad.Tensor, ad.Tensor]:
    """Map (1, N, H, W) echo magnitudes to ((H, W) x0, (H, W) r2s >= 0).

    Spatial dims are padded to a multiple of 2^n_pool internally and the
    output cropped back.
    """
    if mag.data.ndim != 4:
        raise ValueError("estimator expects a (1, N, H, W) tensor")
    pad = spec.kernel // 2
    h0, w0 = mag.data.shape[-2:]
    mult = 2**spec.n_pool
    h = ad.pad2d(mag, (-h0) % mult, (-w0) % mult)

    def block(t, name):
        t = ad.relu(ad.conv2d(t, weights[name + ".a.w"], weights[name + ".a.b"], pad))
        t = ad.relu(ad.conv2d(t, weights[name + ".b.w"], weights[name + ".b.b"], pad))
        return t

    skips = []
    n_enc = len(spec.enc_filters)
    for i in range(n_enc):
        h = block(h, f"{prefix}enc{i}")
        if i < n_enc - 1:
            skips.append(h)
            h = ad.maxpool2(h)
    for j in range(len(spec.dec_filters)):
        h = ad.upsample2(h)
        h = ad.conv2d(h, weights[f"{prefix}dec{j}.up.w"], weights[f"{prefix}dec{j}.up.b"], pad)
        h = ad.concat(h, skips[n_enc - 2 - j], axis=1)
        h = block(h, f"{prefix}dec{j}")
    out = ad.conv2d(h, weights[f"{prefix}out.w"], weights[f"{prefix}out.b"], pad)
    out = ad.crop2d(out, h0, w0)
    x0 = ad.reshape(ad.take_channel(out, 0, axis=1), (h0, w0))
    r2s = ad.relu(ad.reshape(ad.take_channel(out, 1, axis=1), (h0, w0)))
    return x0, r2s


def estimator_param_count(spec: EstimatorSpec) -> int:
    k2 = spec.kernel**2
    enc = spec.enc_channels()
    dec = spec.dec_channels()
    total = 0
    cin = spec.in_channels
    for cout in enc:
        total += cout * (cin * k2 + 1) + cout * (cout * k2 + 1)
        cin = cout
    for j, cout in enumerate(dec):
        skip = enc[len(enc) - 2 - j]
        total += cout * (cin * k2 + 1)  # up-conv
        total += cout * ((cout + skip) * k2 + 1) + cout * (cout * k2 + 1)
        cin = cout
    total += 2 * (cin * k2 + 1)
    return total


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, weights: NetworkWeights) -> None:
    """One Adam update with bias correction over every parameter with a grad."""
    state.step += 1
    t = state.step
    for name, p in weights.params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient in parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        mhat = m / (1 - state.beta1**t)
        vhat = v / (1 - state.beta2**t)
        # asarray keeps 0-d parameters (the learnable tau) as arrays
        p.data = np.asarray(p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps))


# ---------------------------------------------------------------------------
# checkpointing: one QAR1 file per parameter plus a text manifest
# ---------------------------------------------------------------------------


def save_weights(directory, weights: NetworkWeights) -> None:
    os.makedirs(directory, exist_ok=True)
    lines = ["# name\tfile\tshape\tinit"]
    for i, name in enumerate(weights.names()):
        fname = f"p{i:04d}.qar"
        arr = np.asarray(weights[name].data, dtype=np.float64)
        # the container holds ndim 1..4; scalars travel as length-1 vectors
        write_array(os.path.join(directory, fname), arr.reshape(-1) if arr.ndim == 0 else arr)
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"{name}\t{fname}\t{shape}\t{weights.init_tags[name]}")
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_weights(directory, dtype=np.float64) -> NetworkWeights:
    weights = NetworkWeights()
    with open(os.path.join(directory, "manifest.txt")) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, fname, shape, tag = line.split("\t")
            arr = read_array(os.path.join(directory, fname)).astype(dtype)
            if shape == "scalar":
                arr = arr.reshape(())
            weights.add(name, arr, tag)
    return weights
