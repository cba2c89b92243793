"""Minimal reverse-mode automatic differentiation on numpy arrays.

Tape-free design: every op returns a Tensor holding its parents and a closure
that maps the output gradient to parent gradients. `backward` walks the graph
in reverse topological order, accumulates into `.grad`, and frees interior
nodes so unrolled graphs do not pin their activations. Gradients accumulate
across separate backward calls until `zero_grad` is called on the leaves.

Convolution is stride-1 cross-correlation with zero padding, evaluated as
im2col + matmul; its backward recomputes the patch view instead of storing it.
"""

from __future__ import annotations

import warnings

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "Tensor",
    "tensor",
    "param",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "exp",
    "sqrt",
    "square",
    "absval",
    "relu",
    "softplus",
    "ssum",
    "mean",
    "reshape",
    "concat",
    "take_channel",
    "pad2d",
    "crop2d",
    "conv2d",
    "maxpool2",
    "upsample2",
    "magnitude",
    "mul_const",
    "sub_const",
    "div_by_scalar",
    "mul_by_scalar",
    "decay",
    "broadcast_echoes",
    "linear_map",
]


class Tensor:
    """An array plus the bookkeeping needed for reverse-mode differentiation."""

    __slots__ = ("data", "grad", "parents", "_vjp", "requires_grad", "name")

    def __init__(self, data, parents=(), vjp=None, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.parents = tuple(parents)
        self._vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self._vjp is None

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.grad is not None})"


def tensor(data):
    """Constant (non-differentiable) graph input."""
    return Tensor(np.asarray(data))


def param(data, name=None):
    """Trainable leaf; gradients accumulate across backward calls."""
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def backward(loss: Tensor, params=None) -> None:
    """Populate gradients of every reachable leaf from a scalar loss.

    Interior nodes are freed after traversal. If `params` is given, warn about
    any parameter the graph never touched.
    """
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    if params is not None:
        for p in params:
            if id(p) not in seen:
                warnings.warn(f"parameter {p.name!r} is not connected to the loss")

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is not None and node.grad is not None:
            grads = node._vjp(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
        if not node.is_leaf:
            node.grad = None
            node.parents = ()
            node._vjp = None


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------


def add(a, b):
    return Tensor(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    return Tensor(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    return Tensor(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a):
    return Tensor(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float):
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def exp(a):
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor(out, (a,), lambda g: (g * (0.5 / out),))


def square(a):
    return Tensor(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


def absval(a):
    s = np.sign(a.data)  # subgradient 0 at exact zeros
    return Tensor(np.abs(a.data), (a,), lambda g: (g * s,))


def relu(a):
    keep = a.data > 0
    return Tensor(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,))


def softplus(a):
    out = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out, (a,), lambda g: (g * sig,))


def ssum(a):
    shape, dtype = a.data.shape, a.data.dtype
    return Tensor(
        np.asarray(a.data.sum(), dtype=dtype),
        (a,),
        lambda g: (np.full(shape, g, dtype=dtype),),
    )


def mean(a):
    n = a.data.size
    shape, dtype = a.data.shape, a.data.dtype
    return Tensor(
        np.asarray(a.data.mean(), dtype=dtype),
        (a,),
        lambda g: (np.full(shape, g / n, dtype=dtype),),
    )


def reshape(a, shape):
    old = a.data.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(a, b, axis=1):
    na = a.data.shape[axis]

    def vjp(g):
        ga, gb = np.split(g, [na], axis=axis)
        return ga, gb

    return Tensor(np.concatenate([a.data, b.data], axis=axis), (a, b), vjp)


def take_channel(a, c: int, axis: int = 1):
    """Select one index along `axis`, dropping it; backward scatters zeros."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = c
    idx = tuple(idx)

    def vjp(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    return Tensor(a.data[idx].copy(), (a,), vjp)


# ---------------------------------------------------------------------------
# constants mixed into the graph
# ---------------------------------------------------------------------------


def mul_const(a, c):
    c = np.asarray(c)
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def sub_const(a, c):
    return Tensor(a.data - np.asarray(c), (a,), lambda g: (g,))


def div_by_scalar(x, s):
    """x / s with a scalar tensor s; gradients flow into both."""
    sval = float(s.data)

    def vjp(g):
        gx = g / sval
        gs = np.asarray(-(g * x.data).sum() / sval**2, dtype=s.data.dtype)
        return gx, gs.reshape(s.data.shape)

    return Tensor(x.data / sval, (x, s), vjp)


def mul_by_scalar(x, s):
    """x * s with a scalar tensor s."""
    sval = float(s.data)

    def vjp(g):
        gx = g * sval
        gs = np.asarray((g * x.data).sum(), dtype=s.data.dtype)
        return gx, gs.reshape(s.data.shape)

    return Tensor(x.data * sval, (x, s), vjp)


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------


def pad2d(a, pad_h: int, pad_w: int):
    """Zero-pad the trailing two axes on the bottom/right."""
    if pad_h == 0 and pad_w == 0:
        return a
    width = [(0, 0)] * (a.data.ndim - 2) + [(0, pad_h), (0, pad_w)]
    h, w = a.data.shape[-2:]

    def vjp(g):
        return (g[..., :h, :w],)

    return Tensor(np.pad(a.data, width), (a,), vjp)


def crop2d(a, h: int, w: int):
    """Crop the trailing two axes to (h, w) from the top-left."""
    if a.data.shape[-2:] == (h, w):
        return a
    full = a.data.shape

    def vjp(g):
        out = np.zeros(full, dtype=g.dtype)
        out[..., :h, :w] = g
        return (out,)

    return Tensor(a.data[..., :h, :w].copy(), (a,), vjp)


def _patches(x, kh, kw, pad):
    """Strided (B, C, kh, kw, Ho, Wo) view of the zero-padded input."""
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = h + 2 * pad - kh + 1
    wo = w + 2 * pad - kw + 1
    sb, sc, sh, sw = x.strides
    return as_strided(x, (b, c, kh, kw, ho, wo), (sb, sc, sh, sw, sh, sw))


def _conv_fwd(x, w, pad):
    cols = _patches(x, w.shape[2], w.shape[3], pad)
    out = np.tensordot(w, cols, axes=([1, 2, 3], [1, 2, 3]))  # (F, B, Ho, Wo)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def conv2d(x, w, b=None, pad: int = 1):
    """Stride-1 cross-correlation: x (B,C,H,W), w (F,C,kh,kw), bias (F,)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects x (B,C,H,W) and w (F,C,kh,kw)")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(
            f"channel mismatch: input {x.data.shape[1]}, kernel {w.data.shape[1]}"
        )
    kh, kw = w.data.shape[2], w.data.shape[3]
    out = _conv_fwd(x.data, w.data, pad)
    if b is not None:
        out += b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        g = np.ascontiguousarray(g)
        # input grad: correlate with the flipped, channel-transposed kernel
        w_t = np.ascontiguousarray(w.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        gx = _conv_fwd(g, w_t, kh - 1 - pad)
        # weight grad: one GEMM per kernel tap against shifted input slices
        # (much cheaper than gathering strided patches)
        ho, wo = g.shape[2], g.shape[3]
        xp = x.data
        if pad:
            xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        xt = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, g.shape[1])
        gw = np.empty_like(w.data)
        nchan = x.data.shape[1]
        for u in range(kh):
            for v in range(kw):
                xs = xt[:, u : u + ho, v : v + wo, :].reshape(-1, nchan)
                gw[:, :, u, v] = gt.T @ xs
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor(out, parents, vjp)


def maxpool2(x):
    """2x2 max pooling, stride 2; even spatial dims required."""
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = (
        x.data.reshape(b, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h // 2, w // 2, 4)
    )
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = (
            gb.reshape(b, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h, w)
        )
        return (gx,)

    return Tensor(out, (x,), vjp)


def upsample2(x):
    """Nearest-neighbor 2x upsampling of the trailing two axes."""
    b, c, h, w = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def vjp(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor(out, (x,), vjp)


def magnitude(x):
    """(B, 2, H, W) real/imag channels -> (B, H, W) magnitudes.

    The gradient at exact zeros is defined as 0 (subgradient choice).
    """
    re = x.data[:, 0]
    im = x.data[:, 1]
    mag = np.sqrt(re * re + im * im)
    safe = np.where(mag > 0, mag, 1.0)

    def vjp(g):
        scl = np.where(mag > 0, g / safe, 0.0)
        return (np.stack([re * scl, im * scl], axis=1),)

    return Tensor(mag, (x,), vjp)


def decay(r2, t):
    """exp(-t_k * r2) per echo: r2 (H, W) -> (N, H, W) for echo times t."""
    t = np.asarray(t, dtype=r2.data.dtype)
    out = np.exp(-t[:, None, None] * r2.data[None])

    def vjp(g):
        return ((-t[:, None, None] * out * g).sum(axis=0),)

    return Tensor(out, (r2,), vjp)


def broadcast_echoes(x, n: int):
    """(H, W) -> (N, H, W) by repetition; backward sums over the echo axis."""
    out = np.broadcast_to(x.data[None], (n,) + x.data.shape).copy()
    return Tensor(out, (x,), lambda g: (g.sum(axis=0),))


def linear_map(x, fwd, adj=None):
    """Wrap a linear (or affine, via a baked-in constant) numpy map as a graph op.

    `fwd` maps arrays to arrays; `adj` is the adjoint of its linear part and
    defaults to `fwd` for self-adjoint maps.
    """
    adj = adj or fwd

    def vjp(g):
        return (adj(g),)

    return Tensor(fwd(x.data), (x,), vjp)
