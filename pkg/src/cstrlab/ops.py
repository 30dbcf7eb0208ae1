"""Differentiable primitives over numpy arrays.

Every function here follows the same pattern: compute the forward result
eagerly, and if a tape is active and some input wants gradients, record a
backward closure that maps the output gradient to per-input gradients.
Backward closures capture the forward-time numpy buffers they need, never
the Tensor objects' live ``data`` attribute.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

from .errors import ShapeError
from .tensor import Tensor, check_same_dtype, recording

Axis = Union[None, int, tuple[int, ...]]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


def _norm_axes(axis: Axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _check_broadcastable(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    check_same_dtype(a, b)
    _check_broadcastable("add", a, b)
    out = Tensor(a.data + b.data)
    tape = recording(a, b)
    if tape is not None:
        ash, bsh = a.data.shape, b.data.shape
        tape.record(
            "add", (a, b), out,
            lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)),
        )
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    check_same_dtype(a, b)
    _check_broadcastable("sub", a, b)
    out = Tensor(a.data - b.data)
    tape = recording(a, b)
    if tape is not None:
        ash, bsh = a.data.shape, b.data.shape
        tape.record(
            "sub", (a, b), out,
            lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)),
        )
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    check_same_dtype(a, b)
    _check_broadcastable("mul", a, b)
    out = Tensor(a.data * b.data)
    tape = recording(a, b)
    if tape is not None:
        ad, bd = a.data, b.data
        tape.record(
            "mul", (a, b), out,
            lambda g: (
                _unbroadcast(g * bd, ad.shape),
                _unbroadcast(g * ad, bd.shape),
            ),
        )
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * x.data.dtype.type(c))
    tape = recording(x)
    if tape is not None:
        cc = x.data.dtype.type(c)
        tape.record("scale", (x,), out, lambda g: (g * cc,))
    return out


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data + x.data.dtype.type(c))
    tape = recording(x)
    if tape is not None:
        tape.record("add_scalar", (x,), out, lambda g: (g,))
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    tape = recording(x)
    if tape is not None:
        mask = x.data > 0
        tape.record("relu", (x,), out, lambda g: (g * mask,))
    return out


def sigmoid(x: Tensor) -> Tensor:
    yd = expit(x.data)
    out = Tensor(yd)
    tape = recording(x)
    if tape is not None:
        tape.record("sigmoid", (x,), out, lambda g: (g * yd * (1 - yd),))
    return out


# ---------------------------------------------------------------------------
# matrix products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    check_same_dtype(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)
    tape = recording(a, b)
    if tape is not None:
        ad, bd = a.data, b.data
        tape.record(
            "matmul", (a, b), out,
            lambda g: (g @ bd.T, ad.T @ g),
        )
    return out


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: (N, m, k) @ (N, k, n) -> (N, m, n)."""
    check_same_dtype(a, b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError(
            f"bmm expects 3-d operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ShapeError(f"bmm shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    tape = recording(a, b)
    if tape is not None:
        ad, bd = a.data, b.data
        tape.record(
            "bmm", (a, b), out,
            lambda g: (g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g),
        )
    return out


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map: (N, F) x (O, F) [+ (O,)] -> (N, O)."""
    check_same_dtype(x, w, b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"linear shape mismatch: x {x.data.shape}, w {w.data.shape}"
        )
    yd = x.data @ w.data.T
    if b is not None:
        yd = yd + b.data
    out = Tensor(yd)
    inputs = (x, w) if b is None else (x, w, b)
    tape = recording(*inputs)
    if tape is not None:
        xd, wd = x.data, w.data

        def backward(g):
            gb = g.sum(axis=0) if b is not None else None
            grads = (g @ wd, g.T @ xd)
            return grads if b is None else grads + (gb,)

        tape.record("linear", inputs, out, backward)
    return out


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.data.ndim)
    out = Tensor(x.data.sum(axis=axes, keepdims=keepdims))
    tape = recording(x)
    if tape is not None:
        xsh = x.data.shape

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, xsh),)

        tape.record("sum", (x,), out, backward)
    return out


def reduce_mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.data.ndim)
    count = 1
    for a in axes:
        count *= x.data.shape[a]
    out = Tensor(x.data.mean(axis=axes, keepdims=keepdims))
    tape = recording(x)
    if tape is not None:
        xsh = x.data.shape
        inv = x.data.dtype.type(1.0 / count)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g * inv, xsh),)

        tape.record("mean", (x,), out, backward)
    return out


def reduce_max(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    """Max over the given axes; ties send the gradient to the first max.

    "First" means smallest flat index after moving the reduced axes to the
    end in their given order, matching numpy's argmax convention.
    """
    axes = _norm_axes(axis, x.data.ndim)
    kept = tuple(i for i in range(x.data.ndim) if i not in axes)
    perm = kept + axes
    moved = x.data.transpose(perm)
    lead = moved.shape[: len(kept)]
    flat = moved.reshape(lead + (-1,))
    idx = flat.argmax(axis=-1)
    vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if keepdims:
        shape = tuple(
            1 if i in axes else n for i, n in enumerate(x.data.shape)
        )
        out_data = vals.reshape(shape)
    else:
        out_data = vals
    out = Tensor(out_data)
    tape = recording(x)
    if tape is not None:
        inv_perm = np.argsort(perm)

        def backward(g):
            gf = np.zeros_like(flat)
            np.put_along_axis(gf, idx[..., None], g.reshape(lead + (1,)), axis=-1)
            return (gf.reshape(moved.shape).transpose(inv_perm),)

        tape.record("max", (x,), out, backward)
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shift)
    yd = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(yd)
    tape = recording(x)
    if tape is not None:

        def backward(g):
            gy = g * yd
            return (gy - yd * gy.sum(axis=axis, keepdims=True),)

        tape.record("softmax", (x,), out, backward)
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=axis, keepdims=True))
    yd = shift - lse
    out = Tensor(yd)
    tape = recording(x)
    if tape is not None:

        def backward(g):
            return (g - np.exp(yd) * g.sum(axis=axis, keepdims=True),)

        tape.record("log_softmax", (x,), out, backward)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(np.ascontiguousarray(x.data.reshape(shape)))
    tape = recording(x)
    if tape is not None:
        xsh = x.data.shape
        tape.record("reshape", (x,), out, lambda g: (g.reshape(xsh),))
    return out


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    tape = recording(x)
    if tape is not None:
        inv = tuple(np.argsort(axes))
        tape.record("transpose", (x,), out, lambda g: (g.transpose(inv),))
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    check_same_dtype(*tensors)
    try:
        joined = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            "concat: incompatible shapes "
            f"{[t.data.shape for t in tensors]} along axis {axis}"
        ) from None
    out = Tensor(joined)
    tape = recording(*tensors)
    if tape is not None:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        tape.record(
            "concat", tuple(tensors), out,
            lambda g: tuple(np.split(g, splits, axis=axis)),
        )
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` elements along one axis."""
    if start < 0 or length < 0 or start + length > x.data.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} "
            f"of shape {x.data.shape}"
        )
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(np.ascontiguousarray(x.data[sl]))
    tape = recording(x)
    if tape is not None:
        xsh = x.data.shape

        def backward(g):
            gx = np.zeros(xsh, dtype=g.dtype)
            gx[sl] = g
            return (gx,)

        tape.record("narrow", (x,), out, backward)
    return out


# ---------------------------------------------------------------------------
# spatial ops


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def _pad4(padding) -> tuple[int, int, int, int]:
    """Normalize to (top, bottom, left, right)."""
    if isinstance(padding, int):
        return (padding,) * 4
    padding = tuple(int(p) for p in padding)
    if len(padding) == 2:
        ph, pw = padding
        return (ph, ph, pw, pw)
    if len(padding) == 4:
        return padding
    raise ShapeError(f"padding must be int, 2-tuple or 4-tuple, got {padding!r}")


def _conv_windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int,
                  ho: int, wo: int) -> np.ndarray:
    """Strided view (N, C, kh, kw, Ho, Wo) over a padded input. Read-only."""
    n, c, _hp, _wp = xp.shape
    s0, s1, s2, s3 = xp.strides
    return as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s0, s1, s2, s3, s2 * sh, s3 * sw),
        writeable=False,
    )


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride=1, padding=0) -> Tensor:
    """2-d cross-correlation: (N,Ci,H,W) x (Co,Ci,kh,kw) -> (N,Co,Ho,Wo)."""
    check_same_dtype(x, w, b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and weight, got {x.data.shape} "
            f"and {w.data.shape}"
        )
    n, ci, h, wid = x.data.shape
    co, ciw, kh, kw = w.data.shape
    if ci != ciw:
        raise ShapeError(
            f"conv2d channel mismatch: input has {ci}, weight expects {ciw}"
        )
    sh, sw = _pair(stride)
    pt, pb, pl, pr = _pad4(padding)
    hp, wp = h + pt + pb, wid + pl + pr
    ho, wo = (hp - kh) // sh + 1, (wp - kw) // sw + 1
    if hp < kh or wp < kw:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )

    if (pt, pb, pl, pr) == (0, 0, 0, 0):
        xp = x.data
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = _conv_windows(xp, kh, kw, sh, sw, ho, wo)
    yd = np.tensordot(win, w.data, axes=([1, 2, 3], [1, 2, 3]))
    yd = np.ascontiguousarray(yd.transpose(0, 3, 1, 2))
    if b is not None:
        if b.data.shape != (co,):
            raise ShapeError(
                f"conv2d bias shape {b.data.shape} != ({co},)"
            )
        yd += b.data[None, :, None, None]
    out = Tensor(yd)
    inputs = (x, w) if b is None else (x, w, b)
    tape = recording(*inputs)
    if tape is not None:
        wd = w.data

        def backward(g):
            # dW contracts gradient against the same input windows.
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 4, 5]))
            # dX: expand gradient through the kernel, scatter-add windows.
            gwin = np.tensordot(g, wd, axes=([1], [0]))  # N,Ho,Wo,Ci,kh,kw
            gwin = gwin.transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += \
                        gwin[:, :, i, j]
            gx = gxp[:, :, pt:pt + h, pl:pl + wid]
            if b is None:
                return (gx, gw)
            return (gx, gw, g.sum(axis=(0, 2, 3)))

        tape.record("conv2d", inputs, out, backward)
    return out


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd edges padded with -inf.

    Ties within a window route the gradient to the first element in
    row-major window order.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-d input, got {x.data.shape}")
    n, c, h, w = x.data.shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    xp = x.data
    if h % 2 or w % 2:
        xp = np.pad(
            xp, ((0, 0), (0, 0), (0, ho * 2 - h), (0, wo * 2 - w)),
            constant_values=-np.inf,
        )
    # (N, C, Ho, 2, Wo, 2) -> (N, C, Ho, Wo, 2, 2): last two axes enumerate
    # the window in row-major order, so argmax picks the first tie.
    tiles = xp.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = np.ascontiguousarray(tiles).reshape(n, c, ho, wo, 4)
    idx = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0])
    tape = recording(x)
    if tape is not None:

        def backward(g):
            gf = np.zeros_like(flat)
            np.put_along_axis(gf, idx[..., None], g[..., None], axis=-1)
            gxp = gf.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            gxp = gxp.reshape(n, c, ho * 2, wo * 2)
            return (np.ascontiguousarray(gxp[:, :, :h, :w]),)

        tape.record("maxpool2d", (x,), out, backward)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C, 1, 1) spatial mean."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects 4-d input, got {x.data.shape}")
    n, c, h, w = x.data.shape
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))
    tape = recording(x)
    if tape is not None:
        inv = x.data.dtype.type(1.0 / (h * w))

        def backward(g):
            return (np.broadcast_to(g * inv, (n, c, h, w)),)

        tape.record("global_avg_pool", (x,), out, backward)
    return out


def upsample_nearest2d(x: Tensor, factor: int) -> Tensor:
    """Integer nearest-neighbor upsampling of both spatial axes."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample expects 4-d input, got {x.data.shape}")
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    n, c, h, w = x.data.shape
    yd = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    out = Tensor(yd)
    tape = recording(x)
    if tape is not None:

        def backward(g):
            return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

        tape.record("upsample_nearest2d", (x,), out, backward)
    return out


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: Tensor, running_var: Tensor,
                training: bool, momentum: float = 0.9,
                eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization, fused as one primitive.

    Training mode normalizes with biased batch statistics and folds them
    into the running buffers as ``running = momentum*running + (1-m)*batch``;
    eval mode normalizes with the running buffers and treats them as
    constants in the backward pass.
    """
    check_same_dtype(x, gamma, beta)
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d expects 4-d input, got {x.data.shape}")
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"batchnorm2d affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"!= ({c},)"
        )
    dt = x.data.dtype
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean.data = (momentum * running_mean.data
                             + (1.0 - momentum) * mu).astype(dt)
        running_var.data = (momentum * running_var.data
                            + (1.0 - momentum) * var).astype(dt)
    else:
        mu = running_mean.data
        var = running_var.data
    inv = 1.0 / np.sqrt(var + dt.type(eps))
    inv = inv.astype(dt)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    yd = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = Tensor(yd)
    tape = recording(x, gamma, beta)
    if tape is not None:
        gd = gamma.data
        m = n * h * w

        def backward(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            dxhat = g * gd[None, :, None, None]
            if training:
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (inv[None, :, None, None] / m) * (
                    m * dxhat - s1 - xhat * s2
                )
            else:
                dx = dxhat * inv[None, :, None, None]
            return (dx.astype(g.dtype, copy=False), dgamma, dbeta)

        tape.record("batchnorm2d", (x, gamma, beta), out, backward)
    return out
