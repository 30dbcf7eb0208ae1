"""Layer and block classes that register their weights in a ParameterStore.

Construction is deterministic: layers draw initial values from the
generator handed to them, and the build order is fixed by the caller, so
one seed reproduces one parameter vector bit for bit. Convolution and
linear weights use fan-in uniform init, biases start at zero, and gating
layers (attention reweighting, non-local fusion) start at exactly zero so
a freshly built block is a benign identity-like map.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import ops
from .errors import ShapeError
from .tensor import ParameterStore, Tensor


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def conv_out_hw(h: int, w: int, kernel, stride=1, padding=0) -> tuple[int, int]:
    """Spatial shape produced by conv2d, for shape audits without weights."""
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    if isinstance(padding, int):
        pt = pb = pl = pr = padding
    elif len(padding) == 2:
        pt, pb = padding[0], padding[0]
        pl, pr = padding[1], padding[1]
    else:
        pt, pb, pl, pr = padding
    return (h + pt + pb - kh) // sh + 1, (w + pl + pr - kw) // sw + 1


def residual_out_shape(n: int, cin: int, h: int, w: int,
                       cout: int) -> tuple[int, int, int, int]:
    """Shape a residual block produces, without building one."""
    return (n, cout, h, w)


def gate_out_shape(n: int, c: int, h: int, w: int) -> tuple[int, int, int, int]:
    """Attention gating and non-local blocks preserve their input shape."""
    return (n, c, h, w)


def sadm_out_shape(n: int, cin: int, h: int, w: int,
                   cout: int) -> tuple[int, int, int, int]:
    ho, wo = conv_out_hw(h, w, 3, stride=2, padding=1)
    return (n, cout, ho, wo)


def fpn_out_shape(n: int, h3: int, w3: int,
                  out_channels: int) -> tuple[int, int, int, int]:
    return (n, out_channels, h3, w3)


class Conv2d:
    def __init__(self, params: ParameterStore, name: str,
                 rng: np.random.Generator, cin: int, cout: int, kernel,
                 stride=1, padding=0, bias: bool = True,
                 zero_init: bool = False):
        kh, kw = _pair(kernel)
        if zero_init:
            wd = np.zeros((cout, cin, kh, kw), dtype=np.float32)
        else:
            bound = 1.0 / math.sqrt(cin * kh * kw)
            wd = rng.uniform(-bound, bound,
                             size=(cout, cin, kh, kw)).astype(np.float32)
        self.w = params.add(f"{name}.w", wd)
        self.b: Optional[Tensor] = None
        if bias:
            self.b = params.add(f"{name}.b", np.zeros(cout, dtype=np.float32))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride,
                          padding=self.padding)


class BatchNorm2d:
    def __init__(self, params: ParameterStore, name: str, channels: int,
                 momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = params.add(f"{name}.gamma",
                                np.ones(channels, dtype=np.float32))
        self.beta = params.add(f"{name}.beta",
                               np.zeros(channels, dtype=np.float32))
        self.running_mean = params.add(f"{name}.running_mean",
                                       np.zeros(channels, dtype=np.float32),
                                       trainable=False)
        self.running_var = params.add(f"{name}.running_var",
                                      np.ones(channels, dtype=np.float32),
                                      trainable=False)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                               self.running_var, training,
                               momentum=self.momentum, eps=self.eps)


class Linear:
    def __init__(self, params: ParameterStore, name: str,
                 rng: np.random.Generator, fin: int, fout: int,
                 bias: bool = True, zero_init: bool = False):
        if zero_init:
            wd = np.zeros((fout, fin), dtype=np.float32)
        else:
            bound = 1.0 / math.sqrt(fin)
            wd = rng.uniform(-bound, bound, size=(fout, fin)).astype(np.float32)
        self.w = params.add(f"{name}.w", wd)
        self.b: Optional[Tensor] = None
        if bias:
            self.b = params.add(f"{name}.b", np.zeros(fout, dtype=np.float32))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.linear(x, self.w, self.b)


class ConvBNRelu:
    """conv (no bias) -> batchnorm -> relu."""

    def __init__(self, params, name, rng, cin, cout, kernel,
                 stride=1, padding=0):
        self.conv = Conv2d(params, f"{name}.conv", rng, cin, cout, kernel,
                           stride=stride, padding=padding, bias=False)
        self.bn = BatchNorm2d(params, f"{name}.bn", cout)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.relu(self.bn(self.conv(x, training), training))


class ChannelGate:
    """Channel reweighting from pooled descriptors.

    A two-layer bottleneck MLP scores the average- and max-pooled channel
    vectors; the summed scores pass through a sigmoid. Both layers start
    at zero, so an untrained gate is exactly 0.5 everywhere.
    """

    def __init__(self, params, name, rng, channels: int, reduction: int):
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(params, f"{name}.fc1", rng, channels, hidden,
                          zero_init=True)
        self.fc2 = Linear(params, f"{name}.fc2", rng, hidden, channels,
                          zero_init=True)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        n, c = x.data.shape[0], x.data.shape[1]
        avg = ops.reshape(ops.global_avg_pool(x), (n, c))
        mx = ops.reduce_max(x, axis=(2, 3))
        score = None
        for v in (avg, mx):
            h = self.fc2(ops.relu(self.fc1(v, training)), training)
            score = h if score is None else ops.add(score, h)
        gate = ops.sigmoid(score)
        return ops.mul(x, ops.reshape(gate, (n, c, 1, 1)))


class SpatialGate:
    """Spatial reweighting from channel statistics.

    Per-pixel mean and max over channels feed a zero-initialized 7x7
    convolution; its sigmoid output scales every channel.
    """

    def __init__(self, params, name, rng):
        self.conv = Conv2d(params, f"{name}.conv", rng, 2, 1, 7, padding=3,
                           zero_init=True)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        mean_c = ops.reduce_mean(x, axis=1, keepdims=True)
        max_c = ops.reduce_max(x, axis=1, keepdims=True)
        gate = ops.sigmoid(self.conv(ops.concat([mean_c, max_c], axis=1),
                                     training))
        return ops.mul(x, gate)


class CBAM:
    """Channel gate followed by spatial gate. Fresh gates scale by 1/4."""

    def __init__(self, params, name, rng, channels: int, reduction: int):
        self.channel = ChannelGate(params, f"{name}.channel", rng, channels,
                                   reduction)
        self.spatial = SpatialGate(params, f"{name}.spatial", rng)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.spatial(self.channel(x, training), training)


class ResidualBlock:
    """Two 3x3 conv-bn steps with identity or projected shortcut.

    The optional attention module reweights the residual branch before
    the addition; because fresh gates only rescale, a new block still
    behaves like its plain counterpart up to a constant factor.
    """

    def __init__(self, params, name, rng, cin: int, cout: int,
                 cbam_reduction: Optional[int] = None):
        self.conv1 = Conv2d(params, f"{name}.conv1", rng, cin, cout, 3,
                            padding=1, bias=False)
        self.bn1 = BatchNorm2d(params, f"{name}.bn1", cout)
        self.conv2 = Conv2d(params, f"{name}.conv2", rng, cout, cout, 3,
                            padding=1, bias=False)
        self.bn2 = BatchNorm2d(params, f"{name}.bn2", cout)
        self.attn: Optional[CBAM] = None
        if cbam_reduction is not None:
            self.attn = CBAM(params, f"{name}.attn", rng, cout, cbam_reduction)
        self.proj: Optional[Conv2d] = None
        self.proj_bn: Optional[BatchNorm2d] = None
        if cin != cout:
            self.proj = Conv2d(params, f"{name}.proj", rng, cin, cout, 1,
                               bias=False)
            self.proj_bn = BatchNorm2d(params, f"{name}.proj_bn", cout)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        f = ops.relu(self.bn1(self.conv1(x, training), training))
        f = self.bn2(self.conv2(f, training), training)
        if self.attn is not None:
            f = self.attn(f, training)
        if self.proj is not None:
            x = self.proj_bn(self.proj(x, training), training)
        return ops.relu(ops.add(x, f))


class NonLocalBlock:
    """Global self-attention residual in embedded-Gaussian form.

    Query/key/value are bias-free 1x1 projections to half the channels;
    the fusing projection back to full width starts at zero, so a fresh
    block is exactly the identity.
    """

    def __init__(self, params, name, rng, channels: int):
        inter = max(1, channels // 2)
        self.theta = Conv2d(params, f"{name}.theta", rng, channels, inter, 1,
                            bias=False)
        self.phi = Conv2d(params, f"{name}.phi", rng, channels, inter, 1,
                          bias=False)
        self.g = Conv2d(params, f"{name}.g", rng, channels, inter, 1,
                        bias=False)
        self.wz = Conv2d(params, f"{name}.wz", rng, inter, channels, 1,
                         zero_init=True)
        self.inter = inter

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        n, _c, h, w = x.data.shape
        hw = h * w
        theta = ops.reshape(self.theta(x, training), (n, self.inter, hw))
        phi = ops.reshape(self.phi(x, training), (n, self.inter, hw))
        gval = ops.reshape(self.g(x, training), (n, self.inter, hw))
        attn = ops.softmax(ops.bmm(ops.transpose(theta, (0, 2, 1)), phi),
                           axis=-1)
        mix = ops.bmm(attn, ops.transpose(gval, (0, 2, 1)))  # N, HW, inter
        mix = ops.reshape(ops.transpose(mix, (0, 2, 1)), (n, self.inter, h, w))
        return ops.add(x, self.wz(mix, training))


class DownsampleConv:
    """Plain strided 3x3 conv-bn-relu that halves both spatial axes."""

    def __init__(self, params, name, rng, cin: int, cout: int):
        self.body = ConvBNRelu(params, f"{name}.down", rng, cin, cout, 3,
                               stride=2, padding=1)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.body(x, training)


class SADM:
    """Attention-assisted downsampling: non-local context, then stride-2 conv.

    The two placements (mid-network and last-stage) share this exact
    computation; the variant tag only names them apart in checkpoints.
    Inputs must have even spatial dims so the output is exactly half.
    """

    def __init__(self, params, name, rng, cin: int, cout: int,
                 variant: str = "a"):
        self.context = NonLocalBlock(params, f"{name}.nl_{variant}", rng, cin)
        self.down = DownsampleConv(params, f"{name}", rng, cin, cout)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        _n, _c, h, w = x.data.shape
        if h % 2 or w % 2:
            raise ShapeError(
                f"downsampling needs even spatial dims, got {h}x{w}"
            )
        return self.down(self.context(x, training), training)


class FPN:
    """Top-down fusion of three stage outputs at quarter resolution.

    Each input gets a 1x1 lateral projection; coarser maps are upsampled
    by nearest neighbor and summed into the finer ones; a final 3x3
    conv-bn-relu smooths the fused map.
    """

    def __init__(self, params, name, rng, c3: int, c4: int, c5: int,
                 out_channels: int):
        self.lat3 = Conv2d(params, f"{name}.lat3", rng, c3, out_channels, 1,
                           bias=False)
        self.lat4 = Conv2d(params, f"{name}.lat4", rng, c4, out_channels, 1,
                           bias=False)
        self.lat5 = Conv2d(params, f"{name}.lat5", rng, c5, out_channels, 1,
                           bias=False)
        self.smooth = ConvBNRelu(params, f"{name}.smooth", rng, out_channels,
                                 out_channels, 3, padding=1)

    def __call__(self, x3: Tensor, x4: Tensor, x5: Tensor,
                 training: bool) -> Tensor:
        p5 = self.lat5(x5, training)
        p4 = ops.add(self.lat4(x4, training), ops.upsample_nearest2d(p5, 2))
        p3 = ops.add(self.lat3(x3, training), ops.upsample_nearest2d(p4, 2))
        return self.smooth(p3, training)
