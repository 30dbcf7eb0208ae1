"""Prediction heads mapping backbone features to per-position class scores.

All heads emit (N, T, V): T is the feature width for the two
column-reading heads and a fixed position count for the pooled head.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .blocks import Linear
from .errors import ConfigError, ShapeError
from .tensor import ParameterStore, Tensor

HEAD_KINDS = ("shpn", "sepn", "sppn")


def _columns(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, W, C): average out height, keep reading order."""
    collapsed = ops.reduce_mean(x, axis=2)  # N, C, W
    return ops.transpose(collapsed, (0, 2, 1))


class SharedConvHead:
    """One projection shared across all feature columns (shpn).

    Equivalent to a 1x1 convolution over the width axis after collapsing
    height, the usual front end of alignment-free recognizers.
    """

    kind = "shpn"

    def __init__(self, params: ParameterStore, name: str,
                 rng: np.random.Generator, cin: int, width: int, vocab: int):
        self.proj = Linear(params, f"{name}.proj", rng, cin, vocab)
        self.positions = width
        self.cin = cin
        self.vocab = vocab

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        n, _c, _h, w = x.data.shape
        if w != self.positions:
            raise ShapeError(
                f"head built for width {self.positions}, feature width {w}"
            )
        cols = ops.reshape(_columns(x), (n * w, self.cin))
        return ops.reshape(self.proj(cols, training), (n, w, self.vocab))


class PerPositionConvHead:
    """An independent projection for every feature column (sepn).

    Same reach as the shared head but with width-times the parameters:
    each reading position owns its classifier.
    """

    kind = "sepn"

    def __init__(self, params: ParameterStore, name: str,
                 rng: np.random.Generator, cin: int, width: int, vocab: int):
        self.projs = [
            Linear(params, f"{name}.proj{i:02d}", rng, cin, vocab)
            for i in range(width)
        ]
        self.positions = width
        self.cin = cin
        self.vocab = vocab

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        n, _c, _h, w = x.data.shape
        if w != self.positions:
            raise ShapeError(
                f"head built for width {self.positions}, feature width {w}"
            )
        cols = _columns(x)  # N, W, C
        outs = []
        for i, proj in enumerate(self.projs):
            col = ops.reshape(ops.narrow(cols, 1, i, 1), (n, self.cin))
            outs.append(ops.reshape(proj(col, training), (n, 1, self.vocab)))
        return ops.concat(outs, axis=1)


class PooledConvHead:
    """Global average pooling, then k independent classifiers (sppn).

    Pooling folds the whole feature map into one descriptor, so every
    position classifier sees global context; position count is a model
    constant rather than the feature width.
    """

    kind = "sppn"

    def __init__(self, params: ParameterStore, name: str,
                 rng: np.random.Generator, cin: int, k: int, vocab: int):
        self.projs = [
            Linear(params, f"{name}.proj{i:02d}", rng, cin, vocab)
            for i in range(k)
        ]
        self.positions = k
        self.vocab = vocab

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        n, c = x.data.shape[0], x.data.shape[1]
        pooled = ops.reshape(ops.global_avg_pool(x), (n, c))
        outs = [
            ops.reshape(proj(pooled, training), (n, 1, self.vocab))
            for proj in self.projs
        ]
        return ops.concat(outs, axis=1)


def build_head(kind: str, params: ParameterStore, name: str,
               rng: np.random.Generator, cin: int, width: int, k: int,
               vocab: int):
    if kind == "shpn":
        return SharedConvHead(params, name, rng, cin, width, vocab)
    if kind == "sepn":
        return PerPositionConvHead(params, name, rng, cin, width, vocab)
    if kind == "sppn":
        return PooledConvHead(params, name, rng, cin, k, vocab)
    raise ConfigError(f"unknown head kind {kind!r}; expected one of {HEAD_KINDS}")
