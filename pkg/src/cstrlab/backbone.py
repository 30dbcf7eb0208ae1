"""Backbone profiles and the five-stage convolutional feature extractor.

Two named scales exist: ``full`` is the full-size network and ``toy``
is an eighth-width replica that trains on one CPU core. Each scale has a
base and an enhanced variant; the enhanced one widens every stage by
half, grows the input, attaches per-block attention, and fuses the last
three stages through a top-down pyramid at quarter resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import ops
from .blocks import SADM, CBAM, FPN, ConvBNRelu, DownsampleConv, ResidualBlock
from .errors import ConfigError, ShapeError
from .tensor import ParameterStore, Tensor


@dataclass(frozen=True)
class BackboneProfile:
    name: str
    in_channels: int
    stem: tuple[int, int]
    widths: tuple[int, int, int, int]  # block width of stages 2..5
    repeats: tuple[int, int, int, int, int]  # r2, r3, r4a, r4b, r5
    image_hw: tuple[int, int]
    fpn_channels: Optional[int]  # None: heads read the last stage directly
    cbam: bool
    sadm: bool
    cbam_reduction: int
    k: int  # fixed number of predicted character positions

    @property
    def feature_channels(self) -> int:
        return self.fpn_channels if self.fpn_channels else self.widths[3]

    def feature_hw(self) -> tuple[int, int]:
        h, w = self.image_hw
        if self.fpn_channels:
            return h // 4, w // 4
        # one pooling and three strided downsamplings behind the heads
        return h // 16, w // 16


_PROFILES = {
    ("full", False): BackboneProfile(
        name="full-base", in_channels=1, stem=(32, 64),
        widths=(128, 256, 512, 512), repeats=(1, 2, 5, 0, 3),
        image_hw=(32, 128), fpn_channels=None, cbam=False, sadm=False,
        cbam_reduction=16, k=25,
    ),
    ("full", True): BackboneProfile(
        name="full-enhanced", in_channels=1, stem=(48, 96),
        widths=(192, 384, 768, 768), repeats=(1, 4, 7, 5, 3),
        image_hw=(48, 192), fpn_channels=512, cbam=True, sadm=True,
        cbam_reduction=16, k=25,
    ),
    ("toy", False): BackboneProfile(
        name="toy-base", in_channels=1, stem=(4, 8),
        widths=(16, 32, 64, 64), repeats=(1, 1, 1, 0, 1),
        image_hw=(16, 64), fpn_channels=None, cbam=False, sadm=False,
        cbam_reduction=4, k=8,
    ),
    ("toy", True): BackboneProfile(
        name="toy-enhanced", in_channels=1, stem=(6, 12),
        widths=(24, 48, 96, 96), repeats=(1, 1, 1, 0, 1),
        image_hw=(16, 64), fpn_channels=64, cbam=True, sadm=True,
        cbam_reduction=4, k=8,
    ),
}


def resolve_profile(scale: str, enhanced: bool,
                    cbam: Optional[bool] = None,
                    sadm: Optional[bool] = None,
                    fpn: Optional[bool] = None) -> BackboneProfile:
    """Look up a named profile and apply optional ablation overrides."""
    key = (scale, bool(enhanced))
    if key not in _PROFILES:
        raise ConfigError(f"unknown backbone scale {scale!r}")
    prof = _PROFILES[key]
    if cbam is not None:
        prof = replace(prof, cbam=cbam)
    if sadm is not None:
        prof = replace(prof, sadm=sadm)
    if fpn is not None:
        prof = replace(prof, fpn_channels=prof.fpn_channels if fpn else None)
    return prof


class _Stage:
    """Downsample entry, residual blocks, and an optional trailing conv.

    Stage 4 interposes its trailing conv between two runs of blocks; all
    other stages put it after the run (a zero-length second run).
    """

    def __init__(self, params, name, rng, cin: int, cout: int,
                 blocks_a: int, blocks_b: int, prof: BackboneProfile,
                 down: str, sadm_variant: str = "a",
                 trail_kernel=3, trail_padding=1):
        self.down: object
        if down == "pool":
            self.down = None  # stage 2 downsamples by max pooling
        elif prof.sadm:
            self.down = SADM(params, f"{name}.sadm", rng, cin, cin,
                             variant=sadm_variant)
        else:
            self.down = DownsampleConv(params, f"{name}.plain", rng, cin, cin)
        red = prof.cbam_reduction if prof.cbam else None
        self.blocks_a = []
        c = cin
        for i in range(blocks_a):
            self.blocks_a.append(
                ResidualBlock(params, f"{name}.block{i}", rng, c, cout, red))
            c = cout
        self.trail = ConvBNRelu(params, f"{name}.trail", rng, cout, cout,
                                trail_kernel, padding=trail_padding)
        self.blocks_b = []
        for i in range(blocks_b):
            self.blocks_b.append(
                ResidualBlock(params, f"{name}.block{blocks_a + i}", rng,
                              cout, cout, red))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if self.down is None:
            x = ops.maxpool2d(x)
        else:
            x = self.down(x, training)
        for blk in self.blocks_a:
            x = blk(x, training)
        x = self.trail(x, training)
        for blk in self.blocks_b:
            x = blk(x, training)
        return x


class CPNet:
    """Five-stage feature extractor with optional pyramid fusion.

    Output is (N, C_feat, H/4, W/4) when the pyramid is on, otherwise the
    last stage's map. Construction order is fixed, so one generator seed
    determines every weight.
    """

    def __init__(self, params: ParameterStore, prof: BackboneProfile,
                 rng: np.random.Generator, name: str = "backbone"):
        self.prof = prof
        c1, c2 = prof.stem
        w2, w3, w4, w5 = prof.widths
        r2, r3, r4a, r4b, r5 = prof.repeats
        self.stem1 = ConvBNRelu(params, f"{name}.stem1", rng,
                                prof.in_channels, c1, 3, padding=1)
        self.stem2 = ConvBNRelu(params, f"{name}.stem2", rng, c1, c2, 3,
                                padding=1)
        self.stage2 = _Stage(params, f"{name}.stage2", rng, c2, w2, r2, 0,
                             prof, down="pool")
        self.stage3 = _Stage(params, f"{name}.stage3", rng, w2, w3, r3, 0,
                             prof, down="sadm", sadm_variant="a")
        self.stage4 = _Stage(params, f"{name}.stage4", rng, w3, w4, r4a, r4b,
                             prof, down="sadm", sadm_variant="a")
        # Stage 5 trails with a 2x2 conv whose single-sided padding keeps
        # the spatial shape.
        self.stage5 = _Stage(params, f"{name}.stage5", rng, w4, w5, r5, 0,
                             prof, down="sadm", sadm_variant="b",
                             trail_kernel=2, trail_padding=(0, 1, 0, 1))
        self.fpn: Optional[FPN] = None
        if prof.fpn_channels:
            self.fpn = FPN(params, f"{name}.fpn", rng, w3, w4, w5,
                           prof.fpn_channels)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        n, c, h, w = x.data.shape
        # Fully convolutional along the reading direction: any width that
        # survives the four halvings is fine, only height is profile-bound.
        if (c, h) != (self.prof.in_channels, self.prof.image_hw[0]) or w % 16:
            raise ShapeError(
                f"backbone {self.prof.name} expects input "
                f"({self.prof.in_channels}, {self.prof.image_hw[0]}, "
                f"width divisible by 16), got {(c, h, w)}"
            )
        x = self.stem2(self.stem1(x, training), training)
        x2 = self.stage2(x, training)
        x3 = self.stage3(x2, training)
        x4 = self.stage4(x3, training)
        x5 = self.stage5(x4, training)
        if self.fpn is not None:
            return self.fpn(x3, x4, x5, training)
        return x5
