"""Model assembly: backbone plus head plus the matching objective."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .alphabet import VOCAB_SIZE
from .backbone import CPNet, BackboneProfile, resolve_profile
from .errors import ConfigError
from .heads import HEAD_KINDS, build_head
from .losses import ce_loss, ce_targets, ctc_loss, decode_batch
from .tensor import ParameterStore, Tensor

OBJECTIVES = ("ce", "ctc")

INIT_NS = 0x11  # seed namespace for weight initialization


@dataclass
class ModelConfig:
    scale: str = "toy"
    enhanced: bool = True
    head: str = "sppn"
    objective: str = "ce"
    seed: int = 0
    k: Optional[int] = None  # pooled-head position count override
    cbam: Optional[bool] = None  # ablation overrides; None keeps the profile
    sadm: Optional[bool] = None
    fpn: Optional[bool] = None
    smoothing: float = 0.1

    def validate(self) -> None:
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(
                f"objective must be one of {OBJECTIVES}, got {self.objective!r}"
            )
        if self.scale not in ("toy", "full"):
            raise ConfigError(f"scale must be 'toy' or 'full', got {self.scale!r}")

    def describe(self) -> str:
        parts = [
            self.scale,
            "em" if self.enhanced else "base",
            self.head,
            self.objective,
        ]
        for flag, label in ((self.cbam, "cbam"), (self.sadm, "sadm"),
                            (self.fpn, "fpn")):
            if flag is not None:
                parts.append(f"{label}={'on' if flag else 'off'}")
        return "-".join(parts)


class Recognizer:
    """Backbone, head, and loss under one roof.

    ``forward`` maps a (N, 1, H, W) image batch to (N, T, V) scores;
    ``loss`` couples them to encoded labels under the configured
    objective; ``decode`` greedily reads words back out.
    """

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.profile: BackboneProfile = resolve_profile(
            cfg.scale, cfg.enhanced, cbam=cfg.cbam, sadm=cfg.sadm, fpn=cfg.fpn
        )
        self.params = ParameterStore()
        rng = np.random.default_rng(np.random.SeedSequence([INIT_NS, cfg.seed]))
        self.backbone = CPNet(self.params, self.profile, rng)
        k = cfg.k if cfg.k is not None else self.profile.k
        _fh, fw = self.profile.feature_hw()
        self.head = build_head(cfg.head, self.params, "head", rng,
                               self.profile.feature_channels, fw, k,
                               VOCAB_SIZE)

    @property
    def positions(self) -> int:
        return self.head.positions

    def forward(self, images: Tensor, training: bool) -> Tensor:
        return self.head(self.backbone(images, training), training)

    __call__ = forward

    def loss(self, logits: Tensor, labels: Sequence[np.ndarray]) -> Tensor:
        if self.cfg.objective == "ce":
            targets = ce_targets(labels, self.positions)
            return ce_loss(logits, targets, smoothing=self.cfg.smoothing)
        return ctc_loss(logits, labels)

    def decode(self, logits: np.ndarray) -> list[str]:
        return decode_batch(logits, self.cfg.objective)

    def num_parameters(self) -> int:
        return self.params.num_parameters()


def build_model(cfg: ModelConfig) -> Recognizer:
    return Recognizer(cfg)
