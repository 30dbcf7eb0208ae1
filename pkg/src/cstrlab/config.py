"""INI-style run configuration: parsing, validation, and fingerprints.

A config file has ``[section]`` headers and ``key = value`` lines.
Unknown sections or keys are rejected so typos fail loudly instead of
silently falling back to defaults. Every key has a default, so the empty
config is valid.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from .errors import ConfigError
from .model import ModelConfig
from .optim import Schedule, schedule_from_total

KNOWN_KEYS = {
    "model": {
        "scale", "enhanced", "head", "objective", "k",
        "cbam", "sadm", "fpn", "smoothing",
    },
    "data": {
        "dir", "lexicon", "n_train", "n_eval", "image_h", "image_w",
        "eval_noise_sigma",
    },
    "train": {
        "batch_size", "total_steps", "eval_every", "checkpoint_every",
        "augment", "stop_at_accuracy", "out_dir",
        "warmup", "milestone1", "milestone2",
    },
    "ablate": {"seeds", "tables", "steps", "out_dir"},
}


@dataclass
class DataSettings:
    dir: str = "data"
    lexicon: Optional[str] = None  # optional word-list file, one per line
    n_train: int = 2000
    n_eval: int = 500
    image_h: int = 16
    image_w: int = 64
    eval_noise_sigma: float = 0.0

    @property
    def image_hw(self) -> tuple[int, int]:
        return (self.image_h, self.image_w)


@dataclass
class TrainSettings:
    batch_size: int = 32
    total_steps: int = 3000
    eval_every: int = 200
    checkpoint_every: int = 0  # 0 keeps only milestone + final checkpoints
    augment: bool = False
    stop_at_accuracy: float = 0.0  # early stop once eval accuracy reaches this
    out_dir: str = "runs/run"
    warmup: Optional[int] = None  # explicit schedule overrides
    milestone1: Optional[int] = None
    milestone2: Optional[int] = None

    def schedule(self) -> Schedule:
        explicit = (self.warmup, self.milestone1, self.milestone2)
        if all(v is not None for v in explicit):
            sched = Schedule(self.warmup, self.milestone1, self.milestone2,
                             self.total_steps)
            sched.validate()
            return sched
        if any(v is not None for v in explicit):
            raise ConfigError(
                "warmup, milestone1, milestone2 must be set together")
        # Micro-runs (< 4 steps) cannot host the ratio layout; pad the
        # lookup schedule so they simply train at full scale after warmup.
        return schedule_from_total(max(self.total_steps, 4))


@dataclass
class AblateSettings:
    seeds: tuple[int, ...] = (0, 1, 2)
    tables: tuple[str, ...] = ("heads", "backbone", "augment")
    steps: int = 1200
    out_dir: str = "results"


def load_config(path: Optional[str]) -> configparser.ConfigParser:
    """Parse and validate an INI file; None yields an all-defaults config."""
    cp = configparser.ConfigParser(interpolation=None)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(p, encoding="utf-8") as f:
                cp.read_file(f)
        except (configparser.Error, OSError) as e:
            raise ConfigError(f"cannot parse config {path}: {e}") from e
    for section in cp.sections():
        if section not in KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in KNOWN_KEYS[section]:
                raise ConfigError(
                    f"unknown key {key!r} in section [{section}]")
    return cp


def _get(cp, section: str, key: str) -> Optional[str]:
    if cp.has_section(section) and key in cp[section]:
        return cp[section][key].strip()
    return None


def _get_int(cp, section: str, key: str, default: Optional[int]):
    raw = _get(cp, section, key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"[{section}] {key} must be an integer, "
                          f"got {raw!r}") from e


def _get_float(cp, section: str, key: str, default: float) -> float:
    raw = _get(cp, section, key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError as e:
        raise ConfigError(f"[{section}] {key} must be a number, "
                          f"got {raw!r}") from e


_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}


def _get_bool(cp, section: str, key: str, default):
    raw = _get(cp, section, key)
    if raw is None:
        return default
    val = _BOOL.get(raw.lower())
    if val is None:
        raise ConfigError(f"[{section}] {key} must be a boolean, got {raw!r}")
    return val


def build_model_config(cp, seed: int = 0) -> ModelConfig:
    cfg = ModelConfig(
        scale=_get(cp, "model", "scale") or "toy",
        enhanced=_get_bool(cp, "model", "enhanced", True),
        head=_get(cp, "model", "head") or "sppn",
        objective=_get(cp, "model", "objective") or "ce",
        seed=seed,
        k=_get_int(cp, "model", "k", None),
        cbam=_get_bool(cp, "model", "cbam", None),
        sadm=_get_bool(cp, "model", "sadm", None),
        fpn=_get_bool(cp, "model", "fpn", None),
        smoothing=_get_float(cp, "model", "smoothing", 0.1),
    )
    cfg.validate()
    return cfg


def build_data_settings(cp) -> DataSettings:
    ds = DataSettings(
        dir=_get(cp, "data", "dir") or "data",
        lexicon=_get(cp, "data", "lexicon"),
        n_train=_get_int(cp, "data", "n_train", 2000),
        n_eval=_get_int(cp, "data", "n_eval", 500),
        image_h=_get_int(cp, "data", "image_h", 16),
        image_w=_get_int(cp, "data", "image_w", 64),
        eval_noise_sigma=_get_float(cp, "data", "eval_noise_sigma", 0.0),
    )
    if ds.n_train < 0 or ds.n_eval < 0:
        raise ConfigError("n_train and n_eval must be >= 0")
    if ds.image_h < 8 or ds.image_w < 8:
        raise ConfigError("image_h and image_w must be >= 8")
    return ds


def build_train_settings(cp) -> TrainSettings:
    ts = TrainSettings(
        batch_size=_get_int(cp, "train", "batch_size", 32),
        total_steps=_get_int(cp, "train", "total_steps", 3000),
        eval_every=_get_int(cp, "train", "eval_every", 200),
        checkpoint_every=_get_int(cp, "train", "checkpoint_every", 0),
        augment=_get_bool(cp, "train", "augment", False),
        stop_at_accuracy=_get_float(cp, "train", "stop_at_accuracy", 0.0),
        out_dir=_get(cp, "train", "out_dir") or "runs/run",
        warmup=_get_int(cp, "train", "warmup", None),
        milestone1=_get_int(cp, "train", "milestone1", None),
        milestone2=_get_int(cp, "train", "milestone2", None),
    )
    if ts.batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if ts.total_steps < 0:
        raise ConfigError("total_steps must be >= 0")
    if ts.eval_every < 1:
        raise ConfigError("eval_every must be >= 1")
    ts.schedule()  # fail fast on an inconsistent milestone layout
    return ts


def build_ablate_settings(cp) -> AblateSettings:
    raw_seeds = _get(cp, "ablate", "seeds")
    if raw_seeds is None:
        seeds: tuple[int, ...] = (0, 1, 2)
    else:
        try:
            seeds = tuple(int(s) for s in raw_seeds.split(",") if s.strip())
        except ValueError as e:
            raise ConfigError(f"[ablate] seeds must be comma-separated "
                              f"integers, got {raw_seeds!r}") from e
        if not seeds:
            raise ConfigError("[ablate] seeds must not be empty")
    raw_tables = _get(cp, "ablate", "tables")
    if raw_tables is None:
        tables: tuple[str, ...] = ("heads", "backbone", "augment")
    else:
        tables = tuple(t.strip() for t in raw_tables.split(",") if t.strip())
        for t in tables:
            if t not in ("heads", "backbone", "augment"):
                raise ConfigError(f"unknown ablation table {t!r}")
    return AblateSettings(
        seeds=seeds,
        tables=tables,
        steps=_get_int(cp, "ablate", "steps", 1200),
        out_dir=_get(cp, "ablate", "out_dir") or "results",
    )


# ---------------------------------------------------------------------------
# Fingerprints


def model_fingerprint(cfg: ModelConfig) -> str:
    """Canonical, parseable identity string stored in checkpoint headers."""
    def fmt(v):
        if v is None:
            return "default"
        if isinstance(v, bool):
            return "true" if v else "false"
        return str(v)

    fields = [
        ("scale", cfg.scale), ("enhanced", cfg.enhanced), ("head", cfg.head),
        ("objective", cfg.objective), ("seed", cfg.seed), ("k", cfg.k),
        ("cbam", cfg.cbam), ("sadm", cfg.sadm), ("fpn", cfg.fpn),
        ("smoothing", cfg.smoothing),
    ]
    return ";".join(f"{k}={fmt(v)}" for k, v in fields)


def parse_model_fingerprint(text: str) -> ModelConfig:
    """Rebuild a ModelConfig from a checkpoint's fingerprint string."""
    vals: dict[str, str] = {}
    for part in text.split(";"):
        if "=" not in part:
            raise ConfigError(f"malformed fingerprint entry {part!r}")
        k, v = part.split("=", 1)
        vals[k] = v

    def want(key: str) -> str:
        if key not in vals:
            raise ConfigError(f"fingerprint missing field {key!r}")
        return vals[key]

    def opt_bool(key: str):
        raw = want(key)
        return None if raw == "default" else raw == "true"

    k_raw = want("k")
    cfg = ModelConfig(
        scale=want("scale"),
        enhanced=want("enhanced") == "true",
        head=want("head"),
        objective=want("objective"),
        seed=int(want("seed")),
        k=None if k_raw == "default" else int(k_raw),
        cbam=opt_bool("cbam"),
        sadm=opt_bool("sadm"),
        fpn=opt_bool("fpn"),
        smoothing=float(want("smoothing")),
    )
    cfg.validate()
    return cfg


def digest16(items: Mapping[str, object]) -> str:
    """Stable 16-hex-digit digest of a flat key->value mapping."""
    blob = "\n".join(f"{k}={items[k]}" for k in sorted(items))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
