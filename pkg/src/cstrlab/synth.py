"""Synthetic word-image generation and the on-disk dataset format.

Everything is a pure function of (inputs, seed): rendering a word twice
with the same seed gives bit-identical pixels, and rebuilding a dataset
reproduces every file byte for byte. Images live in [0, 1] as float32 in
memory and as 8-bit binary PGM (P5) on disk.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import convolve

from .alphabet import canonicalize
from .errors import DataError
from .font import GLYPH_H, GLYPH_W, glyph

# 50 training words, 3-7 chars, letters and digits, none with adjacent
# repeated characters so every word stays alignable at 8 output frames.
DEFAULT_LEXICON = (
    "cat", "dog", "sun", "map", "fox", "red", "big", "sky", "cup", "pen",
    "bird", "fish", "lamp", "rock", "wind", "gold", "mint", "snow", "frog",
    "drum", "table", "chair", "plant", "stone", "cloud", "brick", "mouse",
    "grape", "toast", "crane", "garden", "silver", "rocket", "flower",
    "bridge", "planet", "carbon", "violet", "crystal", "diamond", "thunder",
    "harvest", "monarch", "density", "365", "2024", "8086", "90210",
    "area51", "agent7",
)


@dataclass
class Sample:
    image: np.ndarray  # (1, H, W) float32 in [0, 1]
    label: str
    seed: int


@dataclass
class AugmentConfig:
    """The three training-time corruptions and their magnitudes."""

    blur_lengths: tuple[int, ...] = (1, 3, 5)
    blur_angles: tuple[int, ...] = (0, 45, 90, 135)
    noise_sigma: float = 0.05  # upper end of the drawn sigma
    brightness: float = 0.2
    contrast: float = 0.2
    prob: float = 0.5  # per-op firing probability

    def validate(self) -> None:
        if any(l < 1 or l % 2 == 0 for l in self.blur_lengths):
            raise DataError("blur kernel lengths must be odd and >= 1")
        if any(a not in (0, 45, 90, 135) for a in self.blur_angles):
            raise DataError("blur angles limited to 0, 45, 90, 135 degrees")
        if self.noise_sigma < 0:
            raise DataError("noise sigma must be >= 0")
        if not 0.0 <= self.prob <= 1.0:
            raise DataError(f"op probability must be in [0, 1], got {self.prob}")


def render_word(word: str, canvas_hw: tuple[int, int] = (16, 64),
                seed: int = 0) -> Sample:
    """Rasterize one word onto a gray canvas.

    The seed controls integer glyph scale, horizontal placement, and the
    foreground/background gray levels; the glyph row is vertically
    centered. Same (word, canvas, seed) always gives the same pixels.
    """
    word = canonicalize(word)
    h, w = canvas_hw
    text_w = len(word) * (GLYPH_W + 1) - 1
    s_max = min((h - 2) // GLYPH_H, (w - 2) // text_w)
    if s_max < 1:
        raise DataError(
            f"word {word!r} needs {text_w}x{GLYPH_H} plus margin, "
            f"canvas is {w}x{h}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    s = int(rng.integers(1, s_max + 1))
    x0 = int(rng.integers(0, w - text_w * s + 1))
    y0 = (h - GLYPH_H * s) // 2
    ink = np.float32(rng.uniform(0.7, 1.0))
    bg = np.float32(rng.uniform(0.0, 0.25))

    img = np.full((h, w), bg, dtype=np.float32)
    for i, ch in enumerate(word):
        mask = np.kron(glyph(ch), np.ones((s, s), dtype=np.float32))
        gx = x0 + i * (GLYPH_W + 1) * s
        region = img[y0:y0 + GLYPH_H * s, gx:gx + GLYPH_W * s]
        region[mask > 0] = ink
    return Sample(image=img[None, :, :], label=word, seed=seed)


def _blur_kernel(length: int, angle: int) -> np.ndarray:
    """Normalized 1-d box kernel embedded at one of four angles."""
    if length == 1:
        return np.ones((1, 1), dtype=np.float32)
    k = np.zeros((length, length), dtype=np.float32)
    c = length // 2
    if angle == 0:
        k[c, :] = 1.0
    elif angle == 90:
        k[:, c] = 1.0
    elif angle == 45:
        k[np.arange(length - 1, -1, -1), np.arange(length)] = 1.0
    elif angle == 135:
        k[np.arange(length), np.arange(length)] = 1.0
    else:
        raise DataError(f"unsupported blur angle {angle}")
    return k / k.sum()


def augment(sample: Sample, config: AugmentConfig, seed: int) -> Sample:
    """Apply motion blur, gaussian noise, and brightness/contrast jitter.

    Each op fires independently with ``config.prob``; magnitudes are then
    drawn from the configured ranges. Output pixels are clamped to [0, 1].
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    img = sample.image[0]
    if rng.random() < config.prob:
        length = int(rng.choice(np.asarray(config.blur_lengths)))
        angle = int(rng.choice(np.asarray(config.blur_angles)))
        img = convolve(img, _blur_kernel(length, angle), mode="nearest")
    if rng.random() < config.prob:
        sigma = rng.uniform(0.0, config.noise_sigma)
        img = img + rng.normal(0.0, sigma, size=img.shape).astype(np.float32)
    if rng.random() < config.prob:
        db = np.float32(rng.uniform(-config.brightness, config.brightness))
        dc = np.float32(rng.uniform(-config.contrast, config.contrast))
        img = img * (np.float32(1.0) + dc) + db
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return Sample(image=img[None, :, :], label=sample.label, seed=seed)


# ---------------------------------------------------------------------------
# PGM files and the manifest


def write_pgm(path: Path, image01: np.ndarray) -> None:
    """Quantize a (H, W) float image in [0, 1] to binary 8-bit PGM."""
    arr = np.round(np.clip(image01, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    """Load a binary 8-bit PGM back into (H, W) float32 in [0, 1]."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4 and pos < len(raw):
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":  # comment line
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if len(fields) != 4 or fields[0] != b"P5":
        raise DataError(f"{path} is not a binary PGM file")
    w, h, maxval = (int(x) for x in fields[1:])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM supported, maxval {maxval}")
    pos += 1  # single whitespace byte after the header
    if len(raw) - pos < h * w:
        raise DataError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=pos)
    return (pixels.reshape(h, w).astype(np.float32) / 255.0)


@dataclass
class SplitData:
    images: np.ndarray  # (n, 1, H, W) float32
    labels: list[str]
    seeds: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Dataset:
    train: SplitData
    eval: SplitData
    image_hw: tuple[int, int]
    manifest_digest: str


def build_dataset(lexicon: Sequence[str], n_train: int, n_eval: int,
                  out_dir, seed: int,
                  image_hw: tuple[int, int] = (16, 64),
                  eval_noise_sigma: float = 0.0) -> Path:
    """Render a train/eval split to ``out_dir`` and write manifest.tsv.

    Word choice and per-sample render seeds come from disjoint,
    split-scoped seed streams; eval images receive no training-style
    augmentation, only the optional deterministic mild noise used for
    robustness evaluation sets.
    """
    words = [canonicalize(w) for w in lexicon]
    if not words:
        raise DataError("empty lexicon")
    out = Path(out_dir)
    rows = []
    for split, count, split_id in (("train", n_train, 0), ("eval", n_eval, 1)):
        (out / split).mkdir(parents=True, exist_ok=True)
        word_rng = np.random.default_rng(
            np.random.SeedSequence([seed, split_id]))
        picks = word_rng.integers(0, len(words), size=count)
        for i in range(count):
            word = words[int(picks[i])]
            ss = np.random.SeedSequence([seed, split_id, i])
            sample_seed = int(ss.generate_state(1, np.uint64)[0])
            sample = render_word(word, image_hw, sample_seed)
            img = sample.image[0]
            if split == "eval" and eval_noise_sigma > 0:
                noise_rng = np.random.default_rng(
                    np.random.SeedSequence([seed, split_id, i, 7]))
                img = np.clip(
                    img + noise_rng.normal(0.0, eval_noise_sigma,
                                           size=img.shape).astype(np.float32),
                    0.0, 1.0,
                )
            rel = f"{split}/{i:05d}.pgm"
            try:
                write_pgm(out / rel, img)
            except OSError as e:
                raise DataError(f"cannot write {out / rel}: {e}") from e
            rows.append((rel, word, split, sample_seed))
    manifest = out / "manifest.tsv"
    with open(manifest, "w", encoding="utf-8") as f:
        f.write("relative_path\tlabel\tsplit\tseed\n")
        for rel, word, split, sseed in rows:
            f.write(f"{rel}\t{word}\t{split}\t{sseed}\n")
    return manifest


def load_dataset(manifest_path) -> Dataset:
    """Read a manifest and all its images into memory."""
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read manifest {manifest_path}: {e}") from e
    root = manifest_path.parent
    parts: dict[str, list] = {"train": [], "eval": []}
    lines = text.splitlines()
    if lines and lines[0].startswith("relative_path"):
        lines = lines[1:]
    for ln, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise DataError(
                f"{manifest_path}:{ln}: expected 4 tab-separated columns"
            )
        rel, label, split, sseed = cols
        if split not in parts:
            raise DataError(f"{manifest_path}:{ln}: unknown split {split!r}")
        parts[split].append((rel, canonicalize(label), int(sseed)))
    hw: Optional[tuple[int, int]] = None
    splits = {}
    for split, items in parts.items():
        imgs, labels, seeds = [], [], []
        for rel, label, sseed in items:
            img = read_pgm(root / rel)
            if hw is None:
                hw = img.shape
            elif img.shape != hw:
                raise DataError(
                    f"{rel}: image shape {img.shape} differs from {hw}"
                )
            imgs.append(img[None])
            labels.append(label)
            seeds.append(sseed)
        stack = (np.stack(imgs) if imgs
                 else np.zeros((0, 1, 0, 0), dtype=np.float32))
        splits[split] = SplitData(images=stack, labels=labels,
                                  seeds=np.array(seeds, dtype=np.uint64))
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    if hw is None:
        hw = (0, 0)
    return Dataset(train=splits["train"], eval=splits["eval"],
                   image_hw=(int(hw[0]), int(hw[1])), manifest_digest=digest)
