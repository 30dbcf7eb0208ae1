"""Deterministic training loop: seeded batching, milestone checkpoints,
and an append-only metrics log.

Every source of randomness is a pure function of (seed, step), so a run
resumed from a checkpoint continues bit-identically to one that never
stopped, and rerunning a config reproduces its metrics file exactly
(wall-clock column aside).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .alphabet import encode
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainSettings, model_fingerprint
from .errors import CheckpointError, DataError
from .losses import mean_edit_distance, word_accuracy
from .model import Recognizer
from .optim import Adadelta, lr_at
from .synth import AugmentConfig, Dataset, Sample, augment
from .tensor import Tape, Tensor

SHUFFLE_NS = 11  # seed namespace for epoch shuffles
AUGMENT_NS = 13  # seed namespace for per-sample augmentation

METRICS_HEADER = ("step,lr_scale,train_loss,eval_word_acc,"
                  "eval_edit_dist,wall_seconds")


def batch_indices(n: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Sample indices for 1-based optimizer step ``step``.

    Pure in its arguments: each epoch's permutation is seeded by the
    epoch number, ragged tails are dropped, and datasets smaller than a
    batch yield one whole-dataset batch per epoch.
    """
    if n < 1:
        raise DataError("cannot batch an empty split")
    steps_per_epoch = max(1, n // batch_size)
    epoch = (step - 1) // steps_per_epoch
    slot = (step - 1) % steps_per_epoch
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, SHUFFLE_NS, epoch]))
    perm = rng.permutation(n)
    if n < batch_size:
        return perm
    return perm[slot * batch_size : (slot + 1) * batch_size]


def _augment_seed(seed: int, step: int, j: int) -> int:
    ss = np.random.SeedSequence([seed, AUGMENT_NS, step, j])
    return int(ss.generate_state(1, np.uint64)[0])


def assemble_batch(images: np.ndarray, labels: Sequence[str],
                   idx: np.ndarray, step: int, seed: int,
                   augment_cfg: Optional[AugmentConfig]) -> tuple:
    """Gather one training batch, optionally with seeded corruptions."""
    xs = images[idx].copy()
    words = [labels[int(i)] for i in idx]
    if augment_cfg is not None:
        for j in range(xs.shape[0]):
            s = Sample(image=xs[j], label=words[j],
                       seed=_augment_seed(seed, step, j))
            xs[j] = augment(s, augment_cfg, s.seed).image
    return xs, words


def evaluate(model: Recognizer, images: np.ndarray, labels: Sequence[str],
             batch_size: int = 64) -> dict:
    """Greedy-decode a split in eval mode and score it."""
    preds: list[str] = []
    for start in range(0, images.shape[0], batch_size):
        chunk = images[start : start + batch_size]
        logits = model.forward(Tensor(chunk), training=False)
        preds.extend(model.decode(logits.data))
    return {
        "word_accuracy": word_accuracy(preds, labels),
        "mean_normalized_edit_distance": mean_edit_distance(preds, labels),
        "predictions": preds,
    }


@dataclass
class TrainResult:
    steps: int
    final_checkpoint: Path
    metrics_path: Path
    eval_word_acc: float
    eval_edit_dist: float
    stopped_early: bool
    wall_seconds: float


def train_step(model: Recognizer, opt: Adadelta, xs: np.ndarray,
               words: Sequence[str], lr_scale: float) -> float:
    """One forward/backward/update; returns the batch loss."""
    encoded = [encode(w) for w in words]
    with Tape() as tape:
        logits = model.forward(Tensor(xs), training=True)
        loss = model.loss(logits, encoded)
        table = tape.backward(loss)
    grads = model.params.gradients(table)
    opt.step(grads, lr_scale)
    return float(loss.data)


def train(model: Recognizer, dataset: Dataset, settings: TrainSettings,
          resume: Optional[Path] = None) -> TrainResult:
    """Run the loop to ``settings.total_steps`` (or an early-stop exit).

    The model's own seed drives batch order and augmentation draws, so
    one --seed pins the entire trajectory. Checkpoints are written at
    schedule milestones, every ``checkpoint_every`` steps if set, and at
    the end; ``final.ckpt`` after 0 steps equals the initialization.
    """
    seed = model.cfg.seed
    out = Path(settings.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fingerprint = model_fingerprint(model.cfg)
    opt = Adadelta(model.params)

    start_step = 0
    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.fingerprint != fingerprint:
            raise CheckpointError(
                f"checkpoint was trained with config {ck.fingerprint!r}, "
                f"current config is {fingerprint!r}")
        model.params.load_state(ck.params)
        opt.load_state(ck.opt_state)
        start_step = ck.step

    total = settings.total_steps
    if total > start_step and len(dataset.train) == 0:
        raise DataError("training requested but the train split is empty")

    metrics_path = out / "metrics.csv"
    mode = "a" if start_step > 0 else "w"
    schedule = settings.schedule()
    augment_cfg = AugmentConfig() if settings.augment else None
    milestones = {schedule.milestone1, schedule.milestone2}

    t0 = time.monotonic()
    step = start_step
    last_eval = {"word_accuracy": 0.0, "mean_normalized_edit_distance": 0.0}
    stopped = False
    with open(metrics_path, mode, encoding="utf-8") as log:
        if mode == "w":
            log.write(METRICS_HEADER + "\n")
        for step in range(start_step + 1, total + 1):
            idx = batch_indices(len(dataset.train), settings.batch_size,
                                step, seed)
            xs, words = assemble_batch(dataset.train.images,
                                       dataset.train.labels, idx, step, seed,
                                       augment_cfg)
            scale = lr_at(step, schedule)
            loss_val = train_step(model, opt, xs, words, scale)
            if step % settings.eval_every == 0 or step == total:
                last_eval = evaluate(model, dataset.eval.images,
                                     dataset.eval.labels)
                wall = time.monotonic() - t0
                log.write(
                    f"{step},{scale:.6f},{loss_val:.6f},"
                    f"{last_eval['word_accuracy']:.4f},"
                    f"{last_eval['mean_normalized_edit_distance']:.4f},"
                    f"{wall:.3f}\n")
                log.flush()
                if (settings.stop_at_accuracy > 0
                        and last_eval["word_accuracy"]
                        >= settings.stop_at_accuracy):
                    stopped = True
            if (step in milestones
                    or (settings.checkpoint_every
                        and step % settings.checkpoint_every == 0)):
                save_checkpoint(out / f"step{step:07d}.ckpt", step,
                                fingerprint, model.params.state(),
                                opt.state())
            if stopped:
                break

    final = out / "final.ckpt"
    save_checkpoint(final, step, fingerprint, model.params.state(),
                    opt.state())
    return TrainResult(
        steps=step,
        final_checkpoint=final,
        metrics_path=metrics_path,
        eval_word_acc=last_eval["word_accuracy"],
        eval_edit_dist=last_eval["mean_normalized_edit_distance"],
        stopped_early=stopped,
        wall_seconds=time.monotonic() - t0,
    )
