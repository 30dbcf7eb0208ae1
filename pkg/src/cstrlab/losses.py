"""Training objectives, greedy decoders, and word-level metrics.

Two objectives over per-position class scores: smoothed cross-entropy
against fixed-length padded targets, and an alignment-free objective that
marginalizes over all blank-augmented alignments with a batched log-space
forward-backward pass (its gradient is an exact posterior, implemented as
one custom tape primitive).
"""

from __future__ import annotations

import itertools
from typing import Optional, Sequence

import numpy as np

from . import ops
from .alphabet import BLANK_ID, END_ID, VOCAB_SIZE, decode as ids_to_str
from .errors import DataError, ShapeError
from .tensor import Tensor, recording

NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# cross-entropy with label smoothing


def ce_targets(labels: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Pad id sequences with the end marker to a fixed length k."""
    out = np.full((len(labels), k), END_ID, dtype=np.int64)
    for i, ids in enumerate(labels):
        if len(ids) > k:
            raise DataError(
                f"label of length {len(ids)} exceeds the {k} predicted positions"
            )
        out[i, : len(ids)] = ids
    return out


def ce_loss(logits: Tensor, targets: np.ndarray, smoothing: float = 0.1) -> Tensor:
    """Mean smoothed cross-entropy over every position of every sample.

    ``logits`` is (N, k, V); ``targets`` is (N, k) int ids where positions
    past the word's end hold the end marker. The smoothed target puts
    1 - s + s/V on the true class and s/V elsewhere.
    """
    if logits.data.ndim != 3:
        raise ShapeError(f"ce_loss expects (N, k, V) logits, got {logits.data.shape}")
    n, k, v = logits.data.shape
    if targets.shape != (n, k):
        raise ShapeError(
            f"targets shape {targets.shape} does not match logits {(n, k)}"
        )
    if np.any(targets < 0) or np.any(targets >= v):
        raise DataError("target id outside class range")
    q = np.full((n, k, v), smoothing / v, dtype=logits.data.dtype)
    rows = np.arange(n)[:, None]
    cols = np.arange(k)[None, :]
    q[rows, cols, targets] += 1.0 - smoothing
    logp = ops.log_softmax(logits, axis=-1)
    total = ops.reduce_sum(ops.mul(logp, Tensor(q)))
    return ops.scale(total, -1.0 / (n * k))


# ---------------------------------------------------------------------------
# alignment-free objective (forward-backward over blank-augmented labels)


def ctc_feasible(label_len: int, num_repeats: int, t: int) -> bool:
    """An alignment exists iff T >= L plus the adjacent-repeat count."""
    return t >= label_len + num_repeats


def _count_repeats(ids: np.ndarray) -> int:
    if len(ids) < 2:
        return 0
    return int(np.sum(ids[1:] == ids[:-1]))


def _ctc_batch(lpd: np.ndarray, labels: Sequence[np.ndarray], blank: int):
    """Forward-backward over a batch of log-prob grids.

    Returns (nll, grad) where nll is (N,) per-sample negative log
    likelihood (+inf when no alignment fits) and grad is (N, T, V) the
    gradient of nll w.r.t. the log probabilities (zero rows for
    infeasible samples).
    """
    n, t_len, v = lpd.shape
    lens = np.array([len(l) for l in labels], dtype=np.int64)
    if np.any(lens == 0):
        raise DataError("empty label for alignment-free loss")
    slen = 2 * lens + 1
    s_max = int(slen.max())
    ext = np.full((n, s_max), blank, dtype=np.int64)
    for i, ids in enumerate(labels):
        ext[i, 1 : 2 * len(ids) : 2] = ids
    pad = np.arange(s_max)[None, :] >= slen[:, None]
    # Skip transition s-2 -> s is legal when s is a character state that
    # differs from the previous character state.
    allow2 = np.zeros((n, s_max), dtype=bool)
    allow2[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    allow2 &= ~pad

    # Per-step emission scores indexed by extended-label state.
    emits = np.take_along_axis(lpd, np.broadcast_to(ext[:, None, :],
                                                    (n, t_len, s_max)), axis=2)

    alpha = np.full((n, t_len, s_max), NEG_INF, dtype=np.float64)
    alpha[:, 0, 0] = lpd[:, 0, blank]
    alpha[:, 0, 1] = lpd[np.arange(n), 0, ext[:, 1]]
    neg_col = np.full((n, 1), NEG_INF)
    for t in range(1, t_len):
        prev = alpha[:, t - 1, :]
        step1 = np.concatenate([neg_col, prev[:, :-1]], axis=1)
        step2 = np.concatenate([neg_col, neg_col, prev[:, :-2]], axis=1)
        m = np.logaddexp(prev, step1)
        m = np.where(allow2, np.logaddexp(m, step2), m)
        cur = m + emits[:, t, :]
        cur[pad] = NEG_INF
        alpha[:, t, :] = cur

    rows = np.arange(n)
    last = alpha[rows, t_len - 1, slen - 1]
    pen = alpha[rows, t_len - 1, slen - 2]
    logp_total = np.logaddexp(last, pen)

    # Suffix scores excluding the emission at t, so alpha_t + beta_t sums
    # to the total likelihood at every t.
    beta = np.full((n, t_len, s_max), NEG_INF, dtype=np.float64)
    beta[rows, t_len - 1, slen - 1] = 0.0
    beta[rows, t_len - 1, slen - 2] = 0.0
    allow_from = np.zeros_like(allow2)
    allow_from[:, :-2] = allow2[:, 2:]
    for t in range(t_len - 2, -1, -1):
        q = beta[:, t + 1, :] + emits[:, t + 1, :]
        step1 = np.concatenate([q[:, 1:], neg_col], axis=1)
        step2 = np.concatenate([q[:, 2:], neg_col, neg_col], axis=1)
        m = np.logaddexp(q, step1)
        m = np.where(allow_from, np.logaddexp(m, step2), m)
        m[pad] = NEG_INF
        beta[:, t, :] = m

    reps = np.array([_count_repeats(l) for l in labels], dtype=np.int64)
    feasible = t_len >= lens + reps
    finite = np.isfinite(logp_total) & feasible

    nll = np.where(finite, -logp_total, np.inf)
    grad = np.zeros_like(lpd)
    if np.any(finite):
        occ = np.zeros((n, t_len, s_max), dtype=np.float64)
        occ[finite] = np.exp(
            alpha[finite] + beta[finite] - logp_total[finite, None, None]
        )
        np.add.at(
            grad,
            (rows[:, None, None], np.arange(t_len)[None, :, None],
             ext[:, None, :]),
            -occ.astype(lpd.dtype),
        )
    return nll, grad


def ctc_nll(log_probs: np.ndarray, label: np.ndarray,
            blank: int = BLANK_ID) -> float:
    """Negative log likelihood of one label under one (T, V) log-prob grid."""
    nll, _ = _ctc_batch(log_probs[None].astype(np.float64), [np.asarray(label)],
                        blank)
    return float(nll[0])


def ctc_loss(logits: Tensor, labels: Sequence[np.ndarray],
             blank: int = BLANK_ID) -> Tensor:
    """Mean per-sample alignment-free loss over a (N, T, V) logit batch.

    Samples whose label cannot be aligned in T steps contribute +inf to
    the mean and exactly zero gradient; the batch never crashes.
    """
    if logits.data.ndim != 3:
        raise ShapeError(f"ctc_loss expects (N, T, V) logits, got {logits.data.shape}")
    n = logits.data.shape[0]
    if len(labels) != n:
        raise ShapeError(f"{len(labels)} labels for batch of {n}")
    lp = ops.log_softmax(logits, axis=-1)
    nll, grad = _ctc_batch(lp.data.astype(np.float64), labels, blank)
    out = Tensor(np.asarray(nll.mean(), dtype=lp.data.dtype))
    tape = recording(lp)
    if tape is not None:
        gscale = grad.astype(lp.data.dtype) / n
        tape.record("ctc", (lp,), out, lambda g: (g * gscale,))
    return out


def ctc_brute_force(log_probs: np.ndarray, label: np.ndarray,
                    blank: int = BLANK_ID) -> float:
    """Reference negative log likelihood by explicit path enumeration.

    Sums the probability of every length-T class sequence whose collapse
    (merge adjacent repeats, then drop blanks) equals the label. Only
    viable for tiny grids; guarded accordingly.
    """
    t_len, v = log_probs.shape
    if v ** t_len > 2_000_000:
        raise DataError(f"brute force over {v}^{t_len} paths refused")
    target = tuple(int(c) for c in label)
    total = NEG_INF
    for path in itertools.product(range(v), repeat=t_len):
        out = []
        prev = -1
        for p in path:
            if p != prev and p != blank:
                out.append(p)
            prev = p
        if tuple(out) == target:
            lp = float(sum(log_probs[i, p] for i, p in enumerate(path)))
            total = np.logaddexp(total, lp)
    return float(-total)


# ---------------------------------------------------------------------------
# greedy decoding


def decode_ce(logits: np.ndarray) -> str:
    """Per-position argmax over (k, V), truncated at the first end marker."""
    if logits.ndim != 2:
        raise ShapeError(f"decode_ce expects (k, V) scores, got {logits.shape}")
    ids = logits.argmax(axis=-1)
    keep = []
    for i in ids:
        if int(i) == END_ID:
            break
        keep.append(int(i))
    return ids_to_str(keep)


def decode_ctc(logits: np.ndarray, blank: int = BLANK_ID) -> str:
    """Best-path decode over (T, V): argmax, merge repeats, drop blanks."""
    if logits.ndim != 2:
        raise ShapeError(f"decode_ctc expects (T, V) scores, got {logits.shape}")
    ids = logits.argmax(axis=-1)
    out = []
    prev = -1
    for i in ids:
        i = int(i)
        if i != prev and i != blank:
            out.append(i)
        prev = i
    return ids_to_str(out)


def decode_batch(logits: np.ndarray, objective: str) -> list[str]:
    """Decode a (N, T, V) batch with the decoder matching the objective."""
    fn = decode_ce if objective == "ce" else decode_ctc
    return [fn(logits[i]) for i in range(logits.shape[0])]


# ---------------------------------------------------------------------------
# metrics


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def word_accuracy(preds: Sequence[str], refs: Sequence[str]) -> float:
    """Fraction of exact matches, compared case-insensitively."""
    if len(preds) != len(refs):
        raise ShapeError(f"{len(preds)} predictions vs {len(refs)} references")
    if not refs:
        return 0.0
    return float(np.mean([p.lower() == r.lower() for p, r in zip(preds, refs)]))


def mean_edit_distance(preds: Sequence[str], refs: Sequence[str]) -> float:
    """Levenshtein normalized by the longer string, averaged over pairs."""
    if len(preds) != len(refs):
        raise ShapeError(f"{len(preds)} predictions vs {len(refs)} references")
    if not refs:
        return 0.0
    vals = [
        levenshtein(p.lower(), r.lower()) / max(len(p), len(r), 1)
        for p, r in zip(preds, refs)
    ]
    return float(np.mean(vals))


def metrics(preds: Sequence[str], refs: Sequence[str]) -> dict:
    return {
        "word_accuracy": word_accuracy(preds, refs),
        "mean_normalized_edit_distance": mean_edit_distance(preds, refs),
    }
