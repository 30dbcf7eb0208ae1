"""Alignment-free loss against an exhaustive path-enumeration oracle.

The dynamic-programming recursion and the brute-force enumerator are
written independently; their agreement on every small instance is the
strongest correctness evidence this objective has.
"""

import numpy as np
import pytest

from cstrlab.errors import DataError
from cstrlab.gradcheck import grad_check
from cstrlab.losses import ctc_brute_force, ctc_loss, ctc_nll
from cstrlab.tensor import Tensor


def _random_log_probs(rng, t, v):
    p = rng.uniform(0.05, 1.0, size=(t, v))
    return np.log(p / p.sum(axis=1, keepdims=True))


def test_forward_backward_matches_brute_force_on_200_random_cases():
    rng = np.random.default_rng(0)
    feasible_seen = 0
    for case in range(200):
        t = int(rng.integers(1, 7))
        v = int(rng.integers(2, 5))
        blank = v - 1
        label_len = int(rng.integers(1, 4))
        label = rng.integers(0, v - 1, size=label_len)
        lp = _random_log_probs(rng, t, v)
        fast = ctc_nll(lp, label, blank=blank)
        slow = ctc_brute_force(lp, label, blank=blank)
        if np.isinf(slow):
            assert np.isinf(fast), f"case {case}: dp={fast} brute=inf"
        else:
            feasible_seen += 1
            assert abs(fast - slow) <= 1e-9, (
                f"case {case}: t={t} v={v} label={label.tolist()} "
                f"dp={fast!r} brute={slow!r}"
            )
    assert feasible_seen >= 100  # the draw ranges make feasibility common


def test_single_frame_single_char():
    lp = np.log(np.array([[0.4, 0.6]]))  # classes: blank=0, a=1
    expected = -np.log(0.6)
    assert abs(ctc_nll(lp, np.array([1]), blank=0) - expected) < 1e-12
    assert abs(ctc_brute_force(lp, np.array([1]), blank=0) - expected) < 1e-12


def test_two_frames_uniform_binary_vocab():
    lp = np.log(np.full((2, 2), 0.5))
    # paths aa, a-, -a all collapse to "a": total probability 3/4
    expected = -np.log(0.75)
    assert abs(ctc_nll(lp, np.array([1]), blank=0) - expected) < 1e-12
    assert abs(ctc_brute_force(lp, np.array([1]), blank=0) - expected) < 1e-12


def test_three_frames_repeated_char_needs_separator():
    lp = np.log(np.full((3, 2), 0.5))
    # only a,-,a survives collapsing for the label "aa": probability 1/8
    expected = -np.log(1.0 / 8.0)
    assert abs(ctc_nll(lp, np.array([1, 1]), blank=0) - expected) < 1e-12
    assert abs(ctc_brute_force(lp, np.array([1, 1]), blank=0) - expected) < 1e-12


def test_brute_force_empty_label_is_all_blank_path():
    rng = np.random.default_rng(1)
    lp = _random_log_probs(rng, 4, 3)
    expected = -float(lp[:, 2].sum())
    assert abs(ctc_brute_force(lp, np.array([], dtype=np.int64), blank=2)
               - expected) < 1e-12


def test_label_longer_than_frames_is_infeasible():
    rng = np.random.default_rng(2)
    lp = _random_log_probs(rng, 2, 3)
    label = np.array([0, 1, 0])
    assert np.isinf(ctc_brute_force(lp, label, blank=2))
    assert np.isinf(ctc_nll(lp, label, blank=2))


def test_adjacent_repeats_raise_frame_requirement():
    rng = np.random.default_rng(3)
    lp = _random_log_probs(rng, 3, 3)
    # "aaa" needs 3 + 2 separators = 5 frames; 3 are not enough
    assert np.isinf(ctc_nll(lp, np.array([0, 0, 0]), blank=2))
    assert np.isinf(ctc_brute_force(lp, np.array([0, 0, 0]), blank=2))


def test_brute_force_refuses_huge_search_spaces():
    lp = np.zeros((8, 10))
    with pytest.raises(DataError):
        ctc_brute_force(lp, np.array([1]), blank=0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for trial in range(5):
        n = int(rng.integers(1, 3))
        t = int(rng.integers(4, 7))
        v = int(rng.integers(3, 5))
        labels = [rng.integers(0, v - 1, size=int(rng.integers(1, 3)))
                  for _ in range(n)]
        logits = Tensor(rng.normal(size=(n, t, v)))
        report = grad_check(
            lambda: ctc_loss(logits, labels, blank=v - 1), {"logits": logits}
        )
        assert report.passed, f"trial {trial}: {report}"


def test_batch_mean_equals_mean_of_singles():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(3, 5, 4))
    labels = [np.array([0]), np.array([1, 2]), np.array([2, 0])]
    batch = ctc_loss(Tensor(logits), labels, blank=3).item()
    lse = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
    singles = [ctc_nll(lse[i], labels[i], blank=3) for i in range(3)]
    assert abs(batch - np.mean(singles)) < 1e-6
