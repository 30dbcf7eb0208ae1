"""Character inventory shared by rendering, targets, and decoding.

Indices 0-25 are lowercase letters, 26-35 are digits, and index 36 is a
single reserved class that fixed-length targets use as the end-of-word
filler and the alignment-free objective uses as the blank.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"
SPECIAL_ID = len(CHARS)  # 36
END_ID = SPECIAL_ID
BLANK_ID = SPECIAL_ID
VOCAB_SIZE = len(CHARS) + 1  # 37

_CHAR_TO_ID = {c: i for i, c in enumerate(CHARS)}


def canonicalize(word: str) -> str:
    """Lowercase a word; reject anything outside the inventory."""
    low = word.lower()
    bad = sorted({c for c in low if c not in _CHAR_TO_ID})
    if bad:
        raise DataError(f"word {word!r} contains unsupported characters {bad}")
    if not low:
        raise DataError("empty word")
    return low


def encode(word: str) -> np.ndarray:
    """Word -> int ids, after canonicalization."""
    low = canonicalize(word)
    return np.array([_CHAR_TO_ID[c] for c in low], dtype=np.int64)


def decode(ids) -> str:
    """Int ids -> string; the reserved index maps to nothing."""
    out = []
    for i in ids:
        i = int(i)
        if i == SPECIAL_ID:
            continue
        if not 0 <= i < len(CHARS):
            raise DataError(f"id {i} outside alphabet of size {VOCAB_SIZE}")
        out.append(CHARS[i])
    return "".join(out)
