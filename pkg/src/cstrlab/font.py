"""Embedded 5x7 dot-matrix glyphs for the 36-character inventory.

Letters use their capital shapes. Pairs that collide in many fonts are
drawn apart here: zero carries a center slash that 'o' lacks, and one
has a diagonal serif plus no top bar, unlike 'i'.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

GLYPH_H = 7
GLYPH_W = 5

_ROWS = {
    "a": ("  X  ", " X X ", "X   X", "X   X", "XXXXX", "X   X", "X   X"),
    "b": ("XXXX ", "X   X", "X   X", "XXXX ", "X   X", "X   X", "XXXX "),
    "c": (" XXX ", "X   X", "X    ", "X    ", "X    ", "X   X", " XXX "),
    "d": ("XXXX ", "X   X", "X   X", "X   X", "X   X", "X   X", "XXXX "),
    "e": ("XXXXX", "X    ", "X    ", "XXXX ", "X    ", "X    ", "XXXXX"),
    "f": ("XXXXX", "X    ", "X    ", "XXXX ", "X    ", "X    ", "X    "),
    "g": (" XXX ", "X   X", "X    ", "X XXX", "X   X", "X   X", " XXX "),
    "h": ("X   X", "X   X", "X   X", "XXXXX", "X   X", "X   X", "X   X"),
    "i": (" XXX ", "  X  ", "  X  ", "  X  ", "  X  ", "  X  ", " XXX "),
    "j": ("  XXX", "   X ", "   X ", "   X ", "   X ", "X  X ", " XX  "),
    "k": ("X   X", "X  X ", "X X  ", "XX   ", "X X  ", "X  X ", "X   X"),
    "l": ("X    ", "X    ", "X    ", "X    ", "X    ", "X    ", "XXXXX"),
    "m": ("X   X", "XX XX", "X X X", "X X X", "X   X", "X   X", "X   X"),
    "n": ("X   X", "XX  X", "X X X", "X  XX", "X   X", "X   X", "X   X"),
    "o": (" XXX ", "X   X", "X   X", "X   X", "X   X", "X   X", " XXX "),
    "p": ("XXXX ", "X   X", "X   X", "XXXX ", "X    ", "X    ", "X    "),
    "q": (" XXX ", "X   X", "X   X", "X   X", "X X X", "X  X ", " XX X"),
    "r": ("XXXX ", "X   X", "X   X", "XXXX ", "X X  ", "X  X ", "X   X"),
    "s": (" XXXX", "X    ", "X    ", " XXX ", "    X", "    X", "XXXX "),
    "t": ("XXXXX", "  X  ", "  X  ", "  X  ", "  X  ", "  X  ", "  X  "),
    "u": ("X   X", "X   X", "X   X", "X   X", "X   X", "X   X", " XXX "),
    "v": ("X   X", "X   X", "X   X", "X   X", "X   X", " X X ", "  X  "),
    "w": ("X   X", "X   X", "X   X", "X X X", "X X X", "XX XX", "X   X"),
    "x": ("X   X", "X   X", " X X ", "  X  ", " X X ", "X   X", "X   X"),
    "y": ("X   X", "X   X", " X X ", "  X  ", "  X  ", "  X  ", "  X  "),
    "z": ("XXXXX", "    X", "   X ", "  X  ", " X   ", "X    ", "XXXXX"),
    "0": (" XXX ", "X   X", "X  XX", "X X X", "XX  X", "X   X", " XXX "),
    "1": ("  X  ", " XX  ", "  X  ", "  X  ", "  X  ", "  X  ", " XXX "),
    "2": (" XXX ", "X   X", "    X", "   X ", "  X  ", " X   ", "XXXXX"),
    "3": ("XXXXX", "   X ", "  X  ", "   X ", "    X", "X   X", " XXX "),
    "4": ("   X ", "  XX ", " X X ", "X  X ", "XXXXX", "   X ", "   X "),
    "5": ("XXXXX", "X    ", "XXXX ", "    X", "    X", "X   X", " XXX "),
    "6": ("  XX ", " X   ", "X    ", "XXXX ", "X   X", "X   X", " XXX "),
    "7": ("XXXXX", "    X", "   X ", "  X  ", " X   ", " X   ", " X   "),
    "8": (" XXX ", "X   X", "X   X", " XXX ", "X   X", "X   X", " XXX "),
    "9": (" XXX ", "X   X", "X   X", " XXXX", "    X", "   X ", " XX  "),
}


def _parse() -> dict[str, np.ndarray]:
    table = {}
    for ch, rows in _ROWS.items():
        if len(rows) != GLYPH_H or any(len(r) != GLYPH_W for r in rows):
            raise DataError(f"glyph {ch!r} is not {GLYPH_H}x{GLYPH_W}")
        table[ch] = np.array(
            [[1.0 if c == "X" else 0.0 for c in row] for row in rows],
            dtype=np.float32,
        )
    return table


_GLYPHS = _parse()


def glyph(ch: str) -> np.ndarray:
    """(7, 5) float mask for one character; 1 is ink."""
    try:
        return _GLYPHS[ch]
    except KeyError:
        raise DataError(f"no glyph for character {ch!r}") from None
