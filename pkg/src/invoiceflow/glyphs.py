"""Embedded 8x16 fixed-width glyph set for the synthetic page rasterizer.

Glyphs are stored as ASCII art, one string per row, 'X' marking ink.
Bodies are drawn on a 16-row cell: two blank rows on top, baseline at row
12, descender space below. Lowercase input renders with the uppercase
shapes; unknown characters fall back to a hollow box.
"""

from __future__ import annotations

import numpy as np

__all__ = ["GLYPHS", "glyph_bitmap", "CELL_WIDTH", "CELL_HEIGHT"]

CELL_WIDTH = 8
CELL_HEIGHT = 16

# Body rows begin at cell row 2. Trailing blank rows are implied.
_BODIES: dict[str, list[str]] = {
    "A": ["..XXXX..", ".XX..XX.", "XX....XX", "XX....XX", "XXXXXXXX",
          "XX....XX", "XX....XX", "XX....XX", "XX....XX"],
    "B": ["XXXXXX..", "XX...XX.", "XX...XX.", "XX...XX.", "XXXXXX..",
          "XX...XX.", "XX...XX.", "XX...XX.", "XXXXXX.."],
    "C": [".XXXXX..", "XX...XX.", "XX......", "XX......", "XX......",
          "XX......", "XX......", "XX...XX.", ".XXXXX.."],
    "D": ["XXXXX...", "XX..XX..", "XX...XX.", "XX...XX.", "XX...XX.",
          "XX...XX.", "XX...XX.", "XX..XX..", "XXXXX..."],
    "E": ["XXXXXXX.", "XX......", "XX......", "XX......", "XXXXXX..",
          "XX......", "XX......", "XX......", "XXXXXXX."],
    "F": ["XXXXXXX.", "XX......", "XX......", "XX......", "XXXXXX..",
          "XX......", "XX......", "XX......", "XX......"],
    "G": [".XXXXX..", "XX...XX.", "XX......", "XX......", "XX..XXX.",
          "XX...XX.", "XX...XX.", "XX...XX.", ".XXXXX.."],
    "H": ["XX...XX.", "XX...XX.", "XX...XX.", "XX...XX.", "XXXXXXX.",
          "XX...XX.", "XX...XX.", "XX...XX.", "XX...XX."],
    "I": ["XXXXXX..", "..XX....", "..XX....", "..XX....", "..XX....",
          "..XX....", "..XX....", "..XX....", "XXXXXX.."],
    "J": ["..XXXXX.", "....XX..", "....XX..", "....XX..", "....XX..",
          "....XX..", "XX..XX..", "XX..XX..", ".XXXX..."],
    "K": ["XX...XX.", "XX..XX..", "XX.XX...", "XXXX....", "XXX.....",
          "XXXX....", "XX.XX...", "XX..XX..", "XX...XX."],
    "L": ["XX......", "XX......", "XX......", "XX......", "XX......",
          "XX......", "XX......", "XX......", "XXXXXXX."],
    "M": ["XX....XX", "XXX..XXX", "XXXXXXXX", "XX.XX.XX", "XX.XX.XX",
          "XX....XX", "XX....XX", "XX....XX", "XX....XX"],
    "N": ["XX...XX.", "XXX..XX.", "XXXX.XX.", "XX.XXXX.", "XX..XXX.",
          "XX...XX.", "XX...XX.", "XX...XX.", "XX...XX."],
    "O": [".XXXXX..", "XX...XX.", "XX...XX.", "XX...XX.", "XX...XX.",
          "XX...XX.", "XX...XX.", "XX...XX.", ".XXXXX.."],
    "P": ["XXXXXX..", "XX...XX.", "XX...XX.", "XX...XX.", "XXXXXX..",
          "XX......", "XX......", "XX......", "XX......"],
    "Q": [".XXXXX..", "XX...XX.", "XX...XX.", "XX...XX.", "XX...XX.",
          "XX...XX.", "XX.X.XX.", "XX..XX..", ".XXXX.X."],
    "R": ["XXXXXX..", "XX...XX.", "XX...XX.", "XX...XX.", "XXXXXX..",
          "XX.XX...", "XX..XX..", "XX...XX.", "XX...XX."],
    "S": [".XXXXX..", "XX...XX.", "XX......", ".XX.....", "..XXX...",
          "....XX..", ".....XX.", "XX...XX.", ".XXXXX.."],
    "T": ["XXXXXX..", "..XX....", "..XX....", "..XX....", "..XX....",
          "..XX....", "..XX....", "..XX....", "..XX...."],
    "U": ["XX...XX.", "XX...XX.", "XX...XX.", "XX...XX.", "XX...XX.",
          "XX...XX.", "XX...XX.", "XX...XX.", ".XXXXX.."],
    "V": ["XX...XX.", "XX...XX.", "XX...XX.", "XX...XX.", "XX...XX.",
          ".XX.XX..", ".XX.XX..", "..XXX...", "...X...."],
    "W": ["XX....XX", "XX....XX", "XX....XX", "XX.XX.XX", "XX.XX.XX",
          "XX.XX.XX", "XXXXXXXX", "XXX..XXX", "XX....XX"],
    "X": ["XX...XX.", "XX...XX.", ".XX.XX..", "..XXX...", "..XXX...",
          ".XX.XX..", "XX...XX.", "XX...XX.", "XX...XX."],
    "Y": ["XX...XX.", "XX...XX.", ".XX.XX..", "..XXX...", "..XX....",
          "..XX....", "..XX....", "..XX....", "..XX...."],
    "Z": ["XXXXXXX.", ".....XX.", "....XX..", "...XX...", "..XX....",
          ".XX.....", "XX......", "XX......", "XXXXXXX."],
    "0": [".XXXXX..", "XX...XX.", "XX..XXX.", "XX.XXXX.", "XXXX.XX.",
          "XXX..XX.", "XX...XX.", "XX...XX.", ".XXXXX.."],
    "1": ["..XX....", ".XXX....", "XXXX....", "..XX....", "..XX....",
          "..XX....", "..XX....", "..XX....", "XXXXXX.."],
    "2": [".XXXXX..", "XX...XX.", ".....XX.", "....XX..", "...XX...",
          "..XX....", ".XX.....", "XX......", "XXXXXXX."],
    "3": [".XXXXX..", "XX...XX.", ".....XX.", "..XXXX..", "....XX..",
          ".....XX.", ".....XX.", "XX...XX.", ".XXXXX.."],
    "4": ["....XX..", "...XXX..", "..XXXX..", ".XX.XX..", "XX..XX..",
          "XXXXXXX.", "....XX..", "....XX..", "....XX.."],
    "5": ["XXXXXXX.", "XX......", "XX......", "XXXXXX..", ".....XX.",
          ".....XX.", ".....XX.", "XX...XX.", ".XXXXX.."],
    "6": [".XXXXX..", "XX...XX.", "XX......", "XXXXXX..", "XX...XX.",
          "XX...XX.", "XX...XX.", "XX...XX.", ".XXXXX.."],
    "7": ["XXXXXXX.", ".....XX.", "....XX..", "....XX..", "...XX...",
          "...XX...", "..XX....", "..XX....", "..XX...."],
    "8": [".XXXXX..", "XX...XX.", "XX...XX.", ".XXXXX..", "XX...XX.",
          "XX...XX.", "XX...XX.", "XX...XX.", ".XXXXX.."],
    "9": [".XXXXX..", "XX...XX.", "XX...XX.", "XX...XX.", ".XXXXXX.",
          ".....XX.", ".....XX.", "XX...XX.", ".XXXXX.."],
    ".": ["........", "........", "........", "........", "........",
          "........", "........", "..XX....", "..XX...."],
    ",": ["........", "........", "........", "........", "........",
          "........", "........", "..XX....", "..XX....", ".XX....."],
    ":": ["........", "..XX....", "..XX....", "........", "........",
          "........", "........", "..XX....", "..XX...."],
    ";": ["........", "..XX....", "..XX....", "........", "........",
          "........", "........", "..XX....", "..XX....", ".XX....."],
    "#": [".XX.XX..", ".XX.XX..", "XXXXXXX.", ".XX.XX..", ".XX.XX..",
          ".XX.XX..", "XXXXXXX.", ".XX.XX..", ".XX.XX.."],
    "/": [".....XX.", ".....XX.", "....XX..", "...XX...", "...XX...",
          "..XX....", ".XX.....", ".XX.....", "XX......"],
    "-": ["........", "........", "........", "........", "XXXXXX..",
          "XXXXXX..", "........", "........", "........"],
    "(": ["...XX...", "..XX....", ".XX.....", ".XX.....", ".XX.....",
          ".XX.....", ".XX.....", "..XX....", "...XX..."],
    ")": ["..XX....", "...XX...", "....XX..", "....XX..", "....XX..",
          "....XX..", "....XX..", "...XX...", "..XX...."],
    "$": ["...X....", ".XXXXX..", "XX.X.XX.", "XX.X....", ".XXXXX..",
          "...X.XX.", "XX.X.XX.", ".XXXXX..", "...X...."],
    "%": ["XX...XX.", "XX..XX..", "....XX..", "...XX...", "..XX....",
          ".XX.....", ".XX..XX.", "XX...XX.", "........"],
    "&": [".XXX....", "XX.XX...", "XX.XX...", ".XXX....", "XXX..XX.",
          "XX.XXX..", "XX..XX..", "XX.XXX..", ".XXX.XX."],
    "@": [".XXXXX..", "XX...XX.", "XX.XXXX.", "XX.X.XX.", "XX.XXXX.",
          "XX......", "XX......", "XX...XX.", ".XXXXX.."],
    "+": ["........", "...X....", "...X....", "...X....", ".XXXXX..",
          "...X....", "...X....", "...X....", "........"],
    "!": ["..XX....", "..XX....", "..XX....", "..XX....", "..XX....",
          "..XX....", "........", "..XX....", "..XX...."],
    "?": [".XXXXX..", "XX...XX.", ".....XX.", "....XX..", "...XX...",
          "...XX...", "........", "...XX...", "...XX..."],
    "'": ["..XX....", "..XX....", "..XX....", "........", "........",
          "........", "........", "........", "........"],
    '"': [".XX.XX..", ".XX.XX..", ".XX.XX..", "........", "........",
          "........", "........", "........", "........"],
    "=": ["........", "........", "XXXXXX..", "XXXXXX..", "........",
          "XXXXXX..", "XXXXXX..", "........", "........"],
    "_": ["........", "........", "........", "........", "........",
          "........", "........", "........", "XXXXXXX."],
    "|": ["..XX....", "..XX....", "..XX....", "..XX....", "..XX....",
          "..XX....", "..XX....", "..XX....", "..XX...."],
    "*": ["........", "...X....", ".X.X.X..", "..XXX...", "XXXXXXX.",
          "..XXX...", ".X.X.X..", "...X....", "........"],
    " ": ["........"],
}

_FALLBACK = ["XXXXXXX.", "X.....X.", "X.....X.", "X.....X.", "X.....X.",
             "X.....X.", "X.....X.", "X.....X.", "XXXXXXX."]

_BODY_TOP_ROW = 2


def _compile(body: list[str]) -> np.ndarray:
    cell = np.zeros((CELL_HEIGHT, CELL_WIDTH), dtype=bool)
    for r, row in enumerate(body):
        target = _BODY_TOP_ROW + r
        if target >= CELL_HEIGHT:
            break
        for c, ch in enumerate(row[:CELL_WIDTH]):
            if ch == "X":
                cell[target, c] = True
    return cell


GLYPHS: dict[str, np.ndarray] = {ch: _compile(body) for ch, body in _BODIES.items()}
_FALLBACK_CELL = _compile(_FALLBACK)


def glyph_bitmap(ch: str) -> np.ndarray:
    """16x8 boolean ink mask for one character."""
    upper = ch.upper()
    if upper in GLYPHS:
        return GLYPHS[upper]
    return _FALLBACK_CELL
