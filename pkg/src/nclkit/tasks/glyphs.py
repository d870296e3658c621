"""Fixed 8x8 digit glyphs; noisy renders of these stand in for image data."""
from __future__ import annotations

import numpy as np

# silhouettes chosen so the closest template pair stays ~2x the sigma=0.2
# noise norm; loopy digits get distinct outlines or the sum-supervised tasks
# inherit an unlearnable 0/6/8/9 cluster
_ROWS = {
    0: ["..####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.",
        ".##..##.", "..####..", "........"],
    1: ["...##...", "..###...", "...##...", "...##...", "...##...",
        "...##...", ".######.", "........"],
    2: ["..####..", ".##..##.", ".....##.", "....##..", "...##...",
        "..##....", ".######.", "........"],
    3: [".#####..", "....##..", "...##...", "....###.", ".....##.",
        ".##..##.", "..####..", "........"],
    4: ["....##..", "...###..", "..#.##..", ".#..##..", ".######.",
        "....##..", "....##..", "........"],
    5: [".######.", ".##.....", ".#####..", ".....##.", ".....##.",
        ".##..##.", "..####..", "........"],
    6: ["...###..", "..##....", ".##.....", ".#####..", ".##..##.",
        ".##..##.", "..####..", "........"],
    7: [".######.", ".....##.", "....##..", "...##...", "..##....",
        "..##....", "..##....", "........"],
    8: ["########", ".##..##.", "..####..", "...##...", "..####..",
        ".##..##.", "########", "........"],
    9: ["..####..", ".##..##.", ".##..##.", "..#####.", ".....##.",
        "....##..", "...##...", "........"],
}


def templates() -> np.ndarray:
    """(10, 64) float templates with ink = 1."""
    out = np.zeros((10, 64))
    for d, rows in _ROWS.items():
        for r, row in enumerate(rows):
            for c, ch in enumerate(row):
                out[d, r * 8 + c] = 1.0 if ch == "#" else 0.0
    return out


def render(classes, rng, noise=0.2) -> np.ndarray:
    """Noisy glyphs: template + iid Gaussian pixel noise."""
    base = templates()
    classes = np.asarray(classes, dtype=np.int64)
    return base[classes] + rng.normal(0.0, noise, size=(len(classes), 64))


def balanced_classes(n, rng) -> np.ndarray:
    """Exactly balanced class sequence (within one), shuffled."""
    classes = np.arange(n) % 10
    return classes[rng.permutation(n)]
