"""Independent reference computations used to check the library code.

Nothing here imports htmsp internals; each function restates a rule from
scratch in the most literal way available.
"""

import math

import numpy as np


def inhibition_full_sort(overlaps, radius, winners):
    """Local inhibition applied literally: fully sort every neighborhood."""
    overlaps = [float(o) for o in overlaps]
    n_cols = len(overlaps)
    active = []
    for c in range(n_cols):
        others = [overlaps[j] for j in range(n_cols) if j != c and abs(j - c) <= radius]
        others.sort(reverse=True)
        nth = others[winners - 1] if len(others) >= winners else -math.inf
        if overlaps[c] > max(nth, 1.0):
            active.append(c)
    return active


def overlap_literal(inputs, perms, boost, frame, threshold, min_overlap):
    out = []
    for col in range(len(inputs)):
        raw = 0
        for idx, p in zip(inputs[col], perms[col]):
            if p >= threshold and frame[idx]:
                raw += 1
        out.append(0.0 if raw < min_overlap else raw * float(boost[col]))
    return out


def gaussian_weights_2d(block, sigma):
    half = block // 2
    w = [[math.exp(-((dy * dy) + (dx * dx)) / (2 * sigma * sigma))
          for dx in range(-half, half + 1)] for dy in range(-half, half + 1)]
    total = sum(sum(row) for row in w)
    return [[v / total for v in row] for row in w]


def adaptive_threshold_direct(img, block, sigma, bias):
    """Per-pixel weighted mean with clamped (edge-replicated) indexing."""
    h, w = len(img), len(img[0])
    weights = gaussian_weights_2d(block, sigma)
    half = block // 2
    out = [[0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += weights[dy + half][dx + half] * img[yy][xx]
            out[y][x] = 1 if img[y][x] > acc - bias else 0
    return out


def clustering_f1(matrix):
    """Recall, precision, F and the class-weighted best F, in plain Python."""
    rows = [list(map(int, r)) for r in matrix]
    n_i = [sum(r) for r in rows]
    n_j = [sum(rows[i][j] for i in range(len(rows))) for j in range(len(rows[0]))]
    n = sum(n_i)
    total = 0.0
    for i, row in enumerate(rows):
        if n_i[i] == 0:
            continue
        best = 0.0
        for j, nij in enumerate(row):
            r = nij / n_i[i]
            p = nij / n_j[j] if n_j[j] else 0.0
            f = 2 * r * p / (r + p) if r + p > 0 else 0.0
            best = max(best, f)
        total += n_i[i] / n * best
    return total


def popcount(bits):
    return int(sum(1 for b in bits if b))


def random_overlaps(rng, n_cols):
    """Overlaps drawn the way compute_overlap produces them (0 or count * boost)."""
    raw = rng.integers(0, 12, size=n_cols)
    boost = rng.choice([1.0, 1.0, 1.25, 1.5, 2.0], size=n_cols)
    vals = np.where(raw < 3, 0.0, raw * boost)
    return vals
