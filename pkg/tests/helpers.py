"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops, deliberately sharing no
code with the library paths it checks.
"""

import math

import numpy as np


def kmax_oracle(row, k):
    """k largest values of a row, descending, ties by earlier position,
    zero-padded to length k."""
    order = sorted(range(len(row)), key=lambda j: (-row[j], j))[:k]
    values = [row[j] for j in order]
    return values + [0.0] * (k - len(values))


def kwindow_oracle(values, n, l_q, l_d):
    """Exhaustive disjoint-window enumeration for the kwindow distillation."""
    rows = len(values)
    cols = len(values[0]) if rows else 0
    num_windows = math.ceil(cols / n)
    scores = []
    for w in range(num_windows):
        total = 0.0
        for j in range(w * n, w * n + n):
            if j < cols:
                total += max(values[i][j] for i in range(rows))
        scores.append(total / n)
    k = l_d // n
    chosen = sorted(range(num_windows), key=lambda w: (-scores[w], w))[:k]
    chosen.sort()
    out = [[0.0] * l_d for _ in range(l_q)]
    col = 0
    for w in chosen:
        for j in range(w * n, w * n + n):
            for i in range(rows):
                out[i][col] = values[i][j] if j < cols else 0.0
            col += 1
    return np.array(out, dtype=np.float64)


def err_oracle(grades, k, g_max):
    """Direct transcription of the cascade formula."""
    total = 0.0
    for r in range(1, min(k, len(grades)) + 1):
        g = max(grades[r - 1], 0)
        rel = (2.0 ** g - 1.0) / 2.0 ** g_max
        stop = 1.0
        for i in range(1, r):
            gi = max(grades[i - 1], 0)
            stop *= 1.0 - (2.0 ** gi - 1.0) / 2.0 ** g_max
        total += rel * stop / r
    return total
