"""Pure-Python (numpy) fallback for the windowed tensor-selection DP.

All arrays are window-local: index 0 is the first tensor of the window and
index ``n - 1`` the last one (the tensor feeding the early exit).  Returns the
selected set as an integer bitmask over window-local indices.
"""

import numpy as np


def window_select(w_units, g_units, importance, capacity):
    n = len(w_units)
    if capacity < 0 or n == 0:
        return 0
    capacity = int(capacity)
    mask_dtype = np.uint64 if n <= 64 else object

    dp_v = np.zeros(capacity + 1, dtype=np.float64)
    dp_c = np.zeros(capacity + 1, dtype=np.int64)
    dp_m = np.zeros(capacity + 1, dtype=mask_dtype)
    if mask_dtype is object:
        dp_m[:] = 0

    best = (0.0, 0, 0)
    grad = 0
    for e in range(n - 1, -1, -1):
        if capacity - grad < 0:
            break  # the gradient chain alone no longer fits
        bit = np.uint64(1) << np.uint64(e) if mask_dtype is not object else 1 << e
        w = int(w_units[e])
        imp = float(importance[e])
        rem = capacity - grad - w
        if rem >= 0:
            cand = (float(dp_v[rem] + imp), int(dp_c[rem]) + 1, int(dp_m[rem] | bit))
            if _better(cand, best):
                best = cand
        if w <= capacity:
            hi = capacity + 1 - w
            cand_v = dp_v[:hi] + imp
            cand_c = dp_c[:hi] + 1
            cand_m = dp_m[:hi] | bit
            cur_v, cur_c, cur_m = dp_v[w:], dp_c[w:], dp_m[w:]
            take = (cand_v > cur_v) | (
                (cand_v == cur_v)
                & ((cand_c < cur_c) | ((cand_c == cur_c) & (cand_m > cur_m)))
            )
            dp_v[w:] = np.where(take, cand_v, cur_v)
            dp_c[w:] = np.where(take, cand_c, cur_c)
            dp_m[w:] = np.where(take, cand_m, cur_m)
        grad += int(g_units[e])
    return int(best[2])


def _better(a, b):
    if a[0] != b[0]:
        return a[0] > b[0]
    if a[1] != b[1]:
        return a[1] < b[1]
    return a[2] > b[2]
