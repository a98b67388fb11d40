"""Loop-form LAP solver shared by both kernel backends.

Shortest-augmenting-path assignment with potentials (the classic O(n^2 m)
formulation, 1-based sentinel arrays). Small matrices only; the jit backend
compiles exactly this function.
"""

import numpy as np


def lap_min_cost(cost):
    """Assign every row of cost (n, m), n <= m, to a distinct column.

    Returns (total, row_to_col int64[n]). Ties resolve to the smallest column
    index because the column scan is ascending with strict-less updates.
    """
    n, m = cost.shape
    big = 1e18
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, np.int64)
    way = np.zeros(m + 1, np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, big)
        used = np.zeros(m + 1, np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = big
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.full(n, -1, np.int64)
    for j in range(1, m + 1):
        if p[j] != 0:
            row_to_col[p[j] - 1] = j - 1
    total = 0.0
    for r in range(n):
        total += cost[r, row_to_col[r]]
    return total, row_to_col
