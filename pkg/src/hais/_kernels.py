"""Compiled inner loops for radius clustering."""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True, nogil=True)
def radius_components(pos, cell_coords, r2, reach, merge_cells):
    """Label points by connected component of the ``|p_i - p_j|^2 < r2`` graph.

    ``cell_coords`` are non-negative integer cells; pairs are searched in
    cells up to ``reach`` away per axis.  With ``merge_cells`` the caller
    guarantees every two points of one cell are in range; each cell then
    starts as one component and a cell pair needs a single witness.
    Roots are always the smaller index, so the returned label of a point is
    the smallest index in its component.
    """
    n = pos.shape[0]
    parent = np.arange(n)
    if n == 0:
        return parent
    dim_y = cell_coords[:, 1].max() + 2 * reach + 1
    dim_z = cell_coords[:, 2].max() + 2 * reach + 1
    keys = ((cell_coords[:, 0] + reach) * dim_y + cell_coords[:, 1] + reach) * dim_z + (
        cell_coords[:, 2] + reach
    )
    order = np.argsort(keys, kind="mergesort")
    skeys = keys[order]

    # unique cells and their [start, end) ranges within ``order``
    n_cells = 1
    for k in range(1, n):
        if skeys[k] != skeys[k - 1]:
            n_cells += 1
    ukeys = np.empty(n_cells, dtype=np.int64)
    starts = np.empty(n_cells + 1, dtype=np.int64)
    ukeys[0] = skeys[0]
    starts[0] = 0
    c = 0
    for k in range(1, n):
        if skeys[k] != skeys[k - 1]:
            c += 1
            ukeys[c] = skeys[k]
            starts[c] = k
    starts[n_cells] = n

    if merge_cells:
        # cells are small enough that any two members are within range
        for ci in range(n_cells):
            first = order[starts[ci]]
            for a in range(starts[ci] + 1, starts[ci + 1]):
                parent[order[a]] = first

    for ci in range(n_cells):
        key = ukeys[ci]
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                for dz in range(-reach, reach + 1):
                    nkey = key + (dx * dim_y + dy) * dim_z + dz
                    # each unordered cell pair is visited once
                    if nkey < key:
                        continue
                    cj = np.searchsorted(ukeys, nkey)
                    if cj >= n_cells or ukeys[cj] != nkey:
                        continue
                    same = cj == ci
                    if merge_cells:
                        if same:
                            continue
                        ri = _find(parent, order[starts[ci]])
                        rj = _find(parent, order[starts[cj]])
                        if ri == rj:
                            continue
                        hit = False
                        for a in range(starts[ci], starts[ci + 1]):
                            i = order[a]
                            for b in range(starts[cj], starts[cj + 1]):
                                j = order[b]
                                ex = pos[i, 0] - pos[j, 0]
                                ey = pos[i, 1] - pos[j, 1]
                                ez = pos[i, 2] - pos[j, 2]
                                if ex * ex + ey * ey + ez * ez < r2:
                                    hit = True
                                    break
                            if hit:
                                break
                        if hit:
                            if ri < rj:
                                parent[rj] = ri
                            else:
                                parent[ri] = rj
                        continue
                    for a in range(starts[ci], starts[ci + 1]):
                        i = order[a]
                        b0 = a + 1 if same else starts[cj]
                        for b in range(b0, starts[cj + 1]):
                            j = order[b]
                            ri = _find(parent, i)
                            rj = _find(parent, j)
                            if ri == rj:
                                continue
                            ex = pos[i, 0] - pos[j, 0]
                            ey = pos[i, 1] - pos[j, 1]
                            ez = pos[i, 2] - pos[j, 2]
                            if ex * ex + ey * ey + ez * ez < r2:
                                if ri < rj:
                                    parent[rj] = ri
                                else:
                                    parent[ri] = rj
    for i in range(n):
        parent[i] = _find(parent, i)
    return parent
