"""Compiled kernels for nearest-neighbor search.

Exact search is a bounded-heap linear scan. Approximate search is a
hierarchical navigable small-world graph built by sequential insertion.
All comparisons order by (squared distance, index), which gives ascending
index tie-breaking everywhere.

Per-query bookkeeping (visited set, heaps) is sized by the work done, not by
``n``, so query cost stays sub-linear in the number of stored points.
"""

import numba
import numpy as np

_EMPTY = -1


# ---------------------------------------------------------------- primitives


@numba.njit(inline="always", cache=True)
def _less(da, ia, db, ib):
    return da < db or (da == db and ia < ib)


@numba.njit(inline="always", cache=True)
def _sqdist(X, i, q):
    acc = 0.0
    for t in range(q.shape[0]):
        diff = X[i, t] - q[t]
        acc += diff * diff
    return acc


@numba.njit(inline="always", cache=True)
def _sqdist_rows(X, i, j):
    acc = 0.0
    for t in range(X.shape[1]):
        diff = X[i, t] - X[j, t]
        acc += diff * diff
    return acc


@numba.njit(inline="always", cache=True)
def _hash(key, mask):
    h = np.uint32(key) * np.uint32(2654435761)
    return np.int64(h) & mask


@numba.njit(cache=True)
def _set_new(capacity):
    return np.full(capacity, _EMPTY, dtype=np.int32)


@numba.njit(cache=True)
def _set_grow(table):
    bigger = np.full(2 * table.shape[0], _EMPTY, dtype=np.int32)
    mask = bigger.shape[0] - 1
    for old in table:
        if old != _EMPTY:
            h = _hash(old, mask)
            while bigger[h] != _EMPTY:
                h = (h + 1) & mask
            bigger[h] = old
    return bigger


@numba.njit(inline="always", cache=True)
def _set_add(table, key):
    """Insert ``key`` in place; False if already present. Caller keeps load < 1/2."""
    mask = table.shape[0] - 1
    h = _hash(key, mask)
    while True:
        cur = table[h]
        if cur == _EMPTY:
            table[h] = key
            return True
        if cur == key:
            return False
        h = (h + 1) & mask


# Binary heaps over parallel (dist, id) arrays, updated in place. The min-heap
# pops the closest candidate; the max-heap keeps the current best ``ef`` with
# the worst on top. Callers guarantee capacity.


@numba.njit(cache=True)
def _grow(hd, hi):
    nd = np.empty(2 * hd.shape[0], dtype=hd.dtype)
    ni = np.empty(2 * hi.shape[0], dtype=hi.dtype)
    nd[: hd.shape[0]] = hd
    ni[: hi.shape[0]] = hi
    return nd, ni


@numba.njit(inline="always", cache=True)
def _push(hd, hi, size, d, i, is_max):
    pos = size
    hd[pos] = d
    hi[pos] = i
    while pos > 0:
        parent = (pos - 1) >> 1
        if is_max:
            swap = _less(hd[parent], hi[parent], hd[pos], hi[pos])
        else:
            swap = _less(hd[pos], hi[pos], hd[parent], hi[parent])
        if not swap:
            break
        hd[parent], hd[pos] = hd[pos], hd[parent]
        hi[parent], hi[pos] = hi[pos], hi[parent]
        pos = parent
    return size + 1


@numba.njit(inline="always", cache=True)
def _pop(hd, hi, size, is_max):
    size -= 1
    hd[0] = hd[size]
    hi[0] = hi[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        if left >= size:
            break
        best = left
        right = left + 1
        if right < size:
            if is_max:
                if _less(hd[left], hi[left], hd[right], hi[right]):
                    best = right
            elif _less(hd[right], hi[right], hd[left], hi[left]):
                best = right
        if is_max:
            swap = _less(hd[pos], hi[pos], hd[best], hi[best])
        else:
            swap = _less(hd[best], hi[best], hd[pos], hi[pos])
        if not swap:
            break
        hd[best], hd[pos] = hd[pos], hd[best]
        hi[best], hi[pos] = hi[pos], hi[best]
        pos = best
    return size


@numba.njit(cache=True)
def _sort_pairs(d, ids):
    """Sort parallel arrays by (d, id) in place (insertion sort, small inputs)."""
    for a in range(1, d.shape[0]):
        dv = d[a]
        iv = ids[a]
        b = a - 1
        while b >= 0 and _less(dv, iv, d[b], ids[b]):
            d[b + 1] = d[b]
            ids[b + 1] = ids[b]
            b -= 1
        d[b + 1] = dv
        ids[b + 1] = iv


# ---------------------------------------------------------------- exact scan


@numba.njit(cache=True)
def _scan_one(X, q, k, exclude, out_i, out_d):
    """k nearest rows of X to q by linear scan; returns distance evaluations."""
    hd = np.empty(k, dtype=np.float64)
    hi = np.empty(k, dtype=np.int64)
    size = 0
    for i in range(X.shape[0]):
        if i == exclude:
            continue
        d = _sqdist(X, i, q)
        if size < k:
            size = _push(hd, hi, size, d, i, True)
        elif _less(d, i, hd[0], hi[0]):
            size = _pop(hd, hi, size, True)
            size = _push(hd, hi, size, d, i, True)
    for s in range(size - 1, -1, -1):
        out_d[s] = hd[0]
        out_i[s] = hi[0]
        size = _pop(hd, hi, size, True)
    return X.shape[0]


@numba.njit(cache=True)
def scan_knn(X, Q, k, exclude):
    m = Q.shape[0]
    out_i = np.empty((m, k), dtype=np.int64)
    out_d = np.empty((m, k), dtype=np.float64)
    evals = 0
    for r in range(m):
        evals += _scan_one(X, Q[r], k, exclude[r], out_i[r], out_d[r])
    return out_i, np.sqrt(out_d), evals


# ---------------------------------------------------------------- graph


@numba.njit(cache=True)
def _search_layer(X, q, entry_ids, entry_d, ef, layer, links0, counts0,
                  slot_base, upper, upper_counts, exclude):
    """Beam search on one layer. Returns (ids, sqdists) sorted, and evals."""
    visited = _set_new(max(256, 1 << int(np.ceil(np.log2(32 * ef)))))
    nvis = 0
    cd = np.empty(max(4 * ef, 64), dtype=np.float64)
    ci = np.empty(cd.shape[0], dtype=np.int64)
    csize = 0
    rd = np.empty(ef + 1, dtype=np.float64)
    ri = np.empty(ef + 1, dtype=np.int64)
    rsize = 0
    evals = 0
    for e in range(entry_ids.shape[0]):
        node = entry_ids[e]
        if 2 * (nvis + 1) > visited.shape[0]:
            visited = _set_grow(visited)
        _set_add(visited, node)
        nvis += 1
        if csize == cd.shape[0]:
            cd, ci = _grow(cd, ci)
        csize = _push(cd, ci, csize, entry_d[e], node, False)
        if node != exclude:
            rsize = _push(rd, ri, rsize, entry_d[e], node, True)
            if rsize > ef:
                rsize = _pop(rd, ri, rsize, True)
    while csize > 0:
        d_c = cd[0]
        i_c = ci[0]
        if rsize >= ef and _less(rd[0], ri[0], d_c, i_c):
            break
        csize = _pop(cd, ci, csize, False)
        if layer == 0:
            nbrs = links0[i_c]
            cnt = counts0[i_c]
        else:
            s = slot_base[i_c] + layer - 1
            nbrs = upper[s]
            cnt = upper_counts[s]
        for t in range(cnt):
            nb = nbrs[t]
            if 2 * (nvis + 1) > visited.shape[0]:
                visited = _set_grow(visited)
            if not _set_add(visited, nb):
                continue
            nvis += 1
            d = _sqdist(X, nb, q)
            evals += 1
            if rsize < ef or _less(d, nb, rd[0], ri[0]):
                if csize == cd.shape[0]:
                    cd, ci = _grow(cd, ci)
                csize = _push(cd, ci, csize, d, nb, False)
                if nb != exclude:
                    rsize = _push(rd, ri, rsize, d, nb, True)
                    if rsize > ef:
                        rsize = _pop(rd, ri, rsize, True)
    out_d = rd[:rsize].copy()
    out_i = ri[:rsize].copy()
    _sort_pairs(out_d, out_i)
    return out_i, out_d, evals


@numba.njit(cache=True)
def _select_heuristic(X, cand_i, cand_d, m):
    """Diversity-pruned neighbor choice from candidates sorted by distance."""
    chosen = np.empty(m, dtype=np.int64)
    nchosen = 0
    for a in range(cand_i.shape[0]):
        if nchosen >= m:
            break
        c = cand_i[a]
        good = True
        for b in range(nchosen):
            if _sqdist_rows(X, c, chosen[b]) < cand_d[a]:
                good = False
                break
        if good:
            chosen[nchosen] = c
            nchosen += 1
    return chosen[:nchosen]


@numba.njit(cache=True)
def _connect(X, node, new, layer, mmax, links0, counts0, slot_base, upper,
             upper_counts):
    """Add ``new`` to ``node``'s links on ``layer``, pruning on overflow."""
    if layer == 0:
        row = links0[node]
        cnt = counts0[node]
    else:
        s = slot_base[node] + layer - 1
        row = upper[s]
        cnt = upper_counts[s]
    if cnt < mmax:
        row[cnt] = new
        cnt += 1
    else:
        cand_i = np.empty(cnt + 1, dtype=np.int64)
        cand_d = np.empty(cnt + 1, dtype=np.float64)
        for t in range(cnt):
            cand_i[t] = row[t]
            cand_d[t] = _sqdist_rows(X, node, row[t])
        cand_i[cnt] = new
        cand_d[cnt] = _sqdist_rows(X, node, new)
        _sort_pairs(cand_d, cand_i)
        kept = _select_heuristic(X, cand_i, cand_d, mmax)
        cnt = kept.shape[0]
        for t in range(cnt):
            row[t] = kept[t]
    if layer == 0:
        counts0[node] = cnt
    else:
        upper_counts[slot_base[node] + layer - 1] = cnt


@numba.njit(cache=True)
def build_graph(X, levels, M, ef_construction):
    n = X.shape[0]
    M0 = 2 * M
    links0 = np.full((n, M0), -1, dtype=np.int32)
    counts0 = np.zeros(n, dtype=np.int32)
    slot_base = np.zeros(n, dtype=np.int64)
    total = 0
    for i in range(n):
        slot_base[i] = total
        total += levels[i]
    upper = np.full((max(total, 1), M), -1, dtype=np.int32)
    upper_counts = np.zeros(max(total, 1), dtype=np.int32)

    entry = 0
    max_level = levels[0]
    one = np.empty(1, dtype=np.int64)
    one_d = np.empty(1, dtype=np.float64)
    for i in range(1, n):
        q = X[i]
        lvl = levels[i]
        ep = entry
        ep_d = _sqdist(X, ep, q)
        for layer in range(max_level, lvl, -1):
            one[0] = ep
            one_d[0] = ep_d
            ids, ds, _ = _search_layer(X, q, one, one_d, 1, layer, links0, counts0,
                                       slot_base, upper, upper_counts, -1)
            ep = ids[0]
            ep_d = ds[0]
        ent_i = np.empty(1, dtype=np.int64)
        ent_d = np.empty(1, dtype=np.float64)
        ent_i[0] = ep
        ent_d[0] = ep_d
        for layer in range(min(lvl, max_level), -1, -1):
            ids, ds, _ = _search_layer(X, q, ent_i, ent_d, ef_construction, layer,
                                       links0, counts0, slot_base, upper,
                                       upper_counts, -1)
            chosen = _select_heuristic(X, ids, ds, M)
            mmax = M0 if layer == 0 else M
            for t in range(chosen.shape[0]):
                _connect(X, i, chosen[t], layer, mmax, links0, counts0, slot_base,
                         upper, upper_counts)
                _connect(X, chosen[t], i, layer, mmax, links0, counts0, slot_base,
                         upper, upper_counts)
            ent_i = ids
            ent_d = ds
        if lvl > max_level:
            max_level = lvl
            entry = i
    return links0, counts0, slot_base, upper, upper_counts, entry, max_level


@numba.njit(cache=True)
def _graph_query_one(X, q, k, ef, exclude, entry, max_level, links0, counts0,
                     slot_base, upper, upper_counts, out_i, out_d):
    one = np.empty(1, dtype=np.int64)
    one_d = np.empty(1, dtype=np.float64)
    ep = entry
    ep_d = _sqdist(X, ep, q)
    evals = 1
    for layer in range(max_level, 0, -1):
        one[0] = ep
        one_d[0] = ep_d
        ids, ds, ev = _search_layer(X, q, one, one_d, 1, layer, links0, counts0,
                                    slot_base, upper, upper_counts, -1)
        evals += ev
        ep = ids[0]
        ep_d = ds[0]
    one[0] = ep
    one_d[0] = ep_d
    ids, ds, ev = _search_layer(X, q, one, one_d, max(ef, k), 0, links0, counts0,
                                slot_base, upper, upper_counts, exclude)
    evals += ev
    got = min(k, ids.shape[0])
    for t in range(got):
        out_i[t] = ids[t]
        out_d[t] = ds[t]
    for t in range(got, k):
        out_i[t] = -1
        out_d[t] = np.inf
    return evals


@numba.njit(cache=True)
def graph_knn(Xg, order, inv, Q, k, ef, exclude, entry, max_level, links0, counts0,
              slot_base, upper, upper_counts):
    """Batch k-NN on a graph built over ``Xg = X[order]``; returns original ids."""
    m = Q.shape[0]
    out_i = np.empty((m, k), dtype=np.int64)
    out_d = np.empty((m, k), dtype=np.float64)
    evals = 0
    for r in range(m):
        ex = inv[exclude[r]] if exclude[r] >= 0 else -1
        evals += _graph_query_one(Xg, Q[r], k, ef, ex, entry, max_level, links0,
                                  counts0, slot_base, upper, upper_counts,
                                  out_i[r], out_d[r])
        for t in range(k):
            if out_i[r, t] >= 0:
                out_i[r, t] = order[out_i[r, t]]
        _sort_pairs(out_d[r], out_i[r])
    return out_i, np.sqrt(out_d), evals


@numba.njit(cache=True)
def graph_nearest(Xg, order, q, ef, entry, max_level, links0, counts0, slot_base,
                  upper, upper_counts):
    out_i = np.empty(ef, dtype=np.int64)
    out_d = np.empty(ef, dtype=np.float64)
    _graph_query_one(Xg, q, ef, ef, -1, entry, max_level, links0, counts0, slot_base,
                     upper, upper_counts, out_i, out_d)
    # resolve exact-distance ties among the beam by original index
    best = order[out_i[0]]
    for t in range(1, ef):
        if out_i[t] < 0 or out_d[t] != out_d[0]:
            break
        if order[out_i[t]] < best:
            best = order[out_i[t]]
    return best


@numba.njit(cache=True)
def graph_nearest_batch(Xg, order, Q, ef, entry, max_level, links0, counts0,
                        slot_base, upper, upper_counts):
    out = np.empty(Q.shape[0], dtype=np.int64)
    for r in range(Q.shape[0]):
        out[r] = graph_nearest(Xg, order, Q[r], ef, entry, max_level, links0,
                               counts0, slot_base, upper, upper_counts)
    return out


@numba.njit(cache=True)
def scan_nearest_batch(X, Q):
    out = np.empty(Q.shape[0], dtype=np.int64)
    for r in range(Q.shape[0]):
        out[r] = scan_nearest(X, Q[r])
    return out


@numba.njit(cache=True)
def scan_nearest(X, q):
    best = 0
    best_d = _sqdist(X, 0, q)
    for i in range(1, X.shape[0]):
        d = _sqdist(X, i, q)
        if d < best_d:
            best = i
            best_d = d
    return best
