"""Compiled sliding-window cascade scan.

Arithmetic mirrors ``haar.evaluate_window`` operation for operation so the
two paths agree bit for bit; tests hold them to that.  Rectangle corners are
pre-resolved into offsets on the flattened integral table, so a rectangle
sum inside a window costs four loads.  Integral tables arrive as float64:
every partial sum is an integer below 2**53, so the arithmetic stays exact.

Evaluation is breadth first.  The first ``n_row`` stages run over each row
of windows with contiguous loads; the survivors are compacted into a list
and every later stage runs over that list, shrinking it as windows fail.
Only the order in which windows are visited differs from a per-window
early-exit loop, never the arithmetic within one window.
"""

import numpy as np
from numba import njit


@njit(cache=True, error_model="numpy", inline="always")
def _rsum(t, p, a, b, c, d):
    return t[p + a] - t[p + b] - t[p + c] + t[p + d]


@njit(cache=True, error_model="numpy")
def _row_stage(sums, row, nx, offs, weights, n_rects, node_threshold, node_left, node_right,
               leaves, n0, n1, inv_area, sigma, stage_sum, thr_sigma):
    """One stump-only stage over a full row of step-1 windows (nodes n0..n1-1)."""
    stage_sum[:] = 0.0
    for node in range(n0, n1):
        thr = node_threshold[node]
        lv = leaves[-1 - node_left[node]]
        rv = leaves[-1 - node_right[node]]
        o = node * 12
        w0, w1, w2 = weights[node * 3], weights[node * 3 + 1], weights[node * 3 + 2]
        for i in range(nx):
            thr_sigma[i] = thr * sigma[i]
        # slices let these loads vectorize without index wraparound
        sa0 = sums[row + offs[o]:row + offs[o] + nx]
        sb0 = sums[row + offs[o + 1]:row + offs[o + 1] + nx]
        sc0 = sums[row + offs[o + 2]:row + offs[o + 2] + nx]
        sd0 = sums[row + offs[o + 3]:row + offs[o + 3] + nx]
        sa1 = sums[row + offs[o + 4]:row + offs[o + 4] + nx]
        sb1 = sums[row + offs[o + 5]:row + offs[o + 5] + nx]
        sc1 = sums[row + offs[o + 6]:row + offs[o + 6] + nx]
        sd1 = sums[row + offs[o + 7]:row + offs[o + 7] + nx]
        if n_rects[node] == 3:
            sa2 = sums[row + offs[o + 8]:row + offs[o + 8] + nx]
            sb2 = sums[row + offs[o + 9]:row + offs[o + 9] + nx]
            sc2 = sums[row + offs[o + 10]:row + offs[o + 10] + nx]
            sd2 = sums[row + offs[o + 11]:row + offs[o + 11] + nx]
            for i in range(nx):
                acc = 0.0 + w0 * (sa0[i] - sb0[i] - sc0[i] + sd0[i])
                acc += w1 * (sa1[i] - sb1[i] - sc1[i] + sd1[i])
                acc += w2 * (sa2[i] - sb2[i] - sc2[i] + sd2[i])
                stage_sum[i] += lv if acc * inv_area < thr_sigma[i] else rv
        else:
            for i in range(nx):
                acc = 0.0 + w0 * (sa0[i] - sb0[i] - sc0[i] + sd0[i])
                acc += w1 * (sa1[i] - sb1[i] - sc1[i] + sd1[i])
                stage_sum[i] += lv if acc * inv_area < thr_sigma[i] else rv


@njit(cache=True, error_model="numpy")
def scan(sums, sq_sums, stride, width, height, win_w, win_h, step, norm_offs, inv_area,
         offs, weights, n_rects, node_threshold, node_left, node_right, leaves,
         tree_root, stage_start, stage_threshold, stump_stage, n_row):
    n_stages = stage_threshold.shape[0]
    ny = (height - win_h) // step + 1
    nx = (width - win_w) // step + 1
    if nx <= 0 or ny <= 0:
        return np.empty((0, 2), dtype=np.int64)
    a, b, c, d = norm_offs[0], norm_offs[1], norm_offs[2], norm_offs[3]

    # survivors: flat window origin, sigma, grid position
    cand_base = np.empty(nx * ny, dtype=np.int64)
    cand_sigma = np.empty(nx * ny)
    cand_x = np.empty(nx * ny, dtype=np.int64)
    cand_y = np.empty(nx * ny, dtype=np.int64)
    m = 0

    sigma = np.empty(nx)
    thr_sigma = np.empty(nx)
    stage_sum = np.empty(nx)
    alive = np.empty(nx, dtype=np.bool_)
    contiguous = step == 1 and n_row > 0
    for yi in range(ny):
        row = yi * step * stride
        for i in range(nx):
            base = row + i * step
            total = _rsum(sums, base, a, b, c, d)
            sq = _rsum(sq_sums, base, a, b, c, d)
            mean = total * inv_area
            var = sq * inv_area - mean * mean
            sigma[i] = np.sqrt(var) if var > 0 else 1.0
            alive[i] = True
        if contiguous:
            for st in range(n_row):
                _row_stage(sums, row, nx, offs, weights, n_rects, node_threshold, node_left,
                           node_right, leaves, tree_root[stage_start[st]],
                           tree_root[stage_start[st + 1] - 1] + 1, inv_area, sigma,
                           stage_sum, thr_sigma)
                for i in range(nx):
                    alive[i] = alive[i] and stage_sum[i] >= stage_threshold[st]
        for i in range(nx):
            if alive[i]:
                cand_base[m] = row + i * step
                cand_sigma[m] = sigma[i]
                cand_x[m] = i * step
                cand_y[m] = yi * step
                m += 1

    ssum = np.empty(m)
    first = n_row if contiguous else 0
    for st in range(first, n_stages):
        if m == 0:
            break
        ssum[:m] = 0.0
        if stump_stage[st]:
            for t in range(stage_start[st], stage_start[st + 1]):
                node = tree_root[t]
                thr = node_threshold[node]
                lv = leaves[-1 - node_left[node]]
                rv = leaves[-1 - node_right[node]]
                o = node * 12
                w0, w1, w2 = weights[node * 3], weights[node * 3 + 1], weights[node * 3 + 2]
                a0, b0, c0, d0 = offs[o], offs[o + 1], offs[o + 2], offs[o + 3]
                a1, b1, c1, d1 = offs[o + 4], offs[o + 5], offs[o + 6], offs[o + 7]
                if n_rects[node] == 3:
                    a2, b2, c2, d2 = offs[o + 8], offs[o + 9], offs[o + 10], offs[o + 11]
                    for j in range(m):
                        p = cand_base[j]
                        acc = 0.0 + w0 * _rsum(sums, p, a0, b0, c0, d0)
                        acc += w1 * _rsum(sums, p, a1, b1, c1, d1)
                        acc += w2 * _rsum(sums, p, a2, b2, c2, d2)
                        ssum[j] += lv if acc * inv_area < thr * cand_sigma[j] else rv
                else:
                    for j in range(m):
                        p = cand_base[j]
                        acc = 0.0 + w0 * _rsum(sums, p, a0, b0, c0, d0)
                        acc += w1 * _rsum(sums, p, a1, b1, c1, d1)
                        ssum[j] += lv if acc * inv_area < thr * cand_sigma[j] else rv
        else:
            for j in range(m):
                p = cand_base[j]
                s_j = cand_sigma[j]
                total = 0.0
                for t in range(stage_start[st], stage_start[st + 1]):
                    node = tree_root[t]
                    while True:
                        o = node * 12
                        acc = 0.0 + weights[node * 3] * _rsum(sums, p, offs[o], offs[o + 1], offs[o + 2], offs[o + 3])
                        acc += weights[node * 3 + 1] * _rsum(sums, p, offs[o + 4], offs[o + 5], offs[o + 6], offs[o + 7])
                        if n_rects[node] == 3:
                            acc += weights[node * 3 + 2] * _rsum(sums, p, offs[o + 8], offs[o + 9], offs[o + 10], offs[o + 11])
                        if acc * inv_area < node_threshold[node] * s_j:
                            nxt = node_left[node]
                        else:
                            nxt = node_right[node]
                        if nxt < 0:
                            total += leaves[-1 - nxt]
                            break
                        node = nxt
                ssum[j] = total
        k = 0
        for j in range(m):
            if ssum[j] >= stage_threshold[st]:
                cand_base[k] = cand_base[j]
                cand_sigma[k] = cand_sigma[j]
                cand_x[k] = cand_x[j]
                cand_y[k] = cand_y[j]
                k += 1
        m = k

    out = np.empty((m, 2), dtype=np.int64)
    for j in range(m):
        out[j, 0] = cand_x[j]
        out[j, 1] = cand_y[j]
    return out
