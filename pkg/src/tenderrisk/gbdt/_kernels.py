"""Numba kernels for tree growth and prediction.

Histograms have shape ``(n_features, n_bins, 3)`` holding the sums of
gradients, hessians and sample counts per bin. Each feature's most frequent
bin is derived from the node totals instead of accumulated, which matters
for the many near-constant indicator columns. Histogram accumulation is
parallel over features; each feature is reduced sequentially in row order, so
results do not depend on the number of threads.
"""
import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def _build_histogram(binned, dominant, n_bins_per_feature, partition, start, stop, grad, hess, out):
    m = binned.shape[0]
    n = stop - start
    g = np.empty(n)
    h = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    tg = 0.0
    th = 0.0
    for i in range(n):
        r = partition[start + i]
        idx[i] = r
        g[i] = grad[r]
        h[i] = hess[r]
        tg += g[i]
        th += h[i]
    for f in prange(m):
        col = binned[f]
        hf = out[f]
        nb = n_bins_per_feature[f]
        hf[:nb, :] = 0.0
        d = dominant[f]
        # the most frequent bin is filled in from the node totals
        for i in range(n):
            b = col[idx[i]]
            if b != d:
                hf[b, 0] += g[i]
                hf[b, 1] += h[i]
                hf[b, 2] += 1.0
        rg = tg
        rh = th
        rc = float(n)
        for b in range(nb):
            rg -= hf[b, 0]
            rh -= hf[b, 1]
            rc -= hf[b, 2]
        hf[d, 0] = rg
        hf[d, 1] = rh
        hf[d, 2] = rc


@njit(cache=True)
def _best_split(hist, n_bins_per_feature, sum_g, sum_h, count, l2, min_data):
    """Best (feature, bin) split of one node.

    Returns ``(gain, feature, bin)``; feature is -1 when no split satisfies
    the leaf-size constraint. Ties keep the lowest feature, then lowest bin.
    """
    parent = sum_g * sum_g / (sum_h + l2)
    best_gain = 0.0
    best_f = -1
    best_b = -1
    for f in range(hist.shape[0]):
        lg = 0.0
        lh = 0.0
        lc = 0.0
        for b in range(n_bins_per_feature[f] - 1):
            if hist[f, b, 2] == 0.0:
                # empty bin: same partition as the previous threshold
                continue
            lg += hist[f, b, 0]
            lh += hist[f, b, 1]
            lc += hist[f, b, 2]
            if lc < min_data:
                continue
            if count - lc < min_data:
                break
            rg = sum_g - lg
            rh = sum_h - lh
            gain = lg * lg / (lh + l2) + rg * rg / (rh + l2) - parent
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
    return best_gain, best_f, best_b


@njit(cache=True)
def _subtract(parent, child, n_bins_per_feature):
    for f in range(parent.shape[0]):
        for b in range(n_bins_per_feature[f]):
            parent[f, b, 0] -= child[f, b, 0]
            parent[f, b, 1] -= child[f, b, 1]
            parent[f, b, 2] -= child[f, b, 2]


@njit(cache=True)
def _sum_segment(values, partition, start, stop):
    s = 0.0
    for i in range(start, stop):
        s += values[partition[i]]
    return s


@njit(cache=True)
def grow_tree(binned, dominant, n_bins_per_feature, grad, hess, num_leaves, min_data, l2,
              learning_rate, min_gain, partition, hist_pool, scores, k):
    """Grow one leaf-wise tree and add its leaf values to ``scores[:, k]``.

    ``partition`` (length n) and ``hist_pool`` (num_leaves slots) are caller
    workspaces. Returns the node arrays
    ``(feature, bin, left, right, value, count)``.
    """
    n = partition.shape[0]
    max_nodes = 2 * num_leaves - 1
    feature = np.full(max_nodes, -1, dtype=np.int32)
    tbin = np.full(max_nodes, -1, dtype=np.int32)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    value = np.zeros(max_nodes)
    count = np.zeros(max_nodes, dtype=np.int64)
    seg_start = np.zeros(max_nodes, dtype=np.int64)
    seg_stop = np.zeros(max_nodes, dtype=np.int64)
    slot = np.full(max_nodes, -1, dtype=np.int64)
    sg = np.zeros(max_nodes)
    sh = np.zeros(max_nodes)
    is_leaf = np.zeros(max_nodes, dtype=np.bool_)
    gain = np.zeros(max_nodes)
    split_f = np.full(max_nodes, -1, dtype=np.int64)
    split_b = np.full(max_nodes, -1, dtype=np.int64)
    free_slots = np.arange(num_leaves - 1, -1, -1)
    n_free = num_leaves
    scratch = np.empty(n, dtype=partition.dtype)

    for i in range(n):
        partition[i] = i
    n_free -= 1
    slot[0] = free_slots[n_free]
    _build_histogram(binned, dominant, n_bins_per_feature, partition, 0, n, grad, hess, hist_pool[slot[0]])
    seg_start[0] = 0
    seg_stop[0] = n
    sg[0] = _sum_segment(grad, partition, 0, n)
    sh[0] = _sum_segment(hess, partition, 0, n)
    count[0] = n
    is_leaf[0] = True
    g0, f0, b0 = _best_split(hist_pool[slot[0]], n_bins_per_feature, sg[0], sh[0], float(n), l2, min_data)
    gain[0] = g0
    split_f[0] = f0
    split_b[0] = b0
    n_nodes = 1
    n_leaves = 1

    while n_leaves < num_leaves:
        best = -1
        best_gain = min_gain
        for node in range(n_nodes):
            if is_leaf[node] and split_f[node] >= 0 and gain[node] > best_gain:
                best = node
                best_gain = gain[node]
        if best < 0:
            break
        f = split_f[best]
        b = split_b[best]
        s = seg_start[best]
        e = seg_stop[best]
        col = binned[f]
        nl = 0
        nr = 0
        for i in range(s, e):
            r = partition[i]
            if col[r] <= b:
                partition[s + nl] = r
                nl += 1
            else:
                scratch[nr] = r
                nr += 1
        for i in range(nr):
            partition[s + nl + i] = scratch[i]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[best] = f
        tbin[best] = b
        left[best] = lid
        right[best] = rid
        is_leaf[best] = False
        seg_start[lid] = s
        seg_stop[lid] = s + nl
        seg_start[rid] = s + nl
        seg_stop[rid] = e
        count[lid] = nl
        count[rid] = nr

        parent_slot = slot[best]
        n_free -= 1
        new_slot = free_slots[n_free]
        if nl <= nr:
            small, large = lid, rid
        else:
            small, large = rid, lid
        slot[small] = new_slot
        slot[large] = parent_slot
        _build_histogram(binned, dominant, n_bins_per_feature, partition, seg_start[small], seg_stop[small], grad, hess, hist_pool[new_slot])
        _subtract(hist_pool[parent_slot], hist_pool[new_slot], n_bins_per_feature)

        for child in (lid, rid):
            sg[child] = _sum_segment(grad, partition, seg_start[child], seg_stop[child])
            sh[child] = _sum_segment(hess, partition, seg_start[child], seg_stop[child])
            is_leaf[child] = True
            cg, cf, cb = _best_split(hist_pool[slot[child]], n_bins_per_feature, sg[child], sh[child],
                                     float(count[child]), l2, min_data)
            gain[child] = cg
            split_f[child] = cf
            split_b[child] = cb
        n_leaves += 1

    for node in range(n_nodes):
        if is_leaf[node]:
            v = -(sg[node] / (sh[node] + l2)) * learning_rate
            value[node] = v
            for i in range(seg_start[node], seg_stop[node]):
                scores[partition[i], k] += v

    return (feature[:n_nodes], tbin[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], count[:n_nodes])


@njit(cache=True)
def predict_raw(X, base, feature, threshold, left, right, value, tree_start, tree_class, n_classes):
    """Accumulate raw scores over a flat array of trees."""
    n = X.shape[0]
    out = np.empty((n, n_classes))
    for i in range(n):
        for k in range(n_classes):
            out[i, k] = base[k]
        for t in range(tree_start.shape[0] - 1):
            offset = tree_start[t]
            node = offset
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = offset + left[node]
                else:
                    node = offset + right[node]
            out[i, tree_class[t]] += value[node]
    return out
