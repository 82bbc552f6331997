"""Quantile binning of numeric features."""
import numpy as np


def _edges_for_column(x: np.ndarray, max_bin: int) -> np.ndarray:
    uniq = np.unique(x)
    if len(uniq) <= 1:
        return np.empty(0, dtype=np.float64)
    if len(uniq) <= max_bin:
        upper = uniq[:-1]
    else:
        xs = np.sort(x)
        n = len(xs)
        ranks = (np.arange(1, max_bin) * n) // max_bin
        upper = np.unique(xs[np.minimum(ranks, n - 1)])
        upper = upper[upper < uniq[-1]]
    # threshold halfway to the next distinct training value
    nxt = uniq[np.searchsorted(uniq, upper, side="right")]
    edges = upper + (nxt - upper) / 2.0
    return np.unique(edges)


def fit_bin_edges(X: np.ndarray, max_bin: int) -> list[np.ndarray]:
    """Per-feature thresholds, at most ``max_bin - 1`` of them, strictly increasing."""
    if max_bin < 2:
        raise ValueError("max_bin must be >= 2")
    return [_edges_for_column(X[:, j], max_bin) for j in range(X.shape[1])]


def apply_bins(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    """Bin index per (feature, row); shape ``(n_features, n_rows)``, uint8.

    Row value ``x`` falls in bin ``b`` iff ``edges[b-1] < x <= edges[b]``;
    values outside the training range clamp to the first or last bin.
    """
    n, m = X.shape
    out = np.empty((m, n), dtype=np.uint8)
    for j in range(m):
        out[j] = np.searchsorted(edges[j], X[:, j], side="left")
    return out
