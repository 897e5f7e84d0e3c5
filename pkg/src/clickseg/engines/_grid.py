"""Pixel-grid graph construction shared by the energy-minimization backends."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=8)
def grid_edges(h, w, include_diagonals=True):
    """Undirected neighbor edges of an h x w grid as flat index arrays.

    Returns (tails, heads, lengths): endpoints in row-major flat indexing
    plus the spatial length of each edge (1 or sqrt(2)).
    """
    idx = np.arange(h * w).reshape(h, w)
    offsets = [(0, 1), (1, 0)]
    if include_diagonals:
        offsets += [(1, 1), (1, -1)]
    tails, heads, lengths = [], [], []
    for dy, dx in offsets:
        ys = slice(0, h - dy)
        xs = slice(0, w - dx) if dx >= 0 else slice(-dx, w)
        nys = slice(dy, h)
        nxs = slice(dx, w) if dx >= 0 else slice(0, w + dx)
        tails.append(idx[ys, xs].ravel())
        heads.append(idx[nys, nxs].ravel())
        lengths.append(np.full(tails[-1].size, np.hypot(dy, dx)))
    return (
        np.concatenate(tails).astype(np.int64),
        np.concatenate(heads).astype(np.int64),
        np.concatenate(lengths),
    )


@lru_cache(maxsize=8)
def grid_arc_structure(h, w, include_diagonals=True):
    """CSR arc skeleton for the grid; capacities are filled per call.

    The structure only depends on the shape, so it is cached: callers gather
    per-edge capacities through ``order`` to obtain the residual array.
    Returns (arc_ptr, arc_head, arc_rev, order).
    """
    tails, heads, _ = grid_edges(h, w, include_diagonals)
    m = tails.shape[0]
    n = h * w
    tail2 = np.concatenate([tails, heads])
    head2 = np.concatenate([heads, tails])
    pair = np.concatenate([np.arange(m, 2 * m), np.arange(0, m)])

    order = np.argsort(tail2, kind="stable")
    inv = np.empty(2 * m, np.int64)
    inv[order] = np.arange(2 * m)

    arc_head = head2[order]
    arc_rev = inv[pair[order]]
    arc_ptr = np.zeros(n + 1, np.int64)
    arc_ptr[1:] = np.cumsum(np.bincount(tail2, minlength=n))
    return arc_ptr, arc_head, arc_rev, order


def edge_color_distances(scaled, tails, heads):
    """Squared per-edge color distance over channels of a scaled image."""
    flat = scaled.reshape(-1, scaled.shape[2])
    diff = flat[tails] - flat[heads]
    return np.einsum("ij,ij->i", diff, diff)


def edge_prior_values(prior, tails, heads):
    """Per-edge prior as the max of the two endpoint prior values."""
    flat = prior.ravel()
    return np.maximum(flat[tails], flat[heads])
