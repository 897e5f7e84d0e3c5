"""Seeded graph-cut segmentation.

Energy = sum of color-likelihood unaries + lam * sum of contrast pairwise
terms over 8-neighbor edges, minimized exactly by max-flow/min-cut. Color
models are 16-bin-per-channel histograms over the seed disks; seeds are
hard-constrained through unsaturable terminal capacities.
"""

import numpy as np

from .._kernels import bk_maxflow
from ._grid import edge_color_distances, edge_prior_values, grid_arc_structure, grid_edges

HIST_BINS = 16
SIGMA_FLOOR = 1e-6
BORDER_RING = 2


def _histogram_model(scaled, sample_mask):
    """Per-channel histogram probabilities with add-one smoothing."""
    h, w, c = scaled.shape
    samples = scaled[sample_mask]
    bins = np.minimum((samples * HIST_BINS).astype(np.int64), HIST_BINS - 1)
    probs = np.empty((c, HIST_BINS))
    n = samples.shape[0]
    for ch in range(c):
        counts = np.bincount(bins[:, ch], minlength=HIST_BINS)
        probs[ch] = (counts + 1.0) / (n + HIST_BINS)
    return probs


def _log_likelihood(scaled, probs):
    """Per-pixel log probability under the channel-independent model."""
    h, w, c = scaled.shape
    bins = np.minimum((scaled * HIST_BINS).astype(np.int64), HIST_BINS - 1)
    ll = np.zeros((h, w))
    for ch in range(c):
        ll += np.log(probs[ch][bins[:, :, ch]])
    return ll


def border_ring_mask(height, width, thickness=BORDER_RING):
    ring = np.ones((height, width), bool)
    t = min(thickness, (height + 1) // 2, (width + 1) // 2)
    if height > 2 * t and width > 2 * t:
        ring[t:-t, t:-t] = False
    return ring


def build_instance(scaled, pos_seeds, neg_seeds, prior, lam, edge_prior_weight):
    """Assemble the min-cut instance; returns (tails, heads, caps, tcap).

    tcap uses the netted convention: positive values are source-side
    capacity, negative are sink-side. Seed pixels get unsaturable terminal
    capacity so the cut always honors them.
    """
    h, w, _ = scaled.shape
    tails, heads, lengths = grid_edges(h, w, include_diagonals=True)

    dist2 = edge_color_distances(scaled, tails, heads)
    sigma2 = max(float(dist2.mean()) if dist2.size else 0.0, SIGMA_FLOOR)
    weights = np.exp(-dist2 / (2.0 * sigma2)) / lengths
    if edge_prior_weight > 0.0:
        weights = weights * (1.0 - edge_prior_weight * edge_prior_values(prior, tails, heads))
    caps = lam * weights

    fg_model = _histogram_model(scaled, pos_seeds)
    bg_sample = neg_seeds if neg_seeds.any() else border_ring_mask(h, w)
    bg_model = _histogram_model(scaled, bg_sample)

    d_fg = -_log_likelihood(scaled, fg_model)  # cost of labeling foreground
    d_bg = -_log_likelihood(scaled, bg_model)
    tcap = (d_bg - d_fg).ravel()

    big = float(np.abs(tcap).sum() + caps.sum()) + 1.0
    tcap[pos_seeds.ravel()] = big
    tcap[neg_seeds.ravel()] = -big
    return tails, heads, caps, tcap


def graphcut_segment(scaled, pos_seeds, neg_seeds, prior, params):
    """Minimum-cut labeling; returns (mask, confidence, cut_value)."""
    h, w, _ = scaled.shape
    tails, heads, caps, tcap = build_instance(
        scaled, pos_seeds, neg_seeds, prior, params.lam, params.edge_prior_weight
    )
    arc_ptr, arc_head, arc_rev, order = grid_arc_structure(h, w, True)
    rescap = np.concatenate([caps, caps])[order]
    flow, side = bk_maxflow(arc_ptr, arc_head, arc_rev, rescap, tcap.copy())
    mask = side.astype(bool).reshape(h, w)
    confidence = mask.astype(np.float64)
    return mask, confidence, float(flow)
