"""Geodesic seeded segmentation.

Per-pixel geodesic distances from the positive and negative seed sets are
computed with Dijkstra on the 8-neighbor grid; confidence is the relative
closeness to the positive set.
"""

import numpy as np

from .._kernels import geodesic_distance


def geodesic_segment(scaled, pos_seeds, neg_seeds, params):
    """Returns (mask, confidence, d_pos, d_neg)."""
    gamma = params.geodesic_gamma
    img = np.ascontiguousarray(scaled)
    d_pos = geodesic_distance(img, pos_seeds.astype(np.uint8), gamma)
    if neg_seeds.any():
        d_neg = geodesic_distance(img, neg_seeds.astype(np.uint8), gamma)
        confidence = np.where(
            np.isfinite(d_pos),
            d_neg / np.maximum(d_pos + d_neg, 1e-300),
            0.0,
        )
    else:
        d_neg = np.full(d_pos.shape, np.inf)
        confidence = np.where(np.isfinite(d_pos), 1.0, 0.0)
    mask = confidence >= 0.5
    return mask, confidence, d_pos, d_neg
