"""Mask boundary extraction for the interaction feedback loop."""

import numpy as np


def edge_from_mask(mask):
    """1.0 on foreground pixels with a 4-neighbor background or image edge."""
    fg = np.asarray(mask) != 0
    padded = np.zeros((fg.shape[0] + 2, fg.shape[1] + 2), bool)
    padded[1:-1, 1:-1] = fg
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return (fg & ~interior).astype(np.float64)
