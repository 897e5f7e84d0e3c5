"""Click rasterization: each click paints a hard-constraint seed disk."""

import numpy as np


def rasterize_clicks(clicks, width, height, seed_radius):
    """Paint filled disks per click; later ordinals win overlaps.

    Returns (positive, negative) bool masks. A disk covers the pixels whose
    squared center distance to the click is <= seed_radius**2, clipped to
    the image.
    """
    pos = np.zeros((height, width), bool)
    neg = np.zeros((height, width), bool)
    r = int(seed_radius)
    span = np.arange(-r, r + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    disk = (dy * dy + dx * dx) <= r * r

    for click in sorted(clicks, key=lambda c: c.ordinal):
        if not (0 <= click.x < width and 0 <= click.y < height):
            raise ValueError(f"click ({click.x}, {click.y}) outside {width}x{height}")
        y0, y1 = click.y - r, click.y + r + 1
        x0, x1 = click.x - r, click.x + r + 1
        cy0, cx0 = max(0, y0), max(0, x0)
        cy1, cx1 = min(height, y1), min(width, x1)
        sub = disk[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]
        mine, other = (pos, neg) if click.is_positive else (neg, pos)
        view_m = mine[cy0:cy1, cx0:cx1]
        view_o = other[cy0:cy1, cx0:cx1]
        view_m[sub] = True
        view_o[sub] = False
    return pos, neg
