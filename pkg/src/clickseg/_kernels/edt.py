"""Exact Euclidean distance transform (Felzenszwalb-Huttenlocher).

Returns per-pixel distance to the nearest background pixel, with pixels
outside the image treated as background: the input is padded with one
background ring, which always contains the nearest out-of-image pixel.
"""

import numpy as np

from ._jit import jit

_INF = 1e20


def _edt_squared_body(fg):
    h, w = fg.shape
    hp = h + 2
    wp = w + 2

    # vertical pass: squared distance to the nearest background row per column
    f = np.empty((hp, wp))
    for x in range(wp):
        d = hp + 1
        for y in range(hp):
            inside = 0
            if 1 <= y <= h and 1 <= x <= w:
                inside = fg[y - 1, x - 1]
            if inside == 0:
                d = 0
            else:
                d += 1
            f[y, x] = d
        d = hp + 1
        for y in range(hp - 1, -1, -1):
            if f[y, x] == 0:
                d = 0
            else:
                d += 1
                if d < f[y, x]:
                    f[y, x] = d
        for y in range(hp):
            f[y, x] = f[y, x] * f[y, x]

    # horizontal pass: lower envelope of parabolas rooted at (x, f[y, x])
    out = np.empty((h, w))
    v = np.empty(wp, np.int64)
    z = np.empty(wp + 1)
    for y in range(1, h + 1):
        k = 0
        v[0] = 0
        z[0] = -_INF
        z[1] = _INF
        for q in range(1, wp):
            fq = f[y, q] + q * q
            while True:
                vk = v[k]
                s = (fq - (f[y, vk] + vk * vk)) / (2.0 * q - 2.0 * vk)
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = _INF
        k = 0
        for q in range(1, w + 1):
            while z[k + 1] < q:
                k += 1
            vk = v[k]
            out[y - 1, q - 1] = (q - vk) * (q - vk) + f[y, vk]
    return out


edt_squared = jit(_edt_squared_body)


def distance_transform(mask):
    """Exact Euclidean distance to nearest background (or out-of-image) pixel."""
    fg = np.ascontiguousarray(np.asarray(mask) != 0).astype(np.uint8)
    if fg.size == 0:
        return np.zeros(fg.shape, np.float64)
    return np.sqrt(edt_squared(fg))
