"""Connected-component labeling with deterministic id order.

Component ids are assigned in raster-scan order of each component's first
pixel, so downstream tie-breaking on "smaller component id" is stable.
"""

import numpy as np

from ._jit import jit


def _label_components_body(fg, connectivity):
    h, w = fg.shape
    labels = np.zeros((h, w), np.int32)
    stack = np.empty(h * w, np.int64)
    current = 0
    for sy in range(h):
        for sx in range(w):
            if fg[sy, sx] == 0 or labels[sy, sx] != 0:
                continue
            current += 1
            labels[sy, sx] = current
            stack[0] = sy * w + sx
            top = 1
            while top > 0:
                top -= 1
                p = stack[top]
                py = p // w
                px = p % w
                for dy in range(-1, 2):
                    ny = py + dy
                    if ny < 0 or ny >= h:
                        continue
                    for dx in range(-1, 2):
                        if dy == 0 and dx == 0:
                            continue
                        if connectivity == 4 and dy != 0 and dx != 0:
                            continue
                        nx = px + dx
                        if nx < 0 or nx >= w:
                            continue
                        if fg[ny, nx] != 0 and labels[ny, nx] == 0:
                            labels[ny, nx] = current
                            stack[top] = ny * w + nx
                            top += 1
    return labels, current


label_components = jit(_label_components_body)
