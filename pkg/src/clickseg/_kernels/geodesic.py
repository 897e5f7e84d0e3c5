"""Multi-source Dijkstra over the 8-neighbor pixel grid.

Edge cost between adjacent pixels p, q is the spatial step length (1 or
sqrt(2)) scaled by (1 + gamma * ||I_p - I_q||), with intensities already
normalized to [0, 1] per channel by the caller.
"""

import math

import numpy as np

from ._jit import jit


def _heap_push_body(heap_key, heap_node, size, key, node):
    i = size
    heap_key[i] = key
    heap_node[i] = node
    while i > 0:
        p = (i - 1) >> 1
        if heap_key[p] <= heap_key[i]:
            break
        heap_key[p], heap_key[i] = heap_key[i], heap_key[p]
        heap_node[p], heap_node[i] = heap_node[i], heap_node[p]
        i = p
    return size + 1


def _heap_pop_body(heap_key, heap_node, size):
    key = heap_key[0]
    node = heap_node[0]
    size -= 1
    heap_key[0] = heap_key[size]
    heap_node[0] = heap_node[size]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        r = l + 1
        c = l
        if r < size and heap_key[r] < heap_key[l]:
            c = r
        if heap_key[i] <= heap_key[c]:
            break
        heap_key[i], heap_key[c] = heap_key[c], heap_key[i]
        heap_node[i], heap_node[c] = heap_node[c], heap_node[i]
        i = c
    return key, node, size


_heap_push = jit(_heap_push_body)
_heap_pop = jit(_heap_pop_body)


def _geodesic_distance_body(img, seeds, gamma):
    h, w, c = img.shape
    n = h * w
    dist = np.full(n, np.inf)
    heap_key = np.empty(8 * n + 8, np.float64)
    heap_node = np.empty(8 * n + 8, np.int64)
    size = 0

    for y in range(h):
        for x in range(w):
            if seeds[y, x] != 0:
                p = y * w + x
                dist[p] = 0.0
                size = _heap_push(heap_key, heap_node, size, 0.0, p)

    sqrt2 = math.sqrt(2.0)
    while size > 0:
        key, p, size = _heap_pop(heap_key, heap_node, size)
        if key > dist[p]:
            continue  # stale entry
        py = p // w
        px = p % w
        for dy in range(-1, 2):
            ny = py + dy
            if ny < 0 or ny >= h:
                continue
            for dx in range(-1, 2):
                if dy == 0 and dx == 0:
                    continue
                nx = px + dx
                if nx < 0 or nx >= w:
                    continue
                diff2 = 0.0
                for ch in range(c):
                    d = img[py, px, ch] - img[ny, nx, ch]
                    diff2 += d * d
                step = sqrt2 if (dy != 0 and dx != 0) else 1.0
                nd = key + step * (1.0 + gamma * math.sqrt(diff2))
                q = ny * w + nx
                if nd < dist[q]:
                    dist[q] = nd
                    size = _heap_push(heap_key, heap_node, size, nd, q)

    return dist.reshape(h, w)


geodesic_distance = jit(_geodesic_distance_body)
