"""Mask <-> polygon bridge for the polygon editing mode.

Contours are traced along pixel cracks: pixel (ix, iy) occupies the unit
square [ix, ix+1] x [iy, iy+1], so vertices live on the integer corner
lattice and an epsilon-0 extract/rasterize round trip is exact. Foreground
is treated as 8-connected (contours pinch through diagonal touches), which
makes background 4-connected.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .core import LabelMask

SNAP_DISTANCE = 2.0
DEFAULT_EPSILON = 1.0


@dataclass(frozen=True)
class Polygon:
    """Closed vertex chain; ``hole`` marks interior contours."""

    vertices: tuple
    category_id: int = 1
    hole: bool = False

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        n = len(verts)
        if n < 3:
            raise ValueError("polygon needs at least 3 vertices")
        for i in range(n):
            if verts[i] == verts[(i + 1) % n]:
                raise ValueError(f"consecutive duplicate vertex at index {i}")


def _check_bounds(point, bounds):
    if bounds is None:
        return
    w, h = bounds
    x, y = point
    if not (-0.5 <= x <= w + 0.5 and -0.5 <= y <= h + 0.5):
        raise ValueError(f"vertex {point} outside image bounds {w}x{h} (+0.5 margin)")


# ---------------------------------------------------------------------------
# contour tracing
# ---------------------------------------------------------------------------

def _fg_at(fg, y, x):
    if 0 <= y < fg.shape[0] and 0 <= x < fg.shape[1]:
        return bool(fg[y, x])
    return False


def _outgoing(fg, cx, cy, incoming):
    """Directed cracks leaving corner (cx, cy), excluding none.

    Crack directions are fixed by which side is foreground: +x below,
    -x above, +y west, -y east. At ambiguous corners (two diagonal
    foreground pixels) the left turn keeps the 8-connected foreground
    joined in one contour.
    """
    nw = _fg_at(fg, cy - 1, cx - 1)
    ne = _fg_at(fg, cy - 1, cx)
    sw = _fg_at(fg, cy, cx - 1)
    se = _fg_at(fg, cy, cx)
    out = []
    if se and not ne:
        out.append((1, 0))  # east
    if nw and not sw:
        out.append((-1, 0))  # west
    if sw and not se:
        out.append((0, 1))  # south
    if ne and not nw:
        out.append((0, -1))  # north
    if len(out) == 1:
        return out[0]
    # ambiguous corner: take the left turn relative to the incoming direction
    dx, dy = incoming
    left = (dy, -dx)
    if left in out:
        return left
    raise AssertionError("broken crack topology")  # pragma: no cover


def _trace_from(fg, start_cx, start_cy, direction, visited_h, visited_v):
    """Follow cracks from a start corner back to the start state.

    Returns the contour corners with collinear runs collapsed, rotated so
    the lexicographically smallest (y, x) corner comes first.
    """
    verts = []
    cx, cy = start_cx, start_cy
    dx, dy = direction
    while True:
        if dy == 0:
            visited_h[cy, cx if dx > 0 else cx - 1] = True
        else:
            visited_v[cy if dy > 0 else cy - 1, cx] = True
        nx, ny = cx + dx, cy + dy
        ndx, ndy = _outgoing(fg, nx, ny, (dx, dy))
        if (ndx, ndy) != (dx, dy):
            verts.append((float(nx), float(ny)))
        cx, cy, dx, dy = nx, ny, ndx, ndy
        if (cx, cy) == (start_cx, start_cy) and (dx, dy) == direction:
            first = min(range(len(verts)), key=lambda i: (verts[i][1], verts[i][0]))
            return verts[first:] + verts[:first]


def extract_polygons(mask, epsilon=DEFAULT_EPSILON, category_id=1):
    """Trace object contours and simplify them.

    Returns outer polygons each followed by its hole polygons; with
    epsilon 0 the contours rasterize back to the input mask exactly.
    """
    fg = np.asarray(mask) != 0
    h, w = fg.shape
    visited_h = np.zeros((h + 1, w), bool)
    visited_v = np.zeros((h, w + 1), bool)

    outers = []  # (polygon, area)
    holes = []  # (polygon, representative interior point)
    for cy in range(h + 1):
        for cx in range(w):
            below = _fg_at(fg, cy, cx)
            above = _fg_at(fg, cy - 1, cx)
            if below == above or visited_h[cy, cx]:
                continue
            # a -x crack is walked from its east corner
            direction = (1, 0) if below else (-1, 0)
            start_cx = cx if below else cx + 1
            verts = _trace_from(fg, start_cx, cy, direction, visited_h, visited_v)
            poly = Polygon(tuple(verts), category_id=category_id, hole=not below)
            if epsilon > 0:
                poly = simplify(poly, epsilon)
            if below:
                outers.append(poly)
            else:
                # crack has foreground above: the pixel below is hole interior
                holes.append((poly, (cx + 0.5, cy + 0.5)))

    if not outers:
        return []

    result = []
    children = {i: [] for i in range(len(outers))}
    for poly, point in holes:
        best = None
        best_area = None
        for i, outer in enumerate(outers):
            if _point_in_ring(point, outer.vertices):
                area = abs(_ring_area(outer.vertices))
                if best is None or area < best_area:
                    best, best_area = i, area
        if best is not None:
            children[best].append(poly)
    for i, outer in enumerate(outers):
        result.append(outer)
        result.extend(children[i])
    return result


def _ring_area(verts):
    area = 0.0
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return 0.5 * area


def _point_in_ring(point, verts):
    px, py = point
    inside = False
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        if y1 == y2:
            continue
        if (y1 <= py < y2) or (y2 <= py < y1):
            xc = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if xc > px:
                inside = not inside
    return inside


# ---------------------------------------------------------------------------
# simplification and editing
# ---------------------------------------------------------------------------

def _perp_distance(point, a, b):
    px, py = point
    ax, ay = a
    bx, by = b
    vx, vy = bx - ax, by - ay
    norm = np.hypot(vx, vy)
    if norm == 0.0:
        return np.hypot(px - ax, py - ay)
    return abs(vx * (py - ay) - vy * (px - ax)) / norm


def _dp_chain(verts, epsilon):
    """Douglas-Peucker on an open chain; keeps both endpoints."""
    if len(verts) <= 2:
        return list(verts)
    a, b = verts[0], verts[-1]
    worst_i, worst_d = 0, -1.0
    for i in range(1, len(verts) - 1):
        d = _perp_distance(verts[i], a, b)
        if d > worst_d:
            worst_i, worst_d = i, d
    if worst_d <= epsilon:
        return [a, b]
    left = _dp_chain(verts[: worst_i + 1], epsilon)
    right = _dp_chain(verts[worst_i:], epsilon)
    return left[:-1] + right


def simplify(polygon, epsilon):
    """Simplify a closed polygon; removed vertices stay within epsilon."""
    verts = list(polygon.vertices)
    if len(verts) == 3:
        return polygon
    # anchor at the first vertex and the one farthest from it
    far = max(range(1, len(verts)),
              key=lambda i: (verts[i][0] - verts[0][0]) ** 2 + (verts[i][1] - verts[0][1]) ** 2)
    first = _dp_chain(verts[: far + 1], epsilon)
    second = _dp_chain(verts[far:] + [verts[0]], epsilon)
    kept = first[:-1] + second[:-1]
    if len(kept) < 3:
        # thin sliver: retain the most distant off-chord vertex
        interior = [v for v in verts if v not in kept]
        extra = max(interior, key=lambda v: _perp_distance(v, verts[0], verts[far]))
        idx = verts.index(extra)
        kept = sorted({verts.index(v) for v in kept} | {idx})
        kept = [verts[i] for i in kept]
    return replace(polygon, vertices=tuple(kept))


def move_vertex(polygon, index, position, bounds=None):
    verts = list(polygon.vertices)
    if not 0 <= index < len(verts):
        raise IndexError(f"vertex index {index} out of range")
    _check_bounds(position, bounds)
    position = (float(position[0]), float(position[1]))
    n = len(verts)
    if position == verts[(index - 1) % n] or position == verts[(index + 1) % n]:
        raise ValueError("move would duplicate a neighboring vertex")
    verts[index] = position
    return replace(polygon, vertices=tuple(verts))


def delete_vertex(polygon, index):
    verts = list(polygon.vertices)
    if not 0 <= index < len(verts):
        raise IndexError(f"vertex index {index} out of range")
    if len(verts) == 3:
        raise ValueError("deletion would leave fewer than 3 vertices")
    del verts[index]
    n = len(verts)
    if verts[index % n] == verts[(index - 1) % n]:
        raise ValueError("deletion would create a duplicate vertex")
    return replace(polygon, vertices=tuple(verts))


def insert_vertex_on_edge(polygon, edge_index, position, bounds=None,
                          snap_distance=SNAP_DISTANCE):
    """Insert the projection of ``position`` onto the indexed edge."""
    verts = list(polygon.vertices)
    n = len(verts)
    if not 0 <= edge_index < n:
        raise IndexError(f"edge index {edge_index} out of range")
    a = np.asarray(verts[edge_index])
    b = np.asarray(verts[(edge_index + 1) % n])
    p = np.asarray([float(position[0]), float(position[1])])
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    proj = a + t * ab
    if float(np.hypot(*(p - proj))) > snap_distance:
        raise ValueError(
            f"position is farther than {snap_distance} px from edge {edge_index}"
        )
    new = (float(proj[0]), float(proj[1]))
    _check_bounds(new, bounds)
    if new == tuple(a) or new == tuple(b):
        raise ValueError("insertion would duplicate an edge endpoint")
    verts.insert(edge_index + 1, new)
    return replace(polygon, vertices=tuple(verts))


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def _fill_rings(rings, width, height):
    """Even-odd scanline fill of a ring group at pixel centers."""
    edges = []
    for ring in rings:
        n = len(ring)
        for i in range(n):
            x1, y1 = ring[i]
            x2, y2 = ring[(i + 1) % n]
            if y1 != y2:
                edges.append((x1, y1, x2, y2))
    out = np.zeros((height, width), bool)
    if not edges:
        return out
    e = np.asarray(edges)
    x1, y1, x2, y2 = e[:, 0], e[:, 1], e[:, 2], e[:, 3]
    for iy in range(height):
        yc = iy + 0.5
        crossing = ((y1 <= yc) & (yc < y2)) | ((y2 <= yc) & (yc < y1))
        if not crossing.any():
            continue
        xc = np.sort(
            x1[crossing]
            + (yc - y1[crossing]) * (x2[crossing] - x1[crossing]) / (y2[crossing] - y1[crossing])
        )
        for k in range(0, len(xc) - 1, 2):
            lo = int(np.ceil(xc[k] - 0.5))
            hi = int(np.ceil(xc[k + 1] - 0.5))
            if hi > lo:
                out[iy, max(lo, 0):min(hi, width)] = True
    return out


def group_rings(polygons):
    """Group each outer polygon with the hole polygons that follow it."""
    groups = []
    for poly in polygons:
        if poly.hole and groups:
            groups[-1][1].append(poly)
        else:
            groups.append((poly, []))
    return groups


def rasterize(polygons, width, height):
    """Scanline even-odd fill; later polygons overwrite earlier ones."""
    labels = np.zeros((height, width), np.uint16)
    for outer, holes in group_rings(polygons):
        rings = [outer.vertices] + [h.vertices for h in holes]
        filled = _fill_rings(rings, width, height)
        labels[filled] = outer.category_id
    return LabelMask.from_array(labels)
