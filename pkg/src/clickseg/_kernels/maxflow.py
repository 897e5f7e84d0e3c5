"""Boykov-Kolmogorov max-flow on arc-list graphs.

Graphs use a CSR layout of paired directed arcs plus BK-style signed
terminal capacities: ``tcap[v] > 0`` is remaining source->v capacity,
``tcap[v] < 0`` is remaining v->sink capacity. Netting both terminal arcs
into one signed number shifts the cut value by a constant and leaves the
argmin labeling unchanged, so callers that care about absolute energies
must net before building.

The node labeling returned is the canonical minimal source side (nodes
reachable from the source in the final residual graph), which is the same
set for every maximum flow, making results comparable across solvers.

The root-distance cache (``ts``/``dist``) is only trusted within a single
orphan's candidate scan: the tree topology is frozen there, so cached
entries cannot go stale, and a validated path can never pass through the
orphan being processed (its parent marker is checked before the cache).
"""

import numpy as np

from ._jit import jit

# tree membership
_FREE = 0
_TREE_S = 1
_TREE_T = 2
# parent_arc sentinels
_P_TERMINAL = -1
_P_NONE = -2
_P_ORPHAN = -3


def _bk_maxflow_body(arc_ptr, arc_head, arc_rev, rescap, tcap):
    n = tcap.shape[0]

    tree = np.zeros(n, np.int8)
    parent_arc = np.full(n, _P_NONE, np.int64)
    dist = np.zeros(n, np.int64)
    ts = np.zeros(n, np.int64)

    # FIFO queues as linked lists: -2 = not queued, -1 = end of queue
    nxt_active = np.full(n, -2, np.int64)
    aq_head = np.int64(-1)
    aq_tail = np.int64(-1)
    nxt_orphan = np.full(n, -2, np.int64)
    oq_head = np.int64(-1)
    oq_tail = np.int64(-1)

    for v in range(n):
        if tcap[v] > 0.0:
            tree[v] = _TREE_S
            parent_arc[v] = _P_TERMINAL
        elif tcap[v] < 0.0:
            tree[v] = _TREE_T
            parent_arc[v] = _P_TERMINAL
        else:
            continue
        if nxt_active[v] == -2:
            nxt_active[v] = -1
            if aq_tail != -1:
                nxt_active[aq_tail] = v
            else:
                aq_head = v
            aq_tail = v

    flow = 0.0
    time = np.int64(0)

    while True:
        # ---- growth: expand S and T trees until they touch -----------------
        bridge = np.int64(-1)  # arc from an S node to a T node with residual
        while aq_head != -1:
            u = aq_head
            aq_head = nxt_active[u]
            if aq_head == -1:
                aq_tail = -1
            nxt_active[u] = -2
            tu = tree[u]
            if tu == _FREE:
                continue
            for a in range(arc_ptr[u], arc_ptr[u + 1]):
                if tu == _TREE_S:
                    cap = rescap[a]
                else:
                    cap = rescap[arc_rev[a]]
                if cap <= 0.0:
                    continue
                v = arc_head[a]
                tv = tree[v]
                if tv == _FREE:
                    tree[v] = tu
                    parent_arc[v] = arc_rev[a]
                    dist[v] = dist[u] + 1
                    ts[v] = ts[u]
                    if nxt_active[v] == -2:
                        nxt_active[v] = -1
                        if aq_tail != -1:
                            nxt_active[aq_tail] = v
                        else:
                            aq_head = v
                        aq_tail = v
                elif tv != tu:
                    if tu == _TREE_S:
                        bridge = a
                    else:
                        bridge = arc_rev[a]
                    break
            if bridge != -1:
                # u is not fully scanned; keep it active
                if nxt_active[u] == -2:
                    nxt_active[u] = -1
                    if aq_tail != -1:
                        nxt_active[aq_tail] = u
                    else:
                        aq_head = u
                    aq_tail = u
                break
        if bridge == -1:
            break  # trees can no longer touch: flow is maximal

        # ---- augment along source->...->bridge->...->sink ------------------
        s_node = arc_head[arc_rev[bridge]]
        t_node = arc_head[bridge]

        bottleneck = rescap[bridge]
        x = s_node
        while parent_arc[x] != _P_TERMINAL:
            pa = parent_arc[x]
            c = rescap[arc_rev[pa]]  # residual parent -> x
            if c < bottleneck:
                bottleneck = c
            x = arc_head[pa]
        if tcap[x] < bottleneck:
            bottleneck = tcap[x]
        y = t_node
        while parent_arc[y] != _P_TERMINAL:
            pa = parent_arc[y]
            c = rescap[pa]  # residual y -> parent
            if c < bottleneck:
                bottleneck = c
            y = arc_head[pa]
        if -tcap[y] < bottleneck:
            bottleneck = -tcap[y]

        flow += bottleneck
        rescap[bridge] -= bottleneck
        rescap[arc_rev[bridge]] += bottleneck

        x = s_node
        while parent_arc[x] != _P_TERMINAL:
            pa = parent_arc[x]
            rescap[arc_rev[pa]] -= bottleneck
            rescap[pa] += bottleneck
            nxt = arc_head[pa]
            if rescap[arc_rev[pa]] <= 0.0:
                parent_arc[x] = _P_ORPHAN
                if nxt_orphan[x] == -2:
                    nxt_orphan[x] = -1
                    if oq_tail != -1:
                        nxt_orphan[oq_tail] = x
                    else:
                        oq_head = x
                    oq_tail = x
            x = nxt
        tcap[x] -= bottleneck
        if tcap[x] <= 0.0:
            parent_arc[x] = _P_ORPHAN
            if nxt_orphan[x] == -2:
                nxt_orphan[x] = -1
                if oq_tail != -1:
                    nxt_orphan[oq_tail] = x
                else:
                    oq_head = x
                oq_tail = x

        y = t_node
        while parent_arc[y] != _P_TERMINAL:
            pa = parent_arc[y]
            rescap[pa] -= bottleneck
            rescap[arc_rev[pa]] += bottleneck
            nxt = arc_head[pa]
            if rescap[pa] <= 0.0:
                parent_arc[y] = _P_ORPHAN
                if nxt_orphan[y] == -2:
                    nxt_orphan[y] = -1
                    if oq_tail != -1:
                        nxt_orphan[oq_tail] = y
                    else:
                        oq_head = y
                    oq_tail = y
            y = nxt
        tcap[y] += bottleneck
        if tcap[y] >= 0.0:
            parent_arc[y] = _P_ORPHAN
            if nxt_orphan[y] == -2:
                nxt_orphan[y] = -1
                if oq_tail != -1:
                    nxt_orphan[oq_tail] = y
                else:
                    oq_head = y
                oq_tail = y

        # ---- adoption: repair the trees broken by saturated arcs -----------
        while oq_head != -1:
            u = oq_head
            oq_head = nxt_orphan[u]
            if oq_head == -1:
                oq_tail = -1
            nxt_orphan[u] = -2
            tu = tree[u]
            time += 1  # fresh cache epoch per orphan: topology frozen below

            best_arc = np.int64(-1)
            best_d = np.int64(0)
            for a in range(arc_ptr[u], arc_ptr[u + 1]):
                v = arc_head[a]
                if tree[v] != tu:
                    continue
                if tu == _TREE_S:
                    cap = rescap[arc_rev[a]]  # parent -> u
                else:
                    cap = rescap[a]  # u -> parent
                if cap <= 0.0:
                    continue
                # walk v to its root; only terminal-rooted candidates qualify
                d = np.int64(0)
                w = v
                ok = False
                while True:
                    pw = parent_arc[w]
                    if pw == _P_ORPHAN or pw == _P_NONE:
                        break
                    if ts[w] == time:
                        d += dist[w]
                        ok = True
                        break
                    if pw == _P_TERMINAL:
                        ts[w] = time
                        dist[w] = 0
                        ok = True
                        break
                    d += 1
                    w = arc_head[pw]
                if not ok:
                    continue
                # cache root distances along the validated path
                w = v
                dd = d
                while ts[w] != time:
                    dist[w] = dd
                    ts[w] = time
                    dd -= 1
                    w = arc_head[parent_arc[w]]
                if best_arc == -1 or d < best_d:
                    best_arc = a
                    best_d = d

            if best_arc != -1:
                parent_arc[u] = best_arc
                ts[u] = time
                dist[u] = best_d + 1
            else:
                # u leaves the tree; its children become orphans
                for a in range(arc_ptr[u], arc_ptr[u + 1]):
                    v = arc_head[a]
                    if tree[v] != tu:
                        continue
                    if tu == _TREE_S:
                        cap = rescap[arc_rev[a]]
                    else:
                        cap = rescap[a]
                    if cap > 0.0:
                        if nxt_active[v] == -2:
                            nxt_active[v] = -1
                            if aq_tail != -1:
                                nxt_active[aq_tail] = v
                            else:
                                aq_head = v
                            aq_tail = v
                    if parent_arc[v] == arc_rev[a]:
                        parent_arc[v] = _P_ORPHAN
                        if nxt_orphan[v] == -2:
                            nxt_orphan[v] = -1
                            if oq_tail != -1:
                                nxt_orphan[oq_tail] = v
                            else:
                                oq_head = v
                            oq_tail = v
                tree[u] = _FREE
                parent_arc[u] = _P_NONE

    # ---- canonical minimal source side: BFS in the residual graph ----------
    src_side = np.zeros(n, np.uint8)
    queue = np.empty(n, np.int64)
    qn = 0
    for v in range(n):
        if tcap[v] > 0.0:
            src_side[v] = 1
            queue[qn] = v
            qn += 1
    qi = 0
    while qi < qn:
        u = queue[qi]
        qi += 1
        for a in range(arc_ptr[u], arc_ptr[u + 1]):
            if rescap[a] > 0.0:
                v = arc_head[a]
                if src_side[v] == 0:
                    src_side[v] = 1
                    queue[qn] = v
                    qn += 1

    return flow, src_side


bk_maxflow = jit(_bk_maxflow_body)


def build_arc_graph(tails, heads, caps, n):
    """CSR arc structure from undirected weighted edges.

    Each edge (u, v, c) becomes the arc pair u->v and v->u, both with
    residual capacity ``c``. Returns (arc_ptr, arc_head, arc_rev, rescap).
    """
    tails = np.asarray(tails, np.int64)
    heads = np.asarray(heads, np.int64)
    caps = np.asarray(caps, np.float64)
    m = tails.shape[0]
    tail2 = np.concatenate([tails, heads])
    head2 = np.concatenate([heads, tails])
    cap2 = np.concatenate([caps, caps])
    pair = np.arange(2 * m, dtype=np.int64)
    pair = np.where(pair < m, pair + m, pair - m)

    order = np.argsort(tail2, kind="stable")
    inv = np.empty(2 * m, np.int64)
    inv[order] = np.arange(2 * m, dtype=np.int64)

    arc_head = head2[order]
    rescap = cap2[order]
    arc_rev = inv[pair[order]]
    arc_ptr = np.zeros(n + 1, np.int64)
    arc_ptr[1:] = np.cumsum(np.bincount(tail2, minlength=n))
    return arc_ptr, arc_head, arc_rev, rescap
