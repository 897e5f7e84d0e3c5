"""Seeded random-walker segmentation (Grady-style).

4-neighbor graph Laplacian with contrast weights, seed potentials pinned to
1 (positive) / 0 (negative), and the interior solved with Jacobi-
preconditioned conjugate gradients on the sparse system.
"""

import numpy as np
from scipy import sparse

from ._grid import edge_color_distances, edge_prior_values, grid_edges

WEIGHT_FLOOR = 1e-6


class SolverNonconvergence(RuntimeError):
    def __init__(self, iterations, residual, tolerance):
        self.iterations = iterations
        self.residual = residual
        self.tolerance = tolerance
        super().__init__(
            f"conjugate gradient did not reach {tolerance:g} within "
            f"{iterations} iterations (final residual {residual:.3e})"
        )


def _laplacian(scaled, prior, beta, edge_prior_weight):
    h, w, _ = scaled.shape
    n = h * w
    tails, heads, _ = grid_edges(h, w, include_diagonals=False)
    dist2 = edge_color_distances(scaled, tails, heads)
    weights = np.exp(-beta * dist2) + WEIGHT_FLOOR
    if edge_prior_weight > 0.0:
        weights = weights * (1.0 - edge_prior_weight * edge_prior_values(prior, tails, heads))
        weights = np.maximum(weights, WEIGHT_FLOOR)
    rows = np.concatenate([tails, heads])
    cols = np.concatenate([heads, tails])
    vals = np.concatenate([-weights, -weights])
    lap = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    lap = lap + sparse.diags(-np.asarray(lap.sum(axis=1)).ravel())
    return lap


def _jacobi_cg(A, b, x0, tol, max_iterations):
    """Preconditioned CG; returns (x, iterations). Raises on nonconvergence."""
    diag = A.diagonal()
    inv_diag = 1.0 / diag
    x = x0.copy()
    r = b - A @ x
    target = tol * max(float(np.linalg.norm(b)), 1e-300)
    res = float(np.linalg.norm(r))
    if res <= target:
        return x, 0
    z = r * inv_diag
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iterations + 1):
        Ap = A @ p
        denom = float(p @ Ap)
        if denom <= 0.0:
            break
        alpha = rz / denom
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r))
        if res <= target:
            return x, it
        z = r * inv_diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverNonconvergence(max_iterations, res, tol)


def random_walker_segment(scaled, pos_seeds, neg_seeds, prior, params, warm_start=None):
    """Solve for foreground potentials; returns (mask, potentials)."""
    h, w, _ = scaled.shape
    lap = _laplacian(scaled, prior, params.beta, params.edge_prior_weight)

    seeds = (pos_seeds | neg_seeds).ravel()
    values = pos_seeds.ravel().astype(np.float64)
    potentials = values.copy()
    free = ~seeds
    if free.any():
        A = lap[free][:, free].tocsr()
        rhs = -(lap[free][:, seeds] @ values[seeds])
        if warm_start is not None:
            x0 = np.clip(np.asarray(warm_start, np.float64).ravel()[free], 0.0, 1.0)
        else:
            x0 = np.zeros(int(free.sum()))
        x, _ = _jacobi_cg(A, rhs, x0, params.solver_tolerance,
                          params.solver_max_iterations)
        potentials[free] = x

    potentials = np.clip(potentials.reshape(h, w), 0.0, 1.0)
    mask = potentials >= 0.5
    return mask, potentials
