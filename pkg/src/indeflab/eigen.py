"""Principal eigenpairs of the discrete operator on masked regions.

Both solvers run inverse power iteration with a sparse direct inner solve:
the unweighted problem iterates the plain resolvent, the weighted problem
solves L phi_{k+1} = a phi_k and reads the eigenvalue off the Rayleigh
quotient.  Only the principal (simple, positive) eigenpair is produced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, HypothesisViolation
from .geometry import Grid, WeightField, connected, region_boundary_faces
from .operators import DiscreteOperator

DEFAULT_TOL = 1e-10
MAX_ITERATIONS = 500


@dataclass(frozen=True)
class EigenPair:
    """Sup-normalized positive principal eigenpair with solve diagnostics."""

    sigma: float
    phi: np.ndarray
    residual: float
    iterations: int
    mask: np.ndarray


def _restrict(op: DiscreteOperator, mask: np.ndarray):
    idx = np.flatnonzero(mask)
    sub = op.matrix[idx, :].tocsc()[:, idx].tocsc()
    return idx, sub


def _validate_mask(op: DiscreteOperator, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise HypothesisViolation("eigenproblem requested on an empty region")
    if not (op.grid.interior[mask]).all():
        raise HypothesisViolation(
            "eigenproblem mask must consist of interior nodes "
            "(its frontier supplies the Dirichlet data)"
        )
    if not connected(op.grid, mask):
        raise HypothesisViolation("eigenproblem region must be connected")
    return mask


def principal_dirichlet(
    op: DiscreteOperator,
    mask: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> EigenPair:
    """Smallest eigenvalue of the operator restricted to a region with
    Dirichlet data on the region frontier."""
    mask = _validate_mask(op, mask)
    idx, sub = _restrict(op, mask)
    solver = splu(sub)
    x = np.ones(idx.size)
    x /= np.linalg.norm(x)
    sigma = float("nan")
    res = np.inf
    for it in range(1, max_iter + 1):
        y = solver.solve(x)
        y /= np.linalg.norm(y)
        ay = sub @ y
        sigma = float(y @ ay)
        res = float(np.linalg.norm(ay - sigma * y) / abs(sigma))
        x = y
        if res <= tol:
            break
    else:
        raise ConvergenceError(
            f"inverse iteration stalled (residual {res:.3e})",
            last_iterate=x,
            residual=res,
            iterations=max_iter,
        )
    return _finalize(op, idx, x, sigma, res, it, mask, weight=None)


def principal_weighted(
    op: DiscreteOperator,
    weight: WeightField,
    mask: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> EigenPair:
    """Principal eigenvalue of L phi = sigma a phi on the plus region.

    The weight must be strictly positive inside the region; the unweighted
    principal eigenvalue is verified positive first, which guarantees
    existence and uniqueness of the weighted pair in the discrete setting.
    """
    mask = _validate_mask(op, mask)
    w = weight.values[mask]
    if (w <= 0).any():
        raise HypothesisViolation(
            "weighted eigenproblem needs a strictly positive weight on the region"
        )
    base = principal_dirichlet(op, mask, tol=tol, max_iter=max_iter)
    if base.sigma <= 0:
        raise HypothesisViolation(
            f"unweighted principal eigenvalue {base.sigma} is not positive"
        )
    idx, sub = _restrict(op, mask)
    solver = splu(sub)
    x = np.ones(idx.size)
    x /= np.abs(x).max()
    sigma = float("nan")
    res = np.inf
    for it in range(1, max_iter + 1):
        y = solver.solve(w * x)
        y /= np.abs(y).max()
        ay = sub @ y
        wy = w * y
        sigma = float((y @ ay) / (y @ wy))
        res = float(np.linalg.norm(ay - sigma * wy) / (abs(sigma) * np.linalg.norm(wy)))
        x = y
        if res <= tol:
            break
    else:
        raise ConvergenceError(
            f"weighted inverse iteration stalled (residual {res:.3e})",
            last_iterate=x,
            residual=res,
            iterations=max_iter,
        )
    return _finalize(op, idx, x, sigma, res, it, mask, weight=w)


def _finalize(op, idx, x, sigma, res, iterations, mask, weight) -> EigenPair:
    if x.sum() < 0:
        x = -x
    if (x <= 0).any():
        raise ConvergenceError(
            "principal eigenfunction is not strictly positive on the region",
            last_iterate=x,
            residual=res,
            iterations=iterations,
        )
    phi = np.zeros(op.grid.n_nodes)
    phi[idx] = x / x.max()
    return EigenPair(
        sigma=sigma,
        phi=phi,
        residual=res,
        iterations=iterations,
        mask=mask,
    )


@dataclass(frozen=True)
class BoundaryFlux:
    """One-sided conormal derivatives of phi at the region boundary nodes."""

    node_indices: np.ndarray
    values: np.ndarray
    all_negative: bool


def boundary_flux(op: DiscreteOperator, phi: np.ndarray, mask: np.ndarray) -> BoundaryFlux:
    """Outward conormal derivative of phi at each frontier node of the region.

    phi must be nonnegative on the region and vanish on its frontier; for a
    converged principal eigenfunction every value is strictly negative once
    the grid resolves the boundary layer (discrete Hopf behavior).
    """
    grid = op.grid
    mask = np.asarray(mask, dtype=bool)
    if (phi[mask] < 0).any():
        raise ValueError("phi must be nonnegative on the region")
    ins, outs, axes, signs = region_boundary_faces(grid, mask)
    scale = np.abs(phi).max() if np.abs(phi).max() > 0 else 1.0
    if ins.size and np.abs(phi[outs]).max() > 1e-10 * scale:
        raise ValueError("phi must vanish on the discrete region boundary")

    h = grid.spacing
    nodes = np.unique(outs)
    values = np.zeros(nodes.size)
    inv = {int(b): k for k, b in enumerate(nodes)}
    # outward normal per frontier node: normalized sum of face directions
    normals = np.zeros((nodes.size, grid.dimension))
    for b, axis, sign in zip(outs, axes, signs):
        normals[inv[int(b)], axis] += sign
    norms = np.linalg.norm(normals, axis=1)
    norms[norms == 0] = 1.0
    normals /= norms[:, None]
    for b, i, axis, sign in zip(outs, ins, axes, signs):
        k = inv[int(b)]
        a_bb = op.tensor.values[b, axis, axis]
        # one-sided derivative along the axis from the interior node
        deriv = sign * (phi[b] - phi[i]) / h
        values[k] += a_bb * normals[k, axis] * deriv
    all_negative = bool(values.size) and bool((values < 0).all())
    return BoundaryFlux(node_indices=nodes, values=values, all_negative=all_negative)
