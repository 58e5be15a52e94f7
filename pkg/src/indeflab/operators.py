"""Discrete divergence-form elliptic operators on uniform grids.

The second-order interior stencil is the conservative flux difference of
A grad(u) with arithmetic face averaging of the diffusion coefficients.
Dirichlet rows are identity-substituted so global node indexing stays
stable; Robin rows combine a first-order one-sided conormal derivative
with the reaction coefficient.  Only diagonal diffusion tensors are
assembled; the tensor type itself stores full symmetric matrices so the
ellipticity checks cover the general case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import AssemblyError, EllipticityError
from .geometry import (
    Grid,
    WeightField,
    axis_face_pairs,
    region_boundary_faces,
)


@dataclass(frozen=True)
class DiffusionTensor:
    """Per-node symmetric diffusion matrices with their ellipticity constant."""

    values: np.ndarray  # (n_nodes, dim, dim)
    preset: str
    ellipticity: float

    def diag(self, axis: int) -> np.ndarray:
        return self.values[:, axis, axis]


@dataclass(frozen=True)
class BoundarySpec:
    """Robin reaction coefficient per node (meaningful on Robin-tagged nodes).

    The conormal direction is always A(x) n with n the outward unit normal.
    """

    robin_coefficient: np.ndarray


@dataclass(frozen=True)
class DiscreteOperator:
    """Sparse realization of the elliptic operator plus boundary rows."""

    matrix: sparse.csr_matrix
    grid: Grid
    tensor: DiffusionTensor
    boundary: BoundarySpec


def build_diffusion(grid: Grid, preset: str = "identity", diagonal=None) -> DiffusionTensor:
    """Construct a diffusion tensor from a named preset.

    identity: A = I.  constant: A = diag(diagonal).  smooth: A = diag(1+x^2, 1, ...),
    a smoothly varying symmetric positive definite field.
    """
    dim = grid.dimension
    n = grid.n_nodes
    values = np.zeros((n, dim, dim))
    if preset == "identity":
        for k in range(dim):
            values[:, k, k] = 1.0
    elif preset == "constant":
        if diagonal is None:
            diagonal = (1.0,) * dim
        if len(diagonal) != dim:
            raise EllipticityError("constant preset needs one diagonal entry per axis")
        for k, v in enumerate(diagonal):
            values[:, k, k] = float(v)
    elif preset == "smooth":
        values[:, 0, 0] = 1.0 + grid.coordinates[:, 0] ** 2
        for k in range(1, dim):
            values[:, k, k] = 1.0
    else:
        raise EllipticityError(f"unknown diffusion preset {preset!r}")
    mu = ellipticity_constant(DiffusionTensor(values=values, preset=preset, ellipticity=0.0))
    return DiffusionTensor(values=values, preset=preset, ellipticity=mu)


def tabulated_diffusion(grid: Grid, values: np.ndarray) -> DiffusionTensor:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_nodes, grid.dimension, grid.dimension):
        raise EllipticityError("tabulated tensor has wrong shape")
    if not np.allclose(values, np.swapaxes(values, 1, 2), atol=1e-14):
        raise EllipticityError("diffusion matrices must be symmetric")
    mu = ellipticity_constant(DiffusionTensor(values=values, preset="tabulated", ellipticity=0.0))
    return DiffusionTensor(values=values, preset="tabulated", ellipticity=mu)


def ellipticity_constant(tensor: DiffusionTensor) -> float:
    """Smallest nodal eigenvalue of the diffusion matrices; must be positive."""
    vals = tensor.values
    if vals.shape[1] == 1:
        mins = vals[:, 0, 0]
    else:
        mins = np.linalg.eigvalsh(vals)[:, 0]
    mu = float(mins.min())
    if mu <= 0:
        raise EllipticityError(f"diffusion tensor is not uniformly elliptic (min eig {mu})")
    return mu


def build_boundary(grid: Grid, beta: float | np.ndarray = 0.0) -> BoundarySpec:
    if np.isscalar(beta):
        coeff = np.full(grid.n_nodes, float(beta))
    else:
        coeff = np.asarray(beta, dtype=float)
        if coeff.shape != (grid.n_nodes,):
            raise AssemblyError("beta must be scalar or one value per node")
    if (coeff[grid.robin_mask] < 0).any():
        raise AssemblyError("Robin coefficient must be nonnegative")
    return BoundarySpec(robin_coefficient=coeff)


def _check_diagonal(tensor: DiffusionTensor) -> None:
    vals = tensor.values
    if vals.shape[1] == 1:
        return
    off = vals.copy()
    for k in range(vals.shape[1]):
        off[:, k, k] = 0.0
    if np.abs(off).max() > 1e-14:
        raise AssemblyError(
            "face-flux assembly supports diagonal diffusion tensors only"
        )


def _outward_directions(grid: Grid, node: int) -> list[tuple[int, int]]:
    """(axis, sign) pairs pointing out of the domain at a boundary node."""
    mi = grid.multi_index()[node]
    dirs = []
    for axis in range(grid.dimension):
        stride = grid.strides[axis]
        for sign in (-1, 1):
            k = mi[axis] + sign
            if k < 0 or k >= grid.shape[axis]:
                dirs.append((axis, sign))
            elif not grid.active[node + sign * stride]:
                dirs.append((axis, sign))
    return dirs


def assemble(grid: Grid, tensor: DiffusionTensor, bc: BoundarySpec) -> DiscreteOperator:
    """Assemble the discrete operator with boundary handling.

    Interior rows: flux differences of A grad(u) with midpoint-averaged
    coefficients.  Dirichlet rows: identity (u = 0 enforced through the
    residual).  Robin rows: one-sided conormal derivative plus beta*u.
    """
    actual_mu = ellipticity_constant(tensor)
    if actual_mu < tensor.ellipticity - 1e-14:
        raise EllipticityError(
            f"nodal eigenvalue {actual_mu} below declared constant {tensor.ellipticity}"
        )
    _check_diagonal(tensor)

    h = grid.spacing
    n = grid.n_nodes
    rows, cols, vals = [], [], []
    interior = grid.interior

    for axis in range(grid.dimension):
        i, j = axis_face_pairs(grid, axis)
        a = tensor.diag(axis)
        c = 0.5 * (a[i] + a[j]) / h**2
        for r, other, sgn in ((i, j, 1.0), (j, i, 1.0)):
            keep = interior[r]
            rows.extend([r[keep], r[keep]])
            cols.extend([r[keep], other[keep]])
            vals.extend([c[keep], -c[keep]])

    # Dirichlet and inactive rows: identity
    fixed = np.flatnonzero(~interior & ~grid.robin_mask)
    rows.append(fixed)
    cols.append(fixed)
    vals.append(np.ones(fixed.size))

    # Robin rows: conormal one-sided flux plus reaction
    for b in np.flatnonzero(grid.robin_mask):
        dirs = _outward_directions(grid, b)
        if not dirs:
            raise AssemblyError(f"Robin node {b} has no outward direction")
        nvec = np.zeros(grid.dimension)
        for axis, sign in dirs:
            nvec[axis] += sign
        nvec /= np.linalg.norm(nvec)
        diag_val = bc.robin_coefficient[b]
        entries: dict[int, float] = {b: diag_val}
        for axis, sign in dirs:
            nk = nvec[axis]
            if nk == 0.0:
                continue
            inward = b - sign * grid.strides[axis]
            mi = grid.multi_index()[b]
            k_in = mi[axis] - sign
            if k_in < 0 or k_in >= grid.shape[axis] or not grid.active[inward]:
                raise AssemblyError(f"Robin node {b} lacks an inward neighbor")
            a_bb = tensor.values[b, axis, axis]
            # d_nu u ~ a * n_k * sign * (u_b - u_inward) / h
            coeff = a_bb * nk * sign / h
            entries[b] = entries.get(b, 0.0) + coeff
            entries[inward] = entries.get(inward, 0.0) - coeff
        for col, v in entries.items():
            rows.append(np.array([b]))
            cols.append(np.array([col]))
            vals.append(np.array([v]))

    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    matrix.sum_duplicates()
    return DiscreteOperator(matrix=matrix, grid=grid, tensor=tensor, boundary=bc)


def apply_operator(op: DiscreteOperator, u: np.ndarray) -> np.ndarray:
    if u.shape != (op.grid.n_nodes,):
        raise ValueError(
            f"vector length {u.shape} does not match grid size {op.grid.n_nodes}"
        )
    return op.matrix @ u


def positive_part(u: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0)


def residual(
    op: DiscreteOperator,
    u: np.ndarray,
    lam: float,
    weight: WeightField,
    exponent: float,
    forcing: np.ndarray | None = None,
) -> np.ndarray:
    """Nonlinear residual of the semilinear problem.

    Interior rows carry L u - lam*u - a*max(u,0)^r (minus optional forcing);
    boundary rows carry the boundary operator applied to u.  The positive
    part keeps non-integer powers defined and makes u = 0 an exact root.
    """
    if exponent <= 1:
        raise ValueError("nonlinearity exponent must exceed 1")
    if not np.isfinite(u).all():
        raise FloatingPointError("residual evaluated at a non-finite state")
    out = apply_operator(op, u)
    reaction = lam * u + weight.values * positive_part(u) ** exponent
    if forcing is not None:
        reaction = reaction + forcing
    out[op.grid.interior] -= reaction[op.grid.interior]
    return out


def green_identity_defect(
    op: DiscreteOperator,
    u: np.ndarray,
    phi: np.ndarray,
    mask: np.ndarray,
) -> float:
    """Defect of the discrete Green identity on a region.

    Compares the volume sum of phi*(L u) - u*(L phi) over the mask with the
    conormal boundary flux of phi weighted by u over the region frontier.
    Requires phi to vanish on the discrete region boundary.
    """
    mask = np.asarray(mask, dtype=bool)
    volume = _green_volume_sum(op, u, phi, mask)
    flux = boundary_flux_integral(op, phi, u, mask)
    return float(abs(volume - flux))


def _green_volume_sum(op, u, phi, mask) -> float:
    lu = apply_operator(op, u)
    lphi = apply_operator(op, phi)
    h_n = op.grid.cell_volume
    return float(h_n * np.sum(phi[mask] * lu[mask] - u[mask] * lphi[mask]))


def boundary_flux_integral(
    op: DiscreteOperator,
    phi: np.ndarray,
    u: np.ndarray,
    mask: np.ndarray,
) -> float:
    """Face quadrature of the conormal flux of phi weighted by u over the
    discrete region boundary.

    phi must vanish on the frontier nodes; one-sided differences across each
    frontier face approximate the outward conormal derivative.
    """
    grid = op.grid
    ins, outs, axes, _ = region_boundary_faces(grid, mask)
    if ins.size == 0:
        return 0.0
    scale = np.abs(phi).max() if np.abs(phi).max() > 0 else 1.0
    if np.abs(phi[outs]).max() > 1e-10 * scale:
        raise ValueError("phi must vanish on the discrete region boundary")
    h = grid.spacing
    a_face = 0.5 * (
        op.tensor.values[ins, axes, axes] + op.tensor.values[outs, axes, axes]
    )
    flux = a_face * (phi[outs] - phi[ins]) / h
    return float(np.sum(flux * u[outs]) * h ** (grid.dimension - 1))


def export_matrix(op: DiscreteOperator, path) -> None:
    """Dump the operator in coordinate-list text form (row, col, value)."""
    coo = op.matrix.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row,col,value\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r},{c},{v!r}\n")
