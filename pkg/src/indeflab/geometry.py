"""Uniform tensor grids, sign-region weight fields, and measure utilities.

Grids are uniform tensor lattices over an interval (1D) or rectangle (2D);
curved domains (disk preset) are masked subsets of a bounding grid whose
boundary nodes sit on the staircase frontier.  All objects are immutable
after construction: arrays are stored with the writeable flag cleared so
instances can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import HypothesisViolation, InvalidDomainError

# |a| below this band counts as the zero region (avoids sign flicker).
SIGN_ZERO_BAND = 1e-14

DIRICHLET = "dirichlet"
ROBIN = "robin"

FACE_NAMES = {1: ("left", "right"), 2: ("left", "right", "bottom", "top")}

# outward unit normal of each rectangle face, per dimension
_FACE_NORMALS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DomainSpec:
    """Geometric description of the computational domain.

    extents: one (lo, hi) pair per axis; for the disk preset the extents are
    the bounding box and the disk is inscribed in it.
    resolution: node count per axis (>= 3).
    boundary_tags: face name -> "dirichlet" | "robin".  The disk preset only
    supports a uniform tag under the key "all".
    """

    dimension: int
    extents: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]
    boundary_tags: dict[str, str] = field(default_factory=dict)
    shape: str = "box"


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid with tagged boundary nodes.

    Node ordering is lexicographic by coordinates (x-major).  `active` is
    False only for nodes of a bounding box outside a masked domain (disk);
    `interior` and `boundary` partition the active nodes.  `boundary_tag`
    is -1 off the boundary, 0 for Dirichlet nodes and 1 for Robin nodes.
    """

    dimension: int
    extents: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]
    spacing: float
    coordinates: np.ndarray
    active: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    boundary_tag: np.ndarray
    domain_shape: str = "box"

    @property
    def n_nodes(self) -> int:
        return self.coordinates.shape[0]

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dimension

    @property
    def strides(self) -> tuple[int, ...]:
        if self.dimension == 1:
            return (1,)
        return (self.shape[1], 1)

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return self.boundary_tag == 0

    @property
    def robin_mask(self) -> np.ndarray:
        return self.boundary_tag == 1

    def multi_index(self) -> np.ndarray:
        """Per-node integer lattice index, shape (n_nodes, dimension)."""
        idx = np.arange(self.n_nodes)
        if self.dimension == 1:
            return idx[:, None]
        ny = self.shape[1]
        return np.stack([idx // ny, idx % ny], axis=1)


def _validate_spec(spec: DomainSpec) -> None:
    if spec.dimension not in (1, 2):
        raise InvalidDomainError(f"dimension must be 1 or 2, got {spec.dimension}")
    if len(spec.extents) != spec.dimension or len(spec.resolution) != spec.dimension:
        raise InvalidDomainError("extents/resolution length must match dimension")
    for lo, hi in spec.extents:
        if not hi > lo:
            raise InvalidDomainError(f"degenerate extent ({lo}, {hi})")
    for n in spec.resolution:
        if n < 3:
            raise InvalidDomainError("at least 3 nodes per axis are required")
    if spec.shape not in ("box", "disk"):
        raise InvalidDomainError(f"unknown domain shape {spec.shape!r}")
    if spec.shape == "disk" and spec.dimension != 2:
        raise InvalidDomainError("disk domains require dimension 2")


def build_grid(spec: DomainSpec) -> Grid:
    """Build a uniform grid with deterministic lexicographic node ordering."""
    _validate_spec(spec)
    dim = spec.dimension
    spacings = [
        (hi - lo) / (n - 1) for (lo, hi), n in zip(spec.extents, spec.resolution)
    ]
    h = spacings[0]
    if any(abs(s - h) > 1e-12 * max(1.0, abs(h)) for s in spacings):
        raise InvalidDomainError(
            f"extents and resolution give non-uniform spacing {spacings}"
        )

    axes = [
        np.linspace(lo, hi, n) for (lo, hi), n in zip(spec.extents, spec.resolution)
    ]
    if dim == 1:
        coords = axes[0][:, None]
        shape = (spec.resolution[0],)
    else:
        gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
        coords = np.stack([gx.ravel(), gy.ravel()], axis=1)
        shape = tuple(spec.resolution)

    n_nodes = coords.shape[0]
    if spec.shape == "disk":
        center = np.array([(lo + hi) / 2 for lo, hi in spec.extents])
        radius = min((hi - lo) / 2 for lo, hi in spec.extents)
        active = np.linalg.norm(coords - center, axis=1) <= radius + 1e-12
        if not active.any():
            raise InvalidDomainError("disk mask selected no nodes")
    else:
        active = np.ones(n_nodes, dtype=bool)

    boundary = _domain_boundary(shape, active, spec.shape)
    interior = active & ~boundary

    tags = np.full(n_nodes, -1, dtype=np.int8)
    _apply_boundary_tags(spec, shape, boundary, tags)
    if (tags[boundary] < 0).any():
        raise InvalidDomainError("tagging rule left boundary nodes untagged")

    return Grid(
        dimension=dim,
        extents=tuple(tuple(map(float, e)) for e in spec.extents),
        shape=shape,
        spacing=float(h),
        coordinates=_frozen(coords),
        active=_frozen(active),
        interior=_frozen(interior),
        boundary=_frozen(boundary),
        boundary_tag=_frozen(tags),
        domain_shape=spec.shape,
    )


def _domain_boundary(shape, active, domain_shape) -> np.ndarray:
    """Active nodes on the domain frontier.

    Box: nodes on the lattice frontier.  Disk: active nodes with an inactive
    or off-lattice 4-neighbor (staircase frontier).
    """
    if len(shape) == 1:
        frontier = np.zeros(shape[0], dtype=bool)
        frontier[0] = frontier[-1] = True
        return frontier & active
    nx, ny = shape
    act = active.reshape(nx, ny)
    if domain_shape == "box":
        frontier = np.zeros((nx, ny), dtype=bool)
        frontier[0, :] = frontier[-1, :] = True
        frontier[:, 0] = frontier[:, -1] = True
        return (frontier & act).ravel()
    # staircase: pad with inactive ring, look for any inactive neighbor
    padded = np.zeros((nx + 2, ny + 2), dtype=bool)
    padded[1:-1, 1:-1] = act
    has_gap = (
        ~padded[:-2, 1:-1] | ~padded[2:, 1:-1] | ~padded[1:-1, :-2] | ~padded[1:-1, 2:]
    )
    return (act & has_gap).ravel()


def _apply_boundary_tags(spec, shape, boundary, tags) -> None:
    tag_codes = {DIRICHLET: 0, ROBIN: 1}
    requested = dict(spec.boundary_tags) or {"all": DIRICHLET}
    default = requested.pop("all", DIRICHLET)
    if default not in tag_codes:
        raise InvalidDomainError(f"unknown boundary tag {default!r}")

    if spec.shape == "disk":
        if requested:
            raise InvalidDomainError("disk domains support only a uniform tag")
        tags[boundary] = tag_codes[default]
        return

    names = FACE_NAMES[spec.dimension]
    for name in requested:
        if name not in names:
            raise InvalidDomainError(f"unknown face {name!r} for dimension {spec.dimension}")
        if requested[name] not in tag_codes:
            raise InvalidDomainError(f"unknown boundary tag {requested[name]!r}")
    face_tag = {name: requested.get(name, default) for name in names}

    if len(shape) == 1:
        n = shape[0]
        tags[0] = tag_codes[face_tag["left"]]
        tags[n - 1] = tag_codes[face_tag["right"]]
        return

    nx, ny = shape
    t = tags.reshape(nx, ny)
    # Robin faces first; Dirichlet faces afterwards so a corner between a
    # Dirichlet face and a Robin face is pinned (the stronger condition).
    order = [n for n in names if face_tag[n] == ROBIN] + [
        n for n in names if face_tag[n] == DIRICHLET
    ]
    for name in order:
        code = tag_codes[face_tag[name]]
        if name == "left":
            t[0, :] = code
        elif name == "right":
            t[-1, :] = code
        elif name == "bottom":
            t[:, 0] = code
        else:
            t[:, -1] = code
    t[~boundary.reshape(nx, ny)] = -1


# ---------------------------------------------------------------------------
# adjacency / region frontier utilities


def axis_face_pairs(grid: Grid, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat index pairs (i, j) of active nodes adjacent along `axis`, j after i."""
    mi = grid.multi_index()
    stride = grid.strides[axis]
    sel = mi[:, axis] < grid.shape[axis] - 1
    i = np.flatnonzero(sel)
    j = i + stride
    keep = grid.active[i] & grid.active[j]
    return i[keep], j[keep]


def all_face_pairs(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All active adjacent pairs with their axis labels."""
    i_all, j_all, ax_all = [], [], []
    for axis in range(grid.dimension):
        i, j = axis_face_pairs(grid, axis)
        i_all.append(i)
        j_all.append(j)
        ax_all.append(np.full(i.shape, axis))
    return np.concatenate(i_all), np.concatenate(j_all), np.concatenate(ax_all)


def adjacent_to(grid: Grid, mask: np.ndarray) -> np.ndarray:
    """Active nodes having at least one active neighbor inside `mask`."""
    out = np.zeros(grid.n_nodes, dtype=bool)
    for axis in range(grid.dimension):
        i, j = axis_face_pairs(grid, axis)
        out[i] |= mask[j]
        out[j] |= mask[i]
    return out & grid.active


def region_boundary_faces(grid: Grid, mask: np.ndarray):
    """Faces (inside, outside, axis, sign) across the frontier of `mask`.

    `sign` is +1 when the outside node follows the inside node along the
    axis, i.e. the outward direction of the region across that face.
    """
    ins, outs, axes, signs = [], [], [], []
    for axis in range(grid.dimension):
        i, j = axis_face_pairs(grid, axis)
        fwd = mask[i] & ~mask[j]
        ins.append(i[fwd])
        outs.append(j[fwd])
        axes.append(np.full(int(fwd.sum()), axis))
        signs.append(np.ones(int(fwd.sum()), dtype=int))
        bwd = mask[j] & ~mask[i]
        ins.append(j[bwd])
        outs.append(i[bwd])
        axes.append(np.full(int(bwd.sum()), axis))
        signs.append(-np.ones(int(bwd.sum()), dtype=int))
    return (
        np.concatenate(ins),
        np.concatenate(outs),
        np.concatenate(axes),
        np.concatenate(signs),
    )


def region_frontier_nodes(grid: Grid, mask: np.ndarray) -> np.ndarray:
    """Discrete boundary of a region: active outside neighbors of the mask
    plus mask nodes lying on the domain frontier."""
    outside = adjacent_to(grid, mask) & ~mask
    return outside | (mask & grid.boundary)


def connected(grid: Grid, mask: np.ndarray) -> bool:
    """True iff the masked nodes form one 4-connected component."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return True
    i, j, _ = all_face_pairs(grid)
    keep = mask[i] & mask[j]
    i, j = i[keep], j[keep]
    pos = -np.ones(grid.n_nodes, dtype=int)
    pos[idx] = np.arange(idx.size)
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    adj = coo_matrix(
        (np.ones(i.size), (pos[i], pos[j])), shape=(idx.size, idx.size)
    )
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp <= 1


# ---------------------------------------------------------------------------
# weight fields


@dataclass(frozen=True)
class WeightSpec:
    """Named weight presets.

    constant:      a = value everywhere.
    sign_pattern:  a = plus_value strictly inside plus_region, minus_value
                   elsewhere.
    decay:         a = amplitude * dist(x, plus-region frontier)**gamma inside
                   the region, a = -amplitude_minus * dist**gamma_minus
                   outside, so |a| vanishes algebraically on the interface.
    tabulated:     explicit nodal values.
    """

    preset: str
    plus_region: tuple[tuple[float, float], ...] | None = None
    value: float = 1.0
    plus_value: float = 1.0
    minus_value: float = -1.0
    gamma: float = 0.0
    gamma_minus: float = 0.0
    amplitude: float = 1.0
    amplitude_minus: float = 1.0
    values: tuple[float, ...] | None = None
    require_interior_closure: bool = False


@dataclass(frozen=True)
class WeightField:
    """Nodal weight values with the induced sign-region masks."""

    values: np.ndarray
    plus_mask: np.ndarray
    minus_mask: np.ndarray
    zero_mask: np.ndarray
    interior_closure: bool
    spec: WeightSpec | None = None

    @property
    def plus_nonempty(self) -> bool:
        return bool(self.plus_mask.any())


def box_boundary_distance(points: np.ndarray, box) -> np.ndarray:
    """Euclidean distance from each point to the frontier of a box.

    Inside the box this is the minimal face distance; outside it is the
    distance to the box itself (whose nearest point lies on the frontier).
    """
    points = np.atleast_2d(points)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    inside = ((points > lo) & (points < hi)).all(axis=1)
    face = np.minimum(points - lo, hi - points).min(axis=1)
    excess = np.maximum(np.maximum(lo - points, points - hi), 0.0)
    outside = np.linalg.norm(excess, axis=1)
    return np.where(inside, face, outside)


def _strictly_inside(points: np.ndarray, box) -> np.ndarray:
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return ((points > lo) & (points < hi)).all(axis=1)


def build_weight(grid: Grid, spec: WeightSpec, require_plus: bool = True) -> WeightField:
    """Evaluate a weight preset on the grid and derive its sign regions."""
    pts = grid.coordinates
    if spec.preset == "constant":
        values = np.full(grid.n_nodes, float(spec.value))
    elif spec.preset == "sign_pattern":
        if spec.plus_region is None:
            raise HypothesisViolation("sign_pattern preset requires plus_region")
        inside = _strictly_inside(pts, spec.plus_region)
        values = np.where(inside, float(spec.plus_value), float(spec.minus_value))
    elif spec.preset == "decay":
        if spec.plus_region is None:
            raise HypothesisViolation("decay preset requires plus_region")
        if spec.gamma < 0 or spec.gamma_minus < 0:
            raise HypothesisViolation("decay exponents must be >= 0")
        inside = _strictly_inside(pts, spec.plus_region)
        dist = box_boundary_distance(pts, spec.plus_region)
        values = np.where(
            inside,
            spec.amplitude * dist**spec.gamma,
            -spec.amplitude_minus * dist**spec.gamma_minus,
        )
    elif spec.preset == "tabulated":
        if spec.values is None or len(spec.values) != grid.n_nodes:
            raise HypothesisViolation("tabulated weight needs one value per node")
        values = np.asarray(spec.values, dtype=float)
    else:
        raise HypothesisViolation(f"unknown weight preset {spec.preset!r}")

    values = np.where(grid.active, values, 0.0)
    plus = grid.active & (values > SIGN_ZERO_BAND)
    minus = grid.active & (values < -SIGN_ZERO_BAND)
    zero = grid.active & ~plus & ~minus

    if require_plus and not plus.any():
        raise HypothesisViolation(
            "weight has an empty plus region; a positive part is required"
        )

    closure = plus | adjacent_to(grid, plus)
    interior_closure = not bool((closure & grid.boundary).any())
    if spec.require_interior_closure and not interior_closure:
        raise HypothesisViolation(
            "plus region touches the domain boundary but its closure "
            "is required to stay inside the domain"
        )

    return WeightField(
        values=_frozen(values),
        plus_mask=_frozen(plus),
        minus_mask=_frozen(minus),
        zero_mask=_frozen(zero),
        interior_closure=interior_closure,
        spec=spec,
    )


def scale_weight(weight: WeightField, factor: float) -> WeightField:
    """Scale the weight values by a positive factor.

    The sign regions are invariant under positive scaling, so the masks are
    reused; sharpening a weight family this way supplies blowing-up solution
    sequences at a fixed spectral parameter.
    """
    if factor <= 0:
        raise HypothesisViolation("weight scaling factor must be positive")
    return WeightField(
        values=_frozen(weight.values * factor),
        plus_mask=weight.plus_mask,
        minus_mask=weight.minus_mask,
        zero_mask=weight.zero_mask,
        interior_closure=weight.interior_closure,
        spec=None,
    )


# ---------------------------------------------------------------------------
# distance fields


@dataclass(frozen=True)
class DistanceField:
    """Exact Euclidean distance to the discrete boundary of a region.

    `values[i]` is the distance from node i to the nearest node of the
    region's discrete boundary; it vanishes exactly on that node set and is
    1-Lipschitz along grid edges.
    """

    region_mask: np.ndarray
    boundary_nodes: np.ndarray
    values: np.ndarray


def distance_field(grid: Grid, region_mask: np.ndarray) -> DistanceField:
    """Multi-source exact distance to the region's discrete boundary nodes."""
    region_mask = np.asarray(region_mask, dtype=bool)
    if not region_mask.any():
        raise InvalidDomainError("distance field requested for an empty region")
    frontier = region_frontier_nodes(grid, region_mask)
    sources = np.flatnonzero(frontier)
    if sources.size == 0:
        raise InvalidDomainError("region has no discrete boundary nodes")
    tree = cKDTree(grid.coordinates[sources])
    dist, _ = tree.query(grid.coordinates)
    dist[sources] = 0.0
    return DistanceField(
        region_mask=_frozen(region_mask),
        boundary_nodes=_frozen(sources),
        values=_frozen(dist),
    )


# ---------------------------------------------------------------------------
# measures


def sublevel_measure(grid: Grid, u: np.ndarray, level: float, mask: np.ndarray) -> float:
    """Nodal-counting measure of {x in mask : u(x) <= level}."""
    if level <= 0:
        raise ValueError("sublevel threshold must be positive")
    count = int(np.count_nonzero(np.asarray(mask, bool) & (u <= level)))
    return grid.cell_volume * count


def measure_density(grid: Grid, point, radius: float) -> float:
    """Nodal-counting measure of the ball of given radius intersected with
    the domain.  Radius is restricted to (0, 1]."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if radius > 1:
        raise ValueError("radius must not exceed 1")
    point = np.atleast_1d(np.asarray(point, dtype=float))
    dist = np.linalg.norm(grid.coordinates - point[None, :], axis=1)
    count = int(np.count_nonzero(grid.active & (dist <= radius + 1e-12)))
    return grid.cell_volume * count


def fit_density_constant(grid: Grid, samples: Iterable[tuple[Sequence[float], float]]) -> float:
    """Fit the measure-density constant: min over samples of measure/r^N.

    Raises if the fitted constant is not strictly positive, which would
    contradict the lower volume bound expected of regular domains.
    """
    ratios = [
        measure_density(grid, x, r) / r**grid.dimension for x, r in samples
    ]
    if not ratios:
        raise ValueError("no density samples supplied")
    c = float(min(ratios))
    if c <= 0:
        raise HypothesisViolation(
            "fitted measure-density constant is not positive"
        )
    return c


# ---------------------------------------------------------------------------
# rescaled-domain ball coverage


def _inside_domain(grid: Grid, points: np.ndarray) -> np.ndarray:
    """Strict membership in the open domain."""
    lo = np.array([e[0] for e in grid.extents])
    hi = np.array([e[1] for e in grid.extents])
    inside = ((points > lo) & (points < hi)).all(axis=1)
    if grid.domain_shape == "disk":
        center = (lo + hi) / 2
        radius = ((hi - lo) / 2).min()
        inside &= np.linalg.norm(points - center, axis=1) < radius
    return inside


def rescaled_domain_contains_ball(
    grid: Grid,
    shift,
    scale: float,
    radius: float,
    samples_per_axis: int = 33,
) -> bool:
    """Test whether the ball of given radius sits inside scale*(shift + domain).

    A lattice of sample points y with |y| <= radius is tested with the
    membership criterion y in scale*(shift + domain) iff y/scale - shift
    lies in the open domain.
    """
    if scale <= 0 or radius <= 0:
        raise ValueError("scale and radius must be positive")
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    ticks = np.linspace(-radius, radius, samples_per_axis)
    if grid.dimension == 1:
        ys = ticks[:, None]
    else:
        gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
        ys = np.stack([gx.ravel(), gy.ravel()], axis=1)
    ys = ys[np.linalg.norm(ys, axis=1) <= radius + 1e-12]
    probe = ys / scale - shift[None, :]
    return bool(_inside_domain(grid, probe).all())


# ---------------------------------------------------------------------------
# boundary-component compatibility


@dataclass(frozen=True)
class BoundaryComponentReport:
    """Verdict of the interface-compatibility check for Robin components."""

    passed: bool
    offending_components: tuple[tuple[int, ...], ...]


def _robin_components(grid: Grid) -> list[np.ndarray]:
    robin = grid.robin_mask
    idx = np.flatnonzero(robin)
    if idx.size == 0:
        return []
    i, j, _ = all_face_pairs(grid)
    keep = robin[i] & robin[j]
    i, j = i[keep], j[keep]
    pos = -np.ones(grid.n_nodes, dtype=int)
    pos[idx] = np.arange(idx.size)
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    adj = coo_matrix((np.ones(i.size), (pos[i], pos[j])), shape=(idx.size, idx.size))
    n_comp, labels = connected_components(adj, directed=False)
    return [idx[labels == c] for c in range(n_comp)]


def validate_boundary_components(grid: Grid, weight: WeightField) -> BoundaryComponentReport:
    """Check that each Robin boundary component meeting the closure of a sign
    region is entirely contained in that closure.

    A violating component would place a flux condition across a sign change
    of the weight, which the problem class forbids.
    """
    closure_plus = weight.plus_mask | adjacent_to(grid, weight.plus_mask)
    closure_minus = weight.minus_mask | adjacent_to(grid, weight.minus_mask)
    offending: list[tuple[int, ...]] = []
    for comp in _robin_components(grid):
        for closure in (closure_plus, closure_minus):
            meets = closure[comp].any()
            contained = closure[comp].all()
            if meets and not contained:
                offending.append(tuple(int(k) for k in comp))
                break
    return BoundaryComponentReport(
        passed=not offending,
        offending_components=tuple(offending),
    )


# ---------------------------------------------------------------------------
# multilinear interpolation (used by the rescaling diagnostics)


def interpolate(grid: Grid, u: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of nodal values at arbitrary points.

    Points outside the closed domain (or touching inactive nodes of a masked
    domain) evaluate to NaN.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    lo = np.array([e[0] for e in grid.extents])
    h = grid.spacing
    rel = (points - lo) / h
    nshape = np.array(grid.shape)
    cell = np.floor(rel).astype(int)
    cell = np.clip(cell, 0, nshape - 2)
    frac = rel - cell
    valid = ((rel >= -1e-12) & (rel <= nshape - 1 + 1e-12)).all(axis=1)
    frac = np.clip(frac, 0.0, 1.0)

    if grid.dimension == 1:
        i0 = cell[:, 0]
        v0, v1 = u[i0], u[i0 + 1]
        act = grid.active[i0] & grid.active[i0 + 1]
        out = v0 * (1 - frac[:, 0]) + v1 * frac[:, 0]
    else:
        ny = grid.shape[1]
        base = cell[:, 0] * ny + cell[:, 1]
        n00, n10, n01, n11 = base, base + ny, base + 1, base + ny + 1
        act = (
            grid.active[n00] & grid.active[n10] & grid.active[n01] & grid.active[n11]
        )
        fx, fy = frac[:, 0], frac[:, 1]
        out = (
            u[n00] * (1 - fx) * (1 - fy)
            + u[n10] * fx * (1 - fy)
            + u[n01] * (1 - fx) * fy
            + u[n11] * fx * fy
        )
    out = np.where(valid & act, out, np.nan)
    return out
