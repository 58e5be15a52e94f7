"""Quantitative checkers for the boundary-distance estimates.

Every routine fits constants from the data and asserts finiteness or
stability rather than comparing against absolute values: the constants in
the underlying inequalities are existential, so constancy across decades of
growth is the falsifiable content at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from .continuation import BlowupSequence
from .eigen import EigenPair
from .errors import HypothesisViolation
from .geometry import (
    DistanceField,
    Grid,
    distance_field,
    interpolate,
    sublevel_measure,
)
from .newton import ProblemInstance, Solution
from .operators import (
    DiscreteOperator,
    apply_operator,
    boundary_flux_integral,
    green_identity_defect,
    positive_part,
)

SUPERSOLUTION_SLACK = -1e-8
SIGN_TOLERANCE = 1e-10


@dataclass(frozen=True)
class EstimateConfig:
    """Knobs shared by the estimate checkers."""

    q: float = 1.0
    sublevel_threshold: float = 10.0
    ball_radius: float = 1.0
    flatness_tolerance: float = 0.5
    fit_stability_tolerance: float = 10.0

    def __post_init__(self):
        if self.q < 1:
            raise HypothesisViolation("integrability exponent must be >= 1")
        if self.sublevel_threshold <= 0:
            raise HypothesisViolation("sublevel threshold must be positive")
        if self.ball_radius <= 0:
            raise HypothesisViolation("rescaling ball radius must be positive")
        if not 0 < self.flatness_tolerance < 1:
            raise HypothesisViolation("flatness tolerance must lie in (0, 1)")
        if self.fit_stability_tolerance <= 1:
            raise HypothesisViolation("fit-stability tolerance must exceed 1")

    def validate_for_dimension(self, dimension: int) -> None:
        if dimension >= 2 and self.q >= dimension / (dimension - 1):
            raise HypothesisViolation(
                f"q = {self.q} is outside [1, {dimension}/{dimension - 1}) "
                f"for dimension {dimension}"
            )


def default_q(dimension: int, exponent_r: float) -> float:
    """Default integrability exponent: 1 in 1D, otherwise the midpoint of the
    admissible open interval for the given nonlinearity exponent."""
    if dimension == 1:
        return 1.0
    gap = (exponent_r - 1.0) * (dimension - 1) / 2.0
    if gap >= 1.0:
        raise HypothesisViolation(
            "no admissible default q: nonlinearity exponent too large "
            "for this dimension"
        )
    alpha = (1.0 + gap) / 2.0
    return alpha * dimension / (dimension - 1)


# ---------------------------------------------------------------------------
# norms and the weak Harnack checker


def lq_norm(grid: Grid, u: np.ndarray, mask: np.ndarray, q: float) -> float:
    """Nodal-quadrature L^q norm over the masked nodes."""
    if q < 1:
        raise ValueError("q must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    return float((grid.cell_volume * np.sum(np.abs(u[mask]) ** q)) ** (1.0 / q))


def harnack_ratio(
    op: DiscreteOperator,
    u: np.ndarray,
    mask: np.ndarray,
    q: float,
    dist: DistanceField | None = None,
) -> float:
    """Smallest admissible constant in the boundary-distance lower bound for
    one nonnegative supersolution: ||u||_q divided by the infimum of u/d
    over the interior of the region."""
    grid = op.grid
    mask = np.asarray(mask, dtype=bool)
    if (u[mask] < 0).any():
        raise ValueError("supersolution must be nonnegative on the region")
    if not (u[mask] > 0).any():
        raise ValueError("ratio undefined for the zero function")
    check_nodes = mask & grid.interior
    image = apply_operator(op, u)
    worst = float(image[check_nodes].min()) if check_nodes.any() else 0.0
    if worst < SUPERSOLUTION_SLACK * max(1.0, float(np.abs(u).max())):
        node = int(np.flatnonzero(check_nodes)[np.argmin(image[check_nodes])])
        raise ValueError(
            f"not a discrete supersolution: operator image {worst:.3e} "
            f"at node {node}"
        )
    if dist is None:
        dist = distance_field(grid, mask)
    inner = mask & (dist.values > 0)
    inf_quotient = float((u[inner] / dist.values[inner]).min())
    if inf_quotient <= 0:
        return math.inf
    return lq_norm(grid, u, mask, q) / inf_quotient


@dataclass(frozen=True)
class HarnackReport:
    """Fitted family constant for the weak Harnack inequality."""

    q: float
    ratios: tuple[float, ...]
    constant: float
    passed: bool
    q_ladder: dict[float, float] | None = None


def check_weak_harnack(
    op: DiscreteOperator,
    members,
    mask: np.ndarray,
    q: float,
    q_ladder=None,
) -> HarnackReport:
    """Fit the family constant (max ratio) at the working exponent and
    optionally evaluate its growth along a ladder of exponents."""
    dist = distance_field(op.grid, mask)
    ratios = tuple(harnack_ratio(op, u, mask, q, dist) for u in members)
    constant = max(ratios)
    ladder = None
    if q_ladder is not None:
        ladder = {
            float(qq): max(harnack_ratio(op, u, mask, qq, dist) for u in members)
            for qq in q_ladder
        }
    return HarnackReport(
        q=q,
        ratios=ratios,
        constant=constant,
        passed=bool(np.isfinite(constant)),
        q_ladder=ladder,
    )


def random_supersolution_family(
    op: DiscreteOperator, count: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Seeded family of nonnegative discrete supersolutions.

    Each member solves the linear problem with a squared random low-order
    Fourier source and squared random boundary data, so the operator image
    is exactly the nonnegative source and the members are grid-independent
    functions up to discretization error.
    """
    grid = op.grid
    solver = splu(op.matrix.tocsc())
    pts = grid.coordinates
    modes = range(3)
    members = []
    for _ in range(count):
        field_f = np.zeros(grid.n_nodes)
        field_g = np.zeros(grid.n_nodes)
        for kx in modes:
            for ky in modes if grid.dimension == 2 else [0]:
                c_f, c_g = rng.normal(), rng.normal()
                basis = np.cos(np.pi * kx * pts[:, 0])
                if grid.dimension == 2:
                    basis = basis * np.cos(np.pi * ky * pts[:, 1])
                field_f += c_f * basis
                field_g += c_g * basis
        rhs = np.where(grid.interior, field_f**2, field_g**2)
        rhs[~grid.active] = 0.0
        rhs[grid.robin_mask] = 0.0
        members.append(solver.solve(rhs))
    return members


def boundary_power_family(grid: Grid, roots) -> list[np.ndarray]:
    """Fractional powers d^(1/k) of the boundary distance.

    Concave along every grid line, hence exact discrete supersolutions of
    the Laplacian; the family saturates toward the indicator of the interior
    as the root index grows.
    """
    dist = distance_field(grid, grid.active)
    return [dist.values ** (1.0 / k) for k in roots]


# ---------------------------------------------------------------------------
# blow-up rate checker


def blowup_exponent(r, dimension, q):
    """Growth exponent in the blow-up lower bound; exact for rational inputs."""
    return 1 + (1 - r) * dimension / (2 * q)


@dataclass(frozen=True)
class BlowupReport:
    """Per-member fitted constants of the blow-up lower bound."""

    q: float
    theta: float
    sups: tuple[float, ...]
    constants: tuple[float, ...]
    stability_ratio: float
    fitted_constant: float
    passed: bool
    rejected_members: tuple[int, ...]


def check_blowup_estimate(
    seq: BlowupSequence,
    exponent_r: float,
    q: float,
    grid: Grid,
    plus_mask: np.ndarray,
    dist: DistanceField,
    stability_tol: float = 10.0,
) -> BlowupReport:
    """Fit C_n = min over the plus region of u_n / (M_n^theta d) and check the
    fitted constants stay within the stability tolerance over the final two
    decades of growth."""
    if not seq.members:
        raise ValueError("empty blow-up sequence")
    if q < 1 or (grid.dimension >= 2 and q >= grid.dimension / (grid.dimension - 1)):
        raise HypothesisViolation(f"q = {q} outside the admissible range")
    theta = float(blowup_exponent(exponent_r, grid.dimension, q))
    inner = plus_mask & (dist.values > 0)
    sups, constants, rejected = [], [], []
    for k, member in enumerate(seq.members):
        if member.solution.classification != "positive":
            rejected.append(k)
            continue
        m = member.sup_plus
        c_n = float(
            (member.solution.u[inner] / (m**theta * dist.values[inner])).min()
        )
        sups.append(m)
        constants.append(c_n)
    if not constants:
        raise ValueError("no positive members in the blow-up sequence")
    top = max(sups)
    recent = [c for m, c in zip(sups, constants) if m >= top / 100.0]
    stability = max(recent) / min(recent) if min(recent) > 0 else math.inf
    return BlowupReport(
        q=q,
        theta=theta,
        sups=tuple(sups),
        constants=tuple(constants),
        stability_ratio=float(stability),
        fitted_constant=float(min(constants)),
        passed=bool(stability <= stability_tol),
        rejected_members=tuple(rejected),
    )


# ---------------------------------------------------------------------------
# rescaling and flatness


@dataclass(frozen=True)
class RescaledField:
    """Peak-normalized field sampled on a ball around the argmax."""

    offsets: np.ndarray
    values: np.ndarray
    scale: float
    missing: int
    interpolation_error: float


def rescale(
    grid: Grid,
    u: np.ndarray,
    sup_plus: float,
    argmax_point,
    exponent_r: float,
    radius: float,
    samples_per_axis: int = 65,
) -> RescaledField:
    """Zoom into the argmax at the self-similar scale.

    The window shrinks like a negative power of the sup-norm, so the
    rescaled field has unit value at the center by construction; sample
    points leaving the domain are marked missing.
    """
    if sup_plus <= 0:
        raise ValueError("rescaling requires a positive sup-norm")
    nu = sup_plus ** ((1.0 - exponent_r) / 2.0)
    prefactor = nu ** (2.0 / (exponent_r - 1.0))
    center = np.atleast_1d(np.asarray(argmax_point, dtype=float))
    ticks = np.linspace(-radius, radius, samples_per_axis)
    if grid.dimension == 1:
        offsets = ticks[:, None]
    else:
        gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
        offsets = np.stack([gx.ravel(), gy.ravel()], axis=1)
    offsets = offsets[np.linalg.norm(offsets, axis=1) <= radius + 1e-12]
    points = center[None, :] + nu * offsets
    values = prefactor * interpolate(grid, u, points)
    missing = int(np.count_nonzero(~np.isfinite(values)))

    # bilinear interpolation error bound from local curvature
    h = grid.spacing
    lo = points[np.isfinite(values).nonzero()].min(axis=0) if missing < len(values) else center
    hi = points[np.isfinite(values).nonzero()].max(axis=0) if missing < len(values) else center
    near = np.ones(grid.n_nodes, dtype=bool)
    for ax in range(grid.dimension):
        near &= (grid.coordinates[:, ax] >= lo[ax] - 2 * h) & (
            grid.coordinates[:, ax] <= hi[ax] + 2 * h
        )
    curvature = 0.0
    mi = grid.multi_index()
    for ax in range(grid.dimension):
        stride = grid.strides[ax]
        ok = near & (mi[:, ax] > 0) & (mi[:, ax] < grid.shape[ax] - 1)
        idx = np.flatnonzero(ok)
        if idx.size:
            second = u[idx + stride] - 2 * u[idx] + u[idx - stride]
            curvature = max(curvature, float(np.abs(second).max()) / h**2)
    interp_err = prefactor * curvature * h**2 / 8.0
    return RescaledField(
        offsets=offsets,
        values=values,
        scale=float(nu),
        missing=missing,
        interpolation_error=float(interp_err),
    )


def flatness(field: RescaledField) -> float:
    """Sup-distance of the rescaled field from the constant 1."""
    finite = field.values[np.isfinite(field.values)]
    if finite.size == 0:
        raise ValueError("flatness undefined: every sample left the domain")
    return float(np.abs(finite - 1.0).max())


# ---------------------------------------------------------------------------
# sublevel decay and collar inclusion


@dataclass(frozen=True)
class SublevelSeries:
    threshold: float
    measures: tuple[float, ...]
    strictly_decreasing: bool
    passed: bool


def sublevel_decay(
    seq: BlowupSequence,
    level: float,
    grid: Grid,
    plus_mask: np.ndarray,
    decay_fraction: float = 0.2,
) -> SublevelSeries:
    """Measure of the sublevel sets along the sequence; passes when the final
    measure has dropped below the configured fraction of the initial one."""
    measures = tuple(
        sublevel_measure(grid, member.solution.u, level, plus_mask)
        for member in seq.members
    )
    if not measures:
        raise ValueError("empty blow-up sequence")
    decreasing = all(b < a for a, b in zip(measures, measures[1:]))
    passed = measures[-1] <= decay_fraction * measures[0]
    return SublevelSeries(
        threshold=level,
        measures=measures,
        strictly_decreasing=bool(decreasing),
        passed=bool(passed),
    )


@dataclass(frozen=True)
class CollarVerdict:
    member: int
    collar_width: float
    sublevel_count: int
    violations: int


def collar_inclusion(
    seq: BlowupSequence,
    level: float,
    q: float,
    fitted_constant: float,
    grid: Grid,
    plus_mask: np.ndarray,
    dist: DistanceField,
    exponent_r: float,
) -> tuple[CollarVerdict, ...]:
    """Check nodewise that sublevel nodes lie inside the boundary collar whose
    width is predicted by the fitted blow-up constant."""
    if fitted_constant <= 0:
        raise ValueError("collar check needs a positive fitted constant")
    growth = grid.dimension * (exponent_r - 1.0) / (2.0 * q) - 1.0
    inner = plus_mask & (dist.values > 0)
    verdicts = []
    for k, member in enumerate(seq.members):
        width = level / fitted_constant * member.sup_plus**growth
        sub = inner & (member.solution.u <= level)
        violations = int(np.count_nonzero(sub & (dist.values > width)))
        verdicts.append(
            CollarVerdict(
                member=k,
                collar_width=float(width),
                sublevel_count=int(np.count_nonzero(sub)),
                violations=violations,
            )
        )
    return tuple(verdicts)


# ---------------------------------------------------------------------------
# eigenvalue contradiction quantities


@dataclass(frozen=True)
class EigenIdentityReport:
    """Split integrals, boundary flux, and sign verdicts of the eigenvalue
    contradiction argument for one sequence member."""

    sigma: float
    level: float
    eps: float
    above_integral: float
    below_integral: float
    flux_integral: float
    identity_defect: float
    above_lower_bound: float
    below_lower_bound: float
    flux_negative: bool
    sum_negative: bool
    bounds_hold: bool
    consistency_gap: float


def eigen_identity(
    problem: ProblemInstance,
    solution: Solution,
    pair: EigenPair,
    level: float,
) -> EigenIdentityReport:
    """Evaluate the split integrals against the weighted eigenpair.

    The level must satisfy level^(r-1) > sigma so the splitting produces a
    positive margin; the two integrals are compared against the conormal
    boundary flux of the eigenfunction weighted by the solution.
    """
    grid = problem.grid
    op = problem.operator
    weight = problem.weight
    plus = weight.plus_mask
    r = problem.exponent
    sigma = pair.sigma
    eps = level ** (r - 1.0) - sigma
    if eps <= 0:
        raise HypothesisViolation(
            f"level {level} gives nonpositive margin: level^(r-1) = "
            f"{level ** (r - 1.0):.6g} <= sigma = {sigma:.6g}"
        )
    u, phi, a = solution.u, pair.phi, weight.values
    h_n = grid.cell_volume
    integrand = (
        solution.lam * u + a * positive_part(u) ** r
    ) * phi - sigma * a * u * phi
    above = plus & (u > level)
    below = plus & (u <= level)
    i1 = float(h_n * integrand[above].sum())
    i2 = float(h_n * integrand[below].sum())
    flux = boundary_flux_integral(op, phi, u, plus)
    defect = green_identity_defect(op, u, phi, plus)
    i1_lower = float(level * eps * h_n * (a[above] * phi[above]).sum())
    i2_lower = float(-sigma * level * h_n * (a[below] * phi[below]).sum())

    scale = max(abs(i1) + abs(i2), abs(flux), 1e-300)
    tol = SIGN_TOLERANCE * scale
    return EigenIdentityReport(
        sigma=float(sigma),
        level=float(level),
        eps=float(eps),
        above_integral=i1,
        below_integral=i2,
        flux_integral=float(flux),
        identity_defect=float(defect),
        above_lower_bound=i1_lower,
        below_lower_bound=i2_lower,
        flux_negative=bool(flux < tol),
        sum_negative=bool(i1 + i2 < tol),
        bounds_hold=bool(i1 >= i1_lower - tol and i2 >= i2_lower - tol),
        consistency_gap=float(abs((i1 + i2) - flux)),
    )


# ---------------------------------------------------------------------------
# critical exponents and bound transfer


@dataclass(frozen=True)
class CriticalExponents:
    """Classical a priori bound thresholds for the nonlinearity exponent."""

    p_bt: float
    p_gs: float
    alg_bound: float | None


def critical_exponents(dimension: int, gamma: float | None = None) -> CriticalExponents:
    if not isinstance(dimension, (int, np.integer)) or dimension < 1:
        raise ValueError("dimension must be a positive integer")
    if gamma is not None and gamma < 0:
        raise ValueError("decay exponent must be nonnegative")
    p_bt = math.inf if dimension == 1 else (dimension + 1) / (dimension - 1)
    p_gs = math.inf if dimension <= 2 else (dimension + 2) / (dimension - 2)
    alg = None
    if gamma is not None:
        if dimension == 1:
            alg = math.inf
        else:
            alg = min((dimension + 1 + gamma) / (dimension - 1), p_gs)
    return CriticalExponents(p_bt=p_bt, p_gs=p_gs, alg_bound=alg)


def bounds_transfer(solution: Solution, plus_mask: np.ndarray) -> float:
    """Ratio of the domain sup-norm to the plus-region sup-norm.

    A bounded ratio along a branch is the discrete footprint of bounds on
    the plus region controlling bounds on the whole domain.
    """
    if solution.sup_plus <= 0:
        raise ValueError("degenerate state: no mass on the plus region")
    return solution.sup_domain / solution.sup_plus
