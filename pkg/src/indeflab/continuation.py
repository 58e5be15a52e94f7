"""Pseudo-arclength continuation of positive-solution branches.

The extended system couples the nonlinear residual with an arclength
normalization whose metric weighs the state and the parameter equally after
scaling the state by its current sup-norm, so steps stay meaningful across
decades of growth.  The bordered linear systems are factorized directly,
which stays regular through simple folds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, SingularJacobianError
from .newton import (
    ProblemInstance,
    Solution,
    effective_tolerance,
    jacobian,
    make_solution,
    problem_residual,
)

DEFAULT_THRESHOLDS = (10.0, 100.0, 1000.0, 10000.0)


@dataclass(frozen=True)
class StepControl:
    initial: float = 0.05
    minimum: float = 1e-9
    maximum: float = 1.0
    growth: float = 1.5
    corrector_max: int = 8
    corrector_tol: float = 1e-10
    jump_factor: float = 10.0
    max_steps: int = 5000


@dataclass(frozen=True)
class StopRule:
    sup_ceiling: float = 1e4
    lambda_min: float = 0.0
    lambda_max: float = 1e3


@dataclass
class Branch:
    """Ordered continuation path with step diagnostics."""

    solutions: list[Solution] = field(default_factory=list)
    arclength: list[float] = field(default_factory=list)
    step_sizes: list[float] = field(default_factory=list)
    folds: list[int] = field(default_factory=list)
    termination: str = ""
    detail: str = ""

    def __len__(self) -> int:
        return len(self.solutions)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([s.lam for s in self.solutions])

    @property
    def sup_plus(self) -> np.ndarray:
        return np.array([s.sup_plus for s in self.solutions])

    @property
    def sup_domain(self) -> np.ndarray:
        return np.array([s.sup_domain for s in self.solutions])


def _state_scale(u: np.ndarray) -> float:
    return max(float(np.abs(u).max()), 1e-6)


class _Arclength:
    """Scaled inner product used by predictor and corrector."""

    def __init__(self, n_nodes: int):
        self.n = n_nodes

    def dot(self, du, dlam, dv, dmu, scale):
        return float(du @ dv) / (self.n * scale**2) + dlam * dmu

    def norm(self, du, dlam, scale):
        return np.sqrt(self.dot(du, dlam, du, dlam, scale))


def _lambda_derivative(problem: ProblemInstance, u: np.ndarray) -> np.ndarray:
    col = np.zeros(problem.grid.n_nodes)
    col[problem.grid.interior] = -u[problem.grid.interior]
    return col


def _initial_tangent(problem, u, lam, metric, scale):
    jac = jacobian(problem, u, lam)
    rhs = -_lambda_derivative(problem, u)
    try:
        du = splu(jac.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SingularJacobianError(f"tangent solve failed: {exc}") from exc
    nrm = metric.norm(du, 1.0, scale)
    du, dlam = du / nrm, 1.0 / nrm
    # orient toward growing amplitude
    if du @ u < 0:
        du, dlam = -du, -dlam
    return du, dlam


def _correct(problem, u, lam, tangent, scale, predicted, control):
    """Newton on the extended system; returns (u, lam, residual, iterations)."""
    t_u, t_lam = tangent
    u_pred, lam_pred = predicted
    metric_row = t_u / (len(u) * scale**2)
    for it in range(1, control.corrector_max + 1):
        f = problem_residual(problem, u, lam)
        g = float(metric_row @ (u - u_pred)) + t_lam * (lam - lam_pred)
        res = float(np.abs(f).max())
        tol = effective_tolerance(problem.grid, u, control.corrector_tol)
        if res <= tol and abs(g) <= 1e-8:
            return u, lam, res, it
        jac = jacobian(problem, u, lam)
        border = sparse.bmat(
            [
                [jac, _lambda_derivative(problem, u)[:, None]],
                [sparse.csr_matrix(metric_row[None, :]), np.array([[t_lam]])],
            ],
            format="csc",
        )
        try:
            delta = splu(border).solve(np.concatenate([-f, [-g]]))
        except RuntimeError as exc:
            raise SingularJacobianError(f"bordered solve failed: {exc}") from exc
        if not np.isfinite(delta).all():
            raise ConvergenceError("corrector produced non-finite update")
        u = u + delta[:-1]
        lam = lam + float(delta[-1])
    f = problem_residual(problem, u, lam)
    res = float(np.abs(f).max())
    if res <= effective_tolerance(problem.grid, u, control.corrector_tol):
        return u, lam, res, control.corrector_max
    raise ConvergenceError(
        f"corrector stalled at residual {res:.3e}",
        last_iterate=u,
        residual=res,
        iterations=control.corrector_max,
    )


def trace(
    problem: ProblemInstance,
    start: Solution,
    control: StepControl = StepControl(),
    stop: StopRule = StopRule(),
) -> Branch:
    """Trace the branch through `start` until a stop criterion fires.

    The predictor is the secant tangent (a Jacobian-based tangent on the
    first step); the corrector solves the bordered extended system.  Steps
    halve on corrector failure or on a sup-norm jump exceeding the
    configured factor, and grow after fast correctors.
    """
    if start.residual_norm > 10 * effective_tolerance(
        problem.grid, start.u, control.corrector_tol
    ):
        raise ValueError("start point does not satisfy the solver tolerance")
    metric = _Arclength(problem.grid.n_nodes)
    branch = Branch()
    branch.solutions.append(start)
    branch.arclength.append(0.0)
    branch.step_sizes.append(0.0)

    u_prev, lam_prev = None, None
    u_cur, lam_cur = start.u.copy(), start.lam
    ds = control.initial

    for _ in range(control.max_steps):
        scale = _state_scale(u_cur)
        if u_prev is None:
            t_u, t_lam = _initial_tangent(problem, u_cur, lam_cur, metric, scale)
        else:
            du, dlam = u_cur - u_prev, lam_cur - lam_prev
            nrm = metric.norm(du, dlam, scale)
            if nrm == 0:
                branch.termination = "solver failure"
                branch.detail = "stagnated step"
                break
            t_u, t_lam = du / nrm, dlam / nrm

        accepted = False
        while True:
            u_pred = u_cur + ds * t_u
            lam_pred = lam_cur + ds * t_lam
            try:
                u_new, lam_new, res, iters = _correct(
                    problem, u_pred.copy(), lam_pred, (t_u, t_lam), scale,
                    (u_pred, lam_pred), control,
                )
            except (ConvergenceError, SingularJacobianError):
                u_new = None
            if u_new is not None:
                sup_new = float(np.abs(u_new[problem.grid.active]).max())
                sup_old = float(np.abs(u_cur[problem.grid.active]).max())
                if sup_new > control.jump_factor * (sup_old + 1.0):
                    u_new = None  # suspicious jump: likely branch switch
            if u_new is not None:
                accepted = True
                break
            if ds <= control.minimum:
                break
            ds = max(ds * 0.5, control.minimum)

        if not accepted:
            branch.termination = "solver failure"
            branch.detail = f"corrector failed at minimal step {ds:.2e}"
            break

        if lam_new < stop.lambda_min or lam_new > stop.lambda_max:
            branch.termination = "lambda range exhausted"
            branch.detail = f"parameter left [{stop.lambda_min}, {stop.lambda_max}]"
            break

        sol = make_solution(
            problem, u_new, res, iters, control.corrector_tol, lam=lam_new
        )
        step_len = metric.norm(u_new - u_cur, lam_new - lam_cur, scale)
        branch.solutions.append(sol)
        branch.arclength.append(branch.arclength[-1] + step_len)
        branch.step_sizes.append(ds)

        u_prev, lam_prev = u_cur, lam_cur
        u_cur, lam_cur = u_new, lam_new

        if sol.sup_plus >= stop.sup_ceiling:
            branch.termination = "sup ceiling reached"
            branch.detail = f"plus-region sup-norm {sol.sup_plus:.3e}"
            break
        if iters <= 3:
            ds = min(ds * control.growth, control.maximum)
    else:
        branch.termination = "solver failure"
        branch.detail = f"step budget ({control.max_steps}) exhausted"

    if len(branch) >= 3:
        branch.folds = detect_turning(branch)
    return branch


def detect_turning(branch: Branch) -> list[int]:
    """Indices where the parameter reverses direction along the branch."""
    if len(branch) < 3:
        raise ValueError("fold detection needs at least 3 branch points")
    lam = branch.lambdas
    dl = np.diff(lam)
    folds = []
    prev_sign = 0
    for k, d in enumerate(dl):
        sign = int(np.sign(d)) if abs(d) > 1e-14 * max(1.0, abs(lam[k])) else 0
        if sign == 0:
            continue
        if prev_sign != 0 and sign != prev_sign:
            folds.append(k)  # point nearest the reversal
        prev_sign = sign
    return folds


@dataclass(frozen=True)
class SequenceMember:
    branch_index: int
    solution: Solution
    sup_plus: float
    argmax_node: int
    argmax_point: tuple[float, ...]
    lam: float
    threshold: float


@dataclass(frozen=True)
class BlowupSequence:
    """Branch members selected at increasing sup-norm thresholds."""

    members: tuple[SequenceMember, ...]
    thresholds: tuple[float, ...]
    attained: tuple[bool, ...]


def _member_from_solution(k, sol, plus_mask, grid, threshold) -> SequenceMember:
    plus_idx = np.flatnonzero(plus_mask)
    local = int(np.argmax(sol.u[plus_idx]))
    node = int(plus_idx[local])
    return SequenceMember(
        branch_index=k,
        solution=sol,
        sup_plus=sol.sup_plus,
        argmax_node=node,
        argmax_point=tuple(float(c) for c in grid.coordinates[node]),
        lam=sol.lam,
        threshold=threshold,
    )


def sharpening_sequence(
    problem: ProblemInstance,
    base: Solution,
    thresholds,
    margin: float = 1.05,
) -> tuple[BlowupSequence, list[ProblemInstance]]:
    """Blow-up sequence from a sharpening weight family at fixed parameter.

    Scaling the weight amplitude down by a factor scales the base solution up
    by the conjugate power of the nonlinearity exponent, so each member is a
    positive solution of the problem class whose plus-region sup-norm clears
    the corresponding threshold.  Every member is re-solved by Newton from
    the scaled state, so the returned solutions satisfy the solver tolerance
    for their own problem instance.
    """
    from .geometry import scale_weight
    from .newton import newton

    if base.classification != "positive" or base.sup_plus <= 0:
        raise ValueError("sharpening sequence needs a positive base solution")
    thresholds = tuple(float(t) for t in thresholds)
    if any(b >= a for a, b in zip(thresholds[1:], thresholds)):
        raise ValueError("thresholds must be strictly increasing")
    conj = 1.0 / (problem.exponent - 1.0)
    members, problems = [], []
    u_prev, alpha_prev = base.u, 1.0
    grid = problem.grid
    plus = problem.weight.plus_mask
    for k, target in enumerate(thresholds):
        alpha = (base.sup_plus / (margin * target)) ** (1.0 / conj)
        scaled = ProblemInstance(
            operator=problem.operator,
            weight=scale_weight(problem.weight, alpha),
            exponent=problem.exponent,
            lam=problem.lam,
            forcing=problem.forcing,
        )
        sol = newton(scaled, u_prev * (alpha_prev / alpha) ** conj)
        if sol.sup_plus <= target:
            warnings.warn(f"sharpening member missed threshold {target}", stacklevel=2)
        members.append(_member_from_solution(k, sol, plus, grid, target))
        problems.append(scaled)
        u_prev, alpha_prev = sol.u, alpha
    seq = BlowupSequence(
        members=tuple(members),
        thresholds=thresholds,
        attained=tuple(m.sup_plus > t for m, t in zip(members, thresholds)),
    )
    return seq, problems


def blowup_sequence(
    branch: Branch,
    thresholds,
    plus_mask: np.ndarray,
    grid,
) -> BlowupSequence:
    """Select the first branch point past each threshold of the plus-region
    sup-norm and record its argmax location (ties break to the lowest node)."""
    thresholds = tuple(float(t) for t in thresholds)
    if any(b >= a for a, b in zip(thresholds[1:], thresholds)):
        raise ValueError("thresholds must be strictly increasing")
    sups = branch.sup_plus
    members: list[SequenceMember] = []
    attained: list[bool] = []
    used: set[int] = set()
    for t in thresholds:
        hits = np.flatnonzero(sups > t)
        if hits.size == 0:
            attained.append(False)
            warnings.warn(f"branch never exceeded threshold {t}", stacklevel=2)
            continue
        k = int(hits[0])
        attained.append(True)
        if k in used:
            continue
        used.add(k)
        members.append(
            _member_from_solution(k, branch.solutions[k], plus_mask, grid, t)
        )
    return BlowupSequence(
        members=tuple(members),
        thresholds=thresholds,
        attained=tuple(attained),
    )
