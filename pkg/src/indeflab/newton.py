"""Damped Newton solver for the discrete semilinear problem.

The residual is F(u) = L u - lam*u - a*max(u,0)^r on interior nodes with the
boundary operator rows untouched; the Jacobian uses the matching one-sided
derivative of the clipped power, so u = 0 stays a regular point whenever
lam is away from the spectrum.  Linear solves use a sparse direct
factorization, which is ample at desk scale and robust for the indefinite
Jacobians that appear past folds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, HypothesisViolation, SingularJacobianError
from .geometry import Grid, WeightField
from .operators import DiscreteOperator, positive_part, residual

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 50
MAX_HALVINGS = 30
POSITIVITY_FRACTION = 1e-12


def residual_floor(grid: Grid, sup: float) -> float:
    """Rounding floor of one residual evaluation in float64.

    Applying the operator sums terms of size ~sup/h^2, so no iteration can
    push the sup-norm residual below a multiple of eps*sup/h^2; tolerances
    are clamped to this floor.
    """
    return 8.0 * np.finfo(float).eps * max(1.0, sup) / grid.spacing**2


def effective_tolerance(grid: Grid, u: np.ndarray, tol: float) -> float:
    return max(tol, residual_floor(grid, float(np.abs(u).max(initial=0.0))))


@dataclass(frozen=True)
class ProblemInstance:
    """Frozen description of one semilinear problem."""

    operator: DiscreteOperator
    weight: WeightField
    exponent: float
    lam: float
    forcing: np.ndarray | None = None

    def __post_init__(self):
        if self.exponent <= 1:
            raise HypothesisViolation("nonlinearity exponent must exceed 1")
        if self.lam < 0:
            raise HypothesisViolation("spectral parameter must be nonnegative")

    @property
    def grid(self) -> Grid:
        return self.operator.grid

    def with_lambda(self, lam: float) -> "ProblemInstance":
        return replace(self, lam=lam)


@dataclass(frozen=True)
class Solution:
    """Converged state with residual metadata and a sign classification."""

    u: np.ndarray
    lam: float
    residual_norm: float
    iterations: int
    classification: str
    sup_domain: float
    sup_plus: float


def problem_residual(problem: ProblemInstance, u: np.ndarray, lam: float | None = None) -> np.ndarray:
    lam_eff = problem.lam if lam is None else lam
    return residual(
        problem.operator, u, lam_eff, problem.weight, problem.exponent, problem.forcing
    )


def jacobian(problem: ProblemInstance, u: np.ndarray, lam: float | None = None) -> sparse.csr_matrix:
    """Linearization of the residual; boundary rows are left unchanged."""
    lam_eff = problem.lam if lam is None else lam
    grid = problem.grid
    slope = lam_eff + problem.weight.values * problem.exponent * positive_part(u) ** (
        problem.exponent - 1.0
    )
    diag = np.where(grid.interior, slope, 0.0)
    return (problem.operator.matrix - sparse.diags(diag)).tocsr()


def classify(grid: Grid, u: np.ndarray, tol: float) -> str:
    sup = float(np.abs(u[grid.active]).max()) if grid.active.any() else 0.0
    if sup <= max(10 * tol, 1e-14):
        return "trivial"
    if (u[grid.interior] > POSITIVITY_FRACTION * sup).all():
        return "positive"
    return "nonpositive"


def make_solution(
    problem: ProblemInstance,
    u: np.ndarray,
    res_norm: float,
    iterations: int,
    tol: float,
    lam: float | None = None,
) -> Solution:
    grid = problem.grid
    lam_eff = problem.lam if lam is None else lam
    sup_domain = float(np.abs(u[grid.active]).max())
    plus = problem.weight.plus_mask
    sup_plus = float(u[plus].max()) if plus.any() else 0.0
    return Solution(
        u=u.copy(),
        lam=lam_eff,
        residual_norm=res_norm,
        iterations=iterations,
        classification=classify(grid, u, tol),
        sup_domain=sup_domain,
        sup_plus=sup_plus,
    )


def _linear_solve(mat: sparse.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    try:
        return splu(mat.tocsc()).solve(rhs)
    except RuntimeError as exc:  # exactly singular factorization
        raise SingularJacobianError(f"linearization is singular: {exc}") from exc


def newton(
    problem: ProblemInstance,
    u0: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Solution:
    """Damped Newton iteration with residual-decrease backtracking."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if not np.isfinite(u0).all():
        raise FloatingPointError("initial guess contains non-finite values")
    u = np.asarray(u0, dtype=float).copy()
    f = problem_residual(problem, u)
    res = float(np.abs(f).max())
    for it in range(1, max_iter + 1):
        if res <= effective_tolerance(problem.grid, u, tol):
            return make_solution(problem, u, res, it - 1, tol)
        step = _linear_solve(jacobian(problem, u), -f)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = u + t * step
            f_trial = problem_residual(problem, trial)
            res_trial = float(np.abs(f_trial).max())
            if np.isfinite(res_trial) and res_trial < res:
                break
            t *= 0.5
        else:
            raise ConvergenceError(
                f"line search failed to reduce the residual (residual {res:.3e})",
                last_iterate=u,
                residual=res,
                iterations=it,
            )
        u, f, res = trial, f_trial, res_trial
    if res <= effective_tolerance(problem.grid, u, tol):
        return make_solution(problem, u, res, max_iter, tol)
    raise ConvergenceError(
        f"Newton did not reach tolerance {tol:.1e} in {max_iter} iterations "
        f"(residual {res:.3e})",
        last_iterate=u,
        residual=res,
        iterations=max_iter,
    )


def sub_super_init(problem: ProblemInstance) -> np.ndarray:
    """Initial guess c*phi with phi the principal Dirichlet eigenfunction of
    the operator on the whole domain.

    The amplitude c is picked from a fixed logarithmic scan minimizing the
    residual sup-norm, so the guess is deterministic for a given problem.
    """
    from .eigen import principal_dirichlet

    pair = principal_dirichlet(problem.operator, problem.grid.interior)
    best_c, best_res = 0.0, np.inf
    for c in np.logspace(-3, 3, 61):
        res = float(np.abs(problem_residual(problem, c * pair.phi)).max())
        if res < best_res:
            best_c, best_res = c, res
    return best_c * pair.phi
