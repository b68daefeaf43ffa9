"""Operator-splitting solver for strictly convex quadratic programs.

    minimize    1/2 x'Px + q'x
    subject to  Gx <= h
                Ax == b

The iteration is the ADMM splitting over the stacked constraint block
l <= Cx <= u with C = [G; A]: a cached Cholesky solve of the regularized
quadratic, a projection onto the bounds and a dual ascent step, run on
Ruiz-equilibrated data. Once the iterate has identified the active
constraints the equality-constrained KKT system is solved on that set
(polishing), which yields residuals far below what the splitting alone
reaches in the same iteration budget.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg

from cdmp_bag.exceptions import IllPosedProblemError

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERS = 20000

SIGMA = 1e-6
RELAXATION = 1.6
RHO = 0.1
RHO_EQUALITY_FACTOR = 1e3
RHO_MIN, RHO_MAX = 1e-6, 1e6
CHECK_INTERVAL = 10
ADAPT_INTERVAL = 50
POLISH_INTERVAL = 20
POLISH_ROUNDS = 25
POLISH_DELTA = 1e-9
POLISH_REFINEMENTS = 10
POLISH_FEASIBILITY = 1e-2
POLISH_MAX_ROWS = 3
POLISH_MIN_ROWS = 16
ACTIVE_THRESHOLD = 1e-9
RUIZ_ITERATIONS = 10
INFEASIBILITY_EPS = 1e-4
INFEASIBILITY_PATIENCE = 50


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERS = "max_iters"


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Problem data; ``G``/``h`` and ``A``/``b`` may be omitted."""

    P: np.ndarray
    q: np.ndarray
    G: np.ndarray = None
    h: np.ndarray = None
    A: np.ndarray = None
    b: np.ndarray = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        n = q.size
        if P.shape != (n, n):
            raise IllPosedProblemError(f"P has shape {P.shape}, expected ({n}, {n})")
        G = np.zeros((0, n)) if self.G is None else np.asarray(self.G, dtype=float).reshape(-1, n)
        h = np.zeros(0) if self.h is None else np.atleast_1d(np.asarray(self.h, dtype=float))
        A = np.zeros((0, n)) if self.A is None else np.asarray(self.A, dtype=float).reshape(-1, n)
        b = np.zeros(0) if self.b is None else np.atleast_1d(np.asarray(self.b, dtype=float))
        if G.shape[0] != h.size:
            raise IllPosedProblemError(f"G has {G.shape[0]} rows but h has {h.size} entries")
        if A.shape[0] != b.size:
            raise IllPosedProblemError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        for name, value in dict(P=P, q=q, G=G, h=h, A=A, b=b).items():
            if not np.all(np.isfinite(value)):
                raise IllPosedProblemError(f"{name} contains non-finite entries")
        for name, value in dict(P=P, q=q, G=G, h=h, A=A, b=b).items():
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.h.size

    @property
    def p(self) -> int:
        return self.b.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def validate(self) -> None:
        """Check symmetry, positive definiteness and full row rank of A.

        Raises:
            IllPosedProblemError: A precondition does not hold.
        """
        scale = max(1.0, float(np.max(np.abs(self.P))))
        if np.max(np.abs(self.P - self.P.T)) > 1e-12 * scale:
            raise IllPosedProblemError("P is not symmetric")
        try:
            scipy.linalg.cho_factor(self.P)
        except scipy.linalg.LinAlgError as e:
            raise IllPosedProblemError("P is not positive definite") from e
        if self.p:
            if self.p > self.n:
                raise IllPosedProblemError(
                    f"{self.p} equality constraints for {self.n} variables"
                )
            r = np.linalg.qr(self.A.T, mode="r")
            diagonal = np.abs(np.diag(r))
            if diagonal.min() <= 1e-12 * max(1.0, diagonal.max()):
                raise IllPosedProblemError("Equality constraints are not full row rank")


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: np.ndarray
    duals_ineq: np.ndarray
    duals_eq: np.ndarray
    status: QpStatus
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    polished: bool = False

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal: float
    comp_slack: float

    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.comp_slack)


def _residuals(problem: QpProblem, x, mu, nu) -> KktResiduals:
    stationarity = problem.P @ x + problem.q + problem.G.T @ mu + problem.A.T @ nu
    slack = problem.G @ x - problem.h
    primal = max(0.0, float(slack.max())) if problem.m else 0.0
    if problem.p:
        primal = max(primal, float(np.max(np.abs(problem.A @ x - problem.b))))
    comp = float(np.max(np.abs(mu * slack))) if problem.m else 0.0
    return KktResiduals(
        stationarity=float(np.max(np.abs(stationarity))) if problem.n else 0.0,
        primal=primal,
        comp_slack=comp,
    )


def kkt_residuals(problem: QpProblem, candidate: QpSolution) -> KktResiduals:
    """KKT residuals of a candidate point.

    Args:
        problem (QpProblem): Problem data.
        candidate (QpSolution): Point and multipliers to check.

    Returns:
        KktResiduals: ||Px+q+G'mu+A'nu||inf, max constraint violation
        (inequalities and equalities), max |mu_i (Gx-h)_i|.
    """
    return _residuals(problem, candidate.x, candidate.duals_ineq, candidate.duals_eq)


def _solution(problem, x, mu, nu, status, iterations, polished=False) -> QpSolution:
    residuals = _residuals(problem, x, mu, nu)
    return QpSolution(
        x=x,
        duals_ineq=mu,
        duals_eq=nu,
        status=status,
        primal_residual=residuals.primal,
        dual_residual=residuals.stationarity,
        gap=residuals.comp_slack,
        iterations=iterations,
        polished=polished,
    )


def _solve_kkt(P, q, rows, rhs):
    """Equality-constrained KKT solve on a quasi-definite regularization.

    The shifted matrix is nonsingular even when ``rows`` are linearly
    dependent; iterative refinement against the exact matrix removes the
    shift from the answer.
    """
    n, k = P.shape[0], rows.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = rows.T
    K[n:, :n] = rows
    shift = np.concatenate([np.full(n, POLISH_DELTA), np.full(k, -POLISH_DELTA)])
    factorization = scipy.linalg.lu_factor(K + np.diag(shift), check_finite=False)
    target = np.concatenate([-q, rhs])
    solution = scipy.linalg.lu_solve(factorization, target, check_finite=False)
    for _ in range(POLISH_REFINEMENTS):
        solution += scipy.linalg.lu_solve(factorization, target - K @ solution, check_finite=False)
    return solution[:n], solution[n:]


def _polish(problem: QpProblem, x, mu, tolerance: float):
    """Active-set refinement of an approximate solution.

    Starts from the constraints the iterate marks as active (positive dual
    or violated) and alternates KKT solves with adding violated rows and
    dropping rows whose multiplier turned negative.
    """
    G, h, A, b = problem.G, problem.h, problem.A, problem.b
    active = (mu > ACTIVE_THRESHOLD * max(1.0, float(mu.max(initial=0.0)))) | (G @ x - h > tolerance)
    for _ in range(POLISH_ROUNDS):
        if np.count_nonzero(active) + problem.p > max(POLISH_MAX_ROWS * problem.n, POLISH_MIN_ROWS):
            return None
        rows = np.vstack([A, G[active]])
        rhs = np.concatenate([b, h[active]])
        x_new, multipliers = _solve_kkt(problem.P, problem.q, rows, rhs)
        nu = multipliers[: problem.p]
        mu_new = np.zeros(problem.m)
        mu_new[active] = multipliers[problem.p :]
        violated = G @ x_new - h > tolerance
        negative = mu_new < -tolerance
        if not violated.any() and not negative.any():
            return x_new, np.maximum(mu_new, 0.0), nu
        active = (active | violated) & ~negative
    return None


def _ruiz(P, C, q):
    """Diagonal equilibration D (variables), E (constraints), c (cost)"""
    n, rows = P.shape[0], C.shape[0]
    D = np.ones(n)
    E = np.ones(rows)
    P_s, C_s = P.copy(), C.copy()
    for _ in range(RUIZ_ITERATIONS):
        col = np.max(np.abs(P_s), axis=0)
        if rows:
            col = np.maximum(col, np.max(np.abs(C_s), axis=0))
            row = np.max(np.abs(C_s), axis=1)
            e = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
        else:
            e = np.ones(0)
        d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        P_s = d[:, None] * P_s * d[None, :]
        C_s = e[:, None] * C_s * d[None, :]
        D *= d
        E *= e
    cost_norm = max(float(np.mean(np.max(np.abs(P_s), axis=0))), float(np.max(np.abs(D * q), initial=0.0)))
    c = 1.0 / np.clip(cost_norm, 1e-4, 1e4)
    return D, E, c, c * P_s, C_s


class _Factorizations:
    """Cholesky factors of P + sigma I + C' diag(rho) C, one per rho value.

    The constraint products are formed once per problem, so a new rho costs
    one n x n factorization and a revisited rho costs nothing.
    """

    def __init__(self, P_s: np.ndarray, C_s: np.ndarray, m: int):
        n = P_s.shape[0]
        self.base = P_s + SIGMA * np.eye(n)
        self.inequality = C_s[:m].T @ C_s[:m]
        self.equality = C_s[m:].T @ C_s[m:]
        self.m = m
        self.rows = C_s.shape[0]
        self.cache = {}

    def __call__(self, rho: float):
        if rho not in self.cache:
            M = self.base + rho * self.inequality + rho * RHO_EQUALITY_FACTOR * self.equality
            try:
                factor = scipy.linalg.cho_factor(M, check_finite=False)
            except scipy.linalg.LinAlgError as e:
                raise IllPosedProblemError("KKT factorization failed") from e
            rho_vec = np.full(self.rows, rho)
            rho_vec[self.m :] *= RHO_EQUALITY_FACTOR
            self.cache[rho] = (rho_vec, factor)
        return self.cache[rho]


def solve(
    problem: QpProblem,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    warm_start: QpSolution = None,
) -> QpSolution:
    """Solve a strictly convex QP.

    Args:
        problem (QpProblem): Problem data.
        tolerance (float): Absolute bound on every KKT residual.
        max_iters (int): Iteration budget.
        warm_start (QpSolution, optional): Previous solution to start from.

    Returns:
        QpSolution: status ``optimal`` when all residuals are within
        ``tolerance``, ``infeasible`` when the divergence certificate holds,
        ``max_iters`` otherwise (with the best iterate seen).

    Raises:
        IllPosedProblemError: Problem data violates the preconditions.
    """
    problem.validate()
    n, m, p = problem.n, problem.m, problem.p
    P, q = problem.P, problem.q

    if m + p == 0:
        x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(P), -q)
        return _solution(problem, x, np.zeros(0), np.zeros(0), QpStatus.OPTIMAL, 0)

    C = np.vstack([problem.G, problem.A])
    lower = np.concatenate([np.full(m, -np.inf), problem.b])
    upper = np.concatenate([problem.h, problem.b])
    D, E, c, P_s, C_s = _ruiz(P, C, q)
    q_s = c * D * q
    lower_s, upper_s = E * lower, E * upper
    scaled = QpProblem(P=P_s, q=q_s, G=C_s[:m], h=upper_s[:m], A=C_s[m:], b=upper_s[m:])
    finite_upper = np.isfinite(upper_s)
    finite_lower = np.isfinite(lower_s)

    factorizations = _Factorizations(P_s, C_s, m)
    rho = RHO
    rho_vec, factorization = factorizations(rho)

    if warm_start is not None:
        x_s = warm_start.x / D
        y = np.concatenate([warm_start.duals_ineq, warm_start.duals_eq])
        # duals only carry over when the constraint set is unchanged
        y_s = c * y / E if y.size == m + p else np.zeros(m + p)
        z_s = np.clip(C_s @ x_s, lower_s, upper_s)
    else:
        x_s = np.zeros(n)
        y_s = np.zeros(m + p)
        z_s = np.zeros(m + p)

    def unscale(x_s, y_s):
        x = D * x_s
        y = E * y_s / c
        return x, np.maximum(y[:m], 0.0), y[m:]

    best = None
    best_score = np.inf
    streak = 0
    y_checked = y_s.copy()
    for iteration in range(1, max_iters + 1):
        rhs = SIGMA * x_s - q_s + C_s.T @ (rho_vec * z_s - y_s)
        x_tilde = scipy.linalg.cho_solve(factorization, rhs, check_finite=False)
        z_tilde = C_s @ x_tilde
        x_s = RELAXATION * x_tilde + (1.0 - RELAXATION) * x_s
        z_relaxed = RELAXATION * z_tilde + (1.0 - RELAXATION) * z_s
        z_s = np.clip(z_relaxed + y_s / rho_vec, lower_s, upper_s)
        y_s = y_s + rho_vec * (z_relaxed - z_s)

        if iteration % CHECK_INTERVAL and iteration != max_iters:
            continue

        x, mu, nu = unscale(x_s, y_s)
        score = _residuals(problem, x, mu, nu).worst()
        if score < best_score:
            best, best_score = (x, mu, nu), score
        if score <= tolerance:
            logging.debug(f"QP converged in {iteration} iterations")
            return _solution(problem, x, mu, nu, QpStatus.OPTIMAL, iteration)

        if iteration % POLISH_INTERVAL == 0:
            polished = _polish(scaled, x_s, np.maximum(y_s[:m], 0.0), tolerance * POLISH_FEASIBILITY)
            if polished is not None:
                x_p, mu_p, nu_p = polished
                candidate = unscale(x_p, np.concatenate([mu_p, nu_p]))
                polished_score = _residuals(problem, *candidate).worst()
                if polished_score < best_score:
                    best, best_score = candidate, polished_score
                if polished_score <= tolerance:
                    logging.debug(f"QP polished after {iteration} iterations")
                    return _solution(problem, *candidate, QpStatus.OPTIMAL, iteration, polished=True)

        # primal infeasibility certificate on the scaled dual differences
        delta_y = y_s - y_checked
        y_checked = y_s.copy()
        norm_dy = float(np.max(np.abs(delta_y)))
        certificate = False
        if norm_dy > 0:
            eps = INFEASIBILITY_EPS * norm_dy
            unbounded = np.any(delta_y[~finite_upper] > eps) or np.any(delta_y[~finite_lower] < -eps)
            support = float(
                np.sum(upper_s[finite_upper] * np.maximum(delta_y[finite_upper], 0.0))
                + np.sum(lower_s[finite_lower] * np.minimum(delta_y[finite_lower], 0.0))
            )
            certificate = (
                not unbounded
                and np.max(np.abs(D * (C_s.T @ delta_y))) <= eps
                and support < -eps
            )
        streak = streak + CHECK_INTERVAL if certificate else 0
        if streak >= INFEASIBILITY_PATIENCE:
            logging.debug(f"QP infeasibility certificate held at iteration {iteration}")
            return _solution(problem, *best, QpStatus.INFEASIBLE, iteration)

        if iteration % ADAPT_INTERVAL == 0:
            primal_s = np.max(np.abs(C_s @ x_s - z_s))
            dual_s = np.max(np.abs(P_s @ x_s + q_s + C_s.T @ y_s))
            primal_scale = max(np.max(np.abs(C_s @ x_s)), np.max(np.abs(z_s)), 1e-12)
            dual_scale = max(
                np.max(np.abs(P_s @ x_s)), np.max(np.abs(C_s.T @ y_s)), np.max(np.abs(q_s)), 1e-12
            )
            if primal_s > 0 and dual_s > 0:
                ratio = np.sqrt((primal_s / primal_scale) / max(dual_s / dual_scale, 1e-12))
                new_rho = float(np.clip(rho * ratio, RHO_MIN, RHO_MAX))
                if new_rho > 5.0 * rho or new_rho < 0.2 * rho:
                    # quarter-decade grid
                    rho = float(10.0 ** (np.round(4.0 * np.log10(new_rho)) / 4.0))
                    rho_vec, factorization = factorizations(rho)

    logging.debug(f"QP stopped at max_iters={max_iters}, best residual {best_score:.3g}")
    return _solution(problem, *best, QpStatus.MAX_ITERS, max_iters)
