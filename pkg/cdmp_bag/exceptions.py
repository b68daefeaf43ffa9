class CdmpError(Exception):
    """Base class of every error raised by cdmp-bag"""


class IntegrationDivergenceError(CdmpError):
    """State became non-finite while integrating"""

    def __init__(self, step: int, what: str = "state"):
        self.step = step
        super().__init__(f"Non-finite {what} at integration step {step}")


class DegeneratePhaseError(CdmpError):
    """Kernel activations underflowed at the requested phase"""

    def __init__(self, phase: float):
        self.phase = phase
        super().__init__(f"Kernel activations vanish at phase x={phase:.6g}")


class UnsatisfiableBySlowdownError(CdmpError):
    """Position limits are violated by the path itself"""

    def __init__(self, dof: int, excess: float):
        self.dof = dof
        self.excess = excess
        super().__init__(
            f"Path violates position limits of DOF {dof} by {excess:.6g} rad; "
            "scaling tau cannot fix position bounds"
        )


class OptInfeasibleError(CdmpError):
    """Opt-DMP quadratic program has no feasible point"""

    def __init__(self, dof: int, quantity: str, grid_index: int, excess: float):
        self.dof = dof
        self.quantity = quantity
        self.grid_index = grid_index
        self.excess = excess
        super().__init__(
            f"Opt-DMP infeasible for DOF {dof}: {quantity} constraint at grid point "
            f"{grid_index} exceeded by {excess:.6g}"
        )


class OptNotConvergedError(CdmpError):
    """Opt-DMP quadratic program hit its iteration budget and the best
    iterate still breaks the limits on the dense check"""

    def __init__(self, dof: int, iterations: int, residual: float, excess: float):
        self.dof = dof
        self.iterations = iterations
        self.residual = residual
        self.excess = excess
        super().__init__(
            f"Opt-DMP QP for DOF {dof} did not converge in {iterations} iterations "
            f"(KKT residual {residual:.3g}); rollout exceeds limits by {excess:.6g}"
        )


class TuningExhaustedError(CdmpError):
    """No gain in the sweep produced a violation-free rollout"""

    def __init__(self, last_gain: float, excess: float):
        self.last_gain = last_gain
        self.excess = excess
        super().__init__(
            f"gamma_a sweep stopped at {last_gain:.6g} with remaining excess {excess:.6g}"
        )


class IllPosedProblemError(CdmpError):
    """Quadratic program data violates the solver preconditions"""


class DegenerateHullError(CdmpError):
    """All points are collinear"""

    def __init__(self, segment):
        self.segment = segment
        super().__init__("Points are collinear; hull degenerates to a segment")


class DegenerateVolumeError(CdmpError):
    """Points are coplanar so the 3D hull has no volume"""

    volume = 0.0

    def __init__(self, message: str = "Points are coplanar; hull volume is 0"):
        super().__init__(message)


class InsufficientMarkersError(CdmpError):
    """Too few markers survive filtering"""

    def __init__(self, count: int, required: int):
        self.count = count
        self.required = required
        super().__init__(f"Only {count} markers available, {required} required")


class RimNotFoundError(CdmpError):
    """Fewer than three rim markers"""

    def __init__(self, count: int):
        self.count = count
        super().__init__(f"Rim not found: {count} rim markers")


class ElongationUndefinedError(CdmpError):
    """Rim PCA is degenerate"""


class AlphaRuleError(CdmpError):
    """Alpha rule yields a non-positive alpha"""

    def __init__(self, alpha: float):
        self.alpha = alpha
        super().__init__(f"Alpha rule misconfigured: alpha={alpha:.6g} m")


class MetricsStageError(CdmpError):
    """A metrics pipeline stage failed"""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Metrics stage '{stage}' failed: {cause}")


class DegenerateDemoError(CdmpError):
    """Demonstration carries no usable signal"""


class UnreachablePoseError(CdmpError):
    """IK residual stays above tolerance"""

    def __init__(self, sample: int, residual: float):
        self.sample = sample
        self.residual = residual
        super().__init__(f"Pose {sample} unreachable: IK residual {residual:.6g}")


class FormatError(CdmpError):
    """File content violates its format"""

    def __init__(self, message: str, path=None, line: int = None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = f"{':'.join(where)}: " if where else ""
        super().__init__(prefix + message)
