"""Exception types shared across the library."""


class LosnetError(Exception):
    """Base class for all library errors."""


class PolygonError(LosnetError):
    """A polygon fails validation (too few vertices, self-intersecting, zero area)."""

    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"polygon {index}: {message}"
        super().__init__(message)
        self.index = index


class DegenerateEdgeError(LosnetError):
    """An ellipsoid was requested for an edge that is too short or has coincident endpoints."""


class RankDeficiencyError(LosnetError):
    """Point set spans less than the full dimension; no bounded enclosing ellipsoid exists."""


class MveeConvergenceError(LosnetError):
    """Ellipsoid iteration hit its iteration cap before reaching the requested tolerance."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"enclosing-ellipsoid iteration did not converge after {iterations} "
            f"iterations (duality-gap residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


class AssemblyError(LosnetError):
    """Constraint assembly received inconsistent inputs (e.g. a tree edge without an ellipsoid)."""


class ConnectivityLossError(LosnetError):
    """A spanning tree was requested over a disconnected graph."""

    def __init__(self, components: list[list[int]]):
        parts = "; ".join("{" + ",".join(map(str, c)) + "}" for c in components)
        super().__init__(f"graph is disconnected into {len(components)} components: {parts}")
        self.components = components


class WeightOrderingError(LosnetError):
    """The calibrated edge weights do not realize the required subgroup-priority ordering."""


class ScenarioValidationError(LosnetError):
    """A scenario violates one or more load-time invariants. Carries every violation at once."""

    def __init__(self, violations: list[str]):
        super().__init__(
            "scenario validation failed:\n" + "\n".join(f"  - {v}" for v in violations)
        )
        self.violations = violations


class InternalInvariantError(LosnetError):
    """An internal consistency guarantee was broken; indicates a bug, not bad user input."""
