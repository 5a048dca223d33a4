"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class RegistrationError(Exception):
    """Base class for every error raised by this package."""


class DegenerateInput(RegistrationError):
    """Geometric primitive cannot be computed (too few or collinear points)."""


class ParseError(RegistrationError):
    """A file could not be parsed; carries the offending line when known."""

    def __init__(self, path: str, message: str, line: int | None = None):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


class EmptyCloud(RegistrationError):
    """Point-cloud file contained zero points."""


class NonPlanarPolygon(RegistrationError):
    def __init__(self, wall_id: str, max_dev: float):
        self.wall_id = wall_id
        self.max_dev = max_dev
        super().__init__(
            f"wall {wall_id!r}: vertices deviate {max_dev:.4g} m from a plane"
        )


class DuplicateId(RegistrationError):
    def __init__(self, wall_id: str):
        self.wall_id = wall_id
        super().__init__(f"duplicate wall id {wall_id!r}")


class InconsistentDimensions(RegistrationError):
    """Grid payload does not match the declared header dimensions."""


class IoError(RegistrationError):
    """Failure writing an output artifact."""


class NoVerticalWalls(RegistrationError):
    """Every wall in the model was rejected as non-vertical."""


class NoCoverage(RegistrationError):
    """All points fall over nodata cells of the terrain grid."""


class NoValidFacade(RegistrationError):
    """First plane extracted from a neighbourhood already fails the facade test."""


class NoCandidates(RegistrationError):
    """No facade-like plane could be extracted from a subspace."""


class ModelNormalMismatch(RegistrationError):
    def __init__(self, wall_id: str, angle_deg: float):
        self.wall_id = wall_id
        self.angle_deg = angle_deg
        super().__init__(
            f"wall {wall_id!r}: extracted segment normal deviates "
            f"{angle_deg:.2f} deg from the model plane"
        )


class DegenerateGeometry(RegistrationError):
    """Correspondence geometry does not determine the transformation."""


class RankDeficient(RegistrationError):
    """Vertical translation is unobservable from the supplied correspondences."""


class NoConvergence(RegistrationError):
    def __init__(self, iterations: int, state=None):
        self.iterations = iterations
        self.state = state
        super().__init__(f"adjustment did not converge within {iterations} iterations")


class InsufficientPairs(RegistrationError):
    def __init__(self, n_pairs: int, min_pairs: int):
        self.n_pairs = n_pairs
        self.min_pairs = min_pairs
        super().__init__(
            f"only {n_pairs} vertical correspondences found (need {min_pairs})"
        )


class NoNeighbors(RegistrationError):
    """A projection cylinder contained no cloud points."""

    def __init__(self, points=None):
        self.points = points
        n = 0 if points is None else len(points)
        super().__init__(f"empty projection cylinder at {n} check point(s)")
