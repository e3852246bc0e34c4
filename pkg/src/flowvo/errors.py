"""Exception types shared across the odometry front-end."""


class VOError(Exception):
    """Base class for all front-end errors."""


class InvalidInput(VOError, ValueError):
    pass


class NearSingularRotation(VOError, ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class OutOfBounds(VOError, IndexError):
    pass


class InsufficientMatches(VOError):
    """Fewer correspondences than the minimal epipolar sample."""


class InsufficientData(VOError):
    """Too few 3D-2D correspondences for pose refinement."""


class Diverged(VOError):
    pass


class DegenerateGeometry(VOError):
    pass


class InsufficientOverlap(VOError):
    """Not enough timestamp-associated poses for evaluation."""


class MissingFile(VOError, FileNotFoundError):
    pass


class MalformedLine(VOError, ValueError):
    def __init__(self, path, line_number, line):
        self.path = str(path)
        self.line_number = line_number
        self.line = line
        super().__init__(f"{self.path}:{line_number}: malformed line: {line!r}")


class NonUnitQuaternion(MalformedLine):
    pass


class ConfigError(VOError, ValueError):
    """Unknown key or unparsable value in a pipeline configuration."""
