"""Exception types shared across the package.

Everything derives from :class:`GazeError` so callers (and the CLI) can catch
one type. Most also derive from ``ValueError`` since they signal bad input.
"""


class GazeError(Exception):
    pass


class ZeroVector(GazeError, ValueError):
    pass


class OffPlane(GazeError, ValueError):
    pass


class Parallel(GazeError, ValueError):
    pass


class BehindOrigin(GazeError, ValueError):
    pass


class BehindCamera(GazeError, ValueError):
    pass


class InvalidExtrinsics(GazeError, ValueError):
    pass


class Degenerate(GazeError, ValueError):
    pass


class DegenerateRoll(Degenerate):
    pass


class NoConvergence(GazeError, RuntimeError):
    """Iterative solver stopped without meeting its criteria.

    ``result`` carries the best-so-far estimate, ``residual`` its cost.
    """

    def __init__(self, message, result=None, residual=None):
        super().__init__(message)
        self.result = result
        self.residual = residual


class SingularWarp(GazeError, ValueError):
    pass


class GimbalLock(GazeError, ValueError):
    pass


class EmptyTable(GazeError, ValueError):
    pass


class EmptyMask(GazeError, ValueError):
    pass


class ShapeMismatch(GazeError, ValueError):
    pass


class TokenCountMismatch(ShapeMismatch):
    pass


class EmptyDataset(GazeError, ValueError):
    pass


class TooFewSamples(GazeError, ValueError):
    pass


class TooFewPoses(GazeError, ValueError):
    pass


class BoardOffScreen(GazeError, ValueError):
    pass


class BadConfig(GazeError, ValueError):
    pass


class SchemaError(GazeError, ValueError):
    """Raised when a subject file does not match the on-disk schema.

    ``problems`` lists one entry per offending key; entries may be strings
    or violation records with a ``key`` attribute.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(str(p) for p in self.problems))

    @property
    def keys(self) -> list:
        return [getattr(p, "key", p) for p in self.problems]
