"""Exception types raised by the toolkit.

Analysis failures (the physics says "no") derive from ``AnalysisFailure`` so
the command line can map them to exit code 2; everything else is a plain
error (exit code 1).
"""


class RingFloquetError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(RingFloquetError, ValueError):
    """A configuration violates one of its invariants."""


class ParseError(RingFloquetError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IntegratorError(RingFloquetError):
    """The shooting integrator produced a non-finite value."""

    def __init__(self, message, energy=None, x=None):
        self.energy = energy
        self.x = x
        super().__init__(message)


class BracketCollision(RingFloquetError):
    def __init__(self, n, k, roots):
        self.n, self.k, self.roots = n, k, roots
        super().__init__(f"{roots} sign changes in the bracket of band {n} at time index {k}")


class RootNotFound(RingFloquetError):
    def __init__(self, n, k):
        self.n, self.k = n, k
        super().__init__(f"no secular root in the bracket of band {n} at time index {k}")


class DegenerateProjection(RingFloquetError):
    def __init__(self, n, k, norm):
        self.n, self.k, self.norm = n, k, norm
        super().__init__(
            f"projection of the reference function of band {n} at time index {k} "
            f"has norm {norm:.3g} < 0.5; coupling too strong for phase fixing"
        )


class GapTooSmall(RingFloquetError):
    pass


class AliasError(RingFloquetError):
    pass


class OverflowGuard(RingFloquetError):
    pass


class SeriesDivergence(RingFloquetError):
    pass


class UnitarityLoss(RingFloquetError):
    pass


class FiberingDefect(RingFloquetError):
    pass


class AmbiguousNearRational(RingFloquetError):
    pass


class AnalysisFailure(RingFloquetError):
    """Base for negative analysis outcomes; carries the partial report."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class AllResonant(AnalysisFailure):
    pass


class NotConverged(AnalysisFailure):
    pass


class Resonant(AnalysisFailure):
    def __init__(self, message, report=None, witnesses=()):
        self.witnesses = list(witnesses)
        super().__init__(message, report)


class NotResonant(AnalysisFailure):
    pass


class TruncationWarning(UserWarning):
    """A result is sensitive to a finite truncation bound."""
