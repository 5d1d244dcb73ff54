"""Exception and warning types raised by ampmetro."""


class ConvergenceError(RuntimeError):
    """A truncated sum could not reach the requested tolerance.

    Raised instead of silently returning a truncated result.
    """

    def __init__(self, message, cutoff=None, tail=None):
        super().__init__(message)
        self.cutoff = cutoff
        self.tail = tail


class InsensitivePointError(ValueError):
    """The photon-difference signal has zero slope at the requested phase."""


class PosteriorUnderflowError(FloatingPointError):
    """Every posterior weight underflowed to zero."""


class ModelMismatchWarning(UserWarning):
    """Parameters carry information the selected count model ignores."""


class PoissonRegimeWarning(UserWarning):
    """Detected photon numbers are outside the weak-signal Poissonian regime."""


class MultimodalPosteriorWarning(UserWarning):
    """Posterior mass is split across separated modes."""
