"""Exception types shared across lockloop."""


class DomainError(ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class SingularPointError(ArithmeticError):
    """A closed-loop expression was evaluated where ``1 + G == 0``."""


class LoopInstabilityError(RuntimeError):
    """A simulated loop diverged.

    The ``loop`` attribute names the offending loop (``"inner"`` or ``"outer"``).
    """

    def __init__(self, loop, message):
        super().__init__(f"{loop} loop unstable: {message}")
        self.loop = loop


class NoPeakError(ValueError):
    """A spectrum has no peak to fit."""


class FitConvergenceError(RuntimeError):
    """A lineshape fit did not converge; ``best`` holds the invalid best-so-far fit."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(ValueError):
    """Malformed scenario configuration.  ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        super().__init__(where + message)
        self.path = path
        self.line = line
