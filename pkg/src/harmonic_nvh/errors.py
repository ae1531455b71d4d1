"""Exception types raised across the package."""


class HarmonicControlError(Exception):
    """Base class for all package errors."""


class UsageError(HarmonicControlError, ValueError):
    """An operation was called with inconsistent arguments."""


class SingularityError(HarmonicControlError):
    """The transfer phasor estimate is too close to zero to invert."""


class ConfigurationError(HarmonicControlError, ValueError):
    """A parameter set violates a documented constraint."""


class IdentificationError(HarmonicControlError):
    """Offline LUT identification data is rank deficient."""


class AnalysisError(HarmonicControlError, ValueError):
    """Post-processing input is unusable (e.g. too few samples)."""


class ScenarioError(HarmonicControlError):
    """Malformed scenario file. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.message = message
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)

    def __reduce__(self):
        return type(self), (self.message, self.line, self.path)


class NumericalBlowUp(HarmonicControlError):
    """A simulation state became non-finite."""

    def __init__(self, step: int, what: str):
        self.step = step
        self.what = what
        super().__init__(f"non-finite {what} at step {step}")

    def __reduce__(self):
        return type(self), (self.step, self.what)
