class StylizerError(Exception):
    """Base class for errors the CLI reports as a diagnostic"""


class SingularSolveError(StylizerError):
    """The thin-plate-spline linear system could not be solved"""


class UndefinedDirectionError(StylizerError, ValueError):
    """A direction vector has zero norm, so its cosine is undefined"""


class NonFiniteLossError(StylizerError, FloatingPointError):
    """A loss component is NaN or infinite"""

    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        super().__init__(f"Loss term '{term}' is not finite ({value})")


class MissingBackendError(StylizerError):
    """A required pretrained network or encoder is not available"""

    def __init__(self, *backends: str):
        self.backends = list(backends)
        super().__init__(f"Missing backend(s): {', '.join(self.backends)}")


class BundleFormatError(StylizerError):
    """An adapted-model bundle or checkpoint is malformed"""
