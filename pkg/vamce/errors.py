from typing import Optional


class VamceError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(VamceError, ValueError):
    pass


class DomainError(VamceError, ArithmeticError):
    pass


class FormatError(VamceError, ValueError):
    """Unreadable or incompatible file (wav, model, dictionary)."""


class NumericalError(VamceError, ArithmeticError):
    """
    A non-finite value appeared. `diagnostics` holds whatever the raising site
    could gather (iteration, offending statistic, ...).
    """

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self):
        msg = super().__str__()
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            msg = f"{msg} ({details})"
        return msg


class TrainingDivergedError(NumericalError):
    def __init__(self, message: str, last_good=None, diagnostics: Optional[dict] = None):
        super().__init__(message, diagnostics)
        self.last_good = last_good


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def exit_code_for(exc: BaseException) -> int:
    # pydantic is imported lazily so this module stays dependency free
    from pydantic import ValidationError

    if isinstance(exc, (ValidationError, ShapeError)):
        return EXIT_USAGE
    if isinstance(exc, (NumericalError, DomainError)):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, FormatError)):
        return EXIT_IO
    if isinstance(exc, ValueError):
        return EXIT_USAGE
    return 1
