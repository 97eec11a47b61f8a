"""Exception hierarchy shared by every stage of the toolkit.

Each class carries a short machine-readable ``code`` that the CLI prints on
stderr, and an ``exit_code`` it returns.
"""

from __future__ import annotations


class RepackError(Exception):
    code = "E_REPACK"
    exit_code = 1


class ValidationError(RepackError, ValueError):
    code = "E_VALIDATION"


class ShapeError(ValidationError):
    code = "E_SHAPE"


class RangeError(ValidationError):
    code = "E_RANGE"


class FormatError(RepackError):
    code = "E_FORMAT"


class TruncatedError(FormatError):
    code = "E_TRUNCATED"


class UnsupportedError(FormatError):
    code = "E_UNSUPPORTED"


class WriteError(RepackError, OSError):
    code = "E_IO"


class DegenerateSpectrumError(ValidationError):
    code = "E_DEGENERATE"


class DivergenceError(RepackError, ArithmeticError):
    """Training produced a non-finite loss."""

    code = "E_DIVERGENCE"
    exit_code = 2

    def __init__(self, where: str, index: int):
        super().__init__(f"non-finite loss at {where} {index}")
        self.where = where
        self.index = index
