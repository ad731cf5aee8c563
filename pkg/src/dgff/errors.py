"""Exception hierarchy shared by all modules.

Every error carries a short machine-readable ``code`` so the command line
driver can emit structured error reports.
"""

from __future__ import annotations


class DGFFError(Exception):
    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class InvalidPartitionError(DGFFError, ValueError):
    code = "invalid-partition"


class DomainError(DGFFError, ValueError):
    code = "domain"


class SizeError(DGFFError, ValueError):
    code = "size"


class PrecisionError(DGFFError, ArithmeticError):
    code = "precision"


class RefinementError(DGFFError, ArithmeticError):
    code = "refinement"


class NumericError(DGFFError, ArithmeticError):
    code = "numeric"


class ParameterError(DGFFError, ValueError):
    code = "parameter"


class CalibrationError(DGFFError):
    code = "calibration"


class FormatError(DGFFError, ValueError):
    code = "format"


class StatisticsError(DGFFError):
    """Too little data for the requested estimate.

    ``max_usable_z`` is set by the tail estimator to the largest grid level
    that still has enough exceedances (``None`` if there is none).
    """

    code = "statistics"

    def __init__(self, message: str, max_usable_z: float | None = None):
        super().__init__(message)
        self.max_usable_z = max_usable_z

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["max_usable_z"] = self.max_usable_z
        return d
