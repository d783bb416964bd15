"""
Shared enums and exceptions used across the tomography core.
"""
from enum import Enum


class TomographyError(Exception):
    """Base class for every error raised by the tomography core."""


class LayoutError(TomographyError, ValueError):
    """Unknown or duplicate factor labels, or a matrix that does not fit its layout."""


class NotHermitianError(TomographyError, ValueError):
    """A Hermitian-only routine received a non-Hermitian matrix."""


class ValidationError(TomographyError, ValueError):
    """Input data failed a physical or structural check."""


class SolverError(TomographyError, RuntimeError):
    """A conic solve could not produce the requested certificate."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class CausalOrder(Enum):
    A_THEN_B = "A_then_B"
    B_THEN_A = "B_then_A"

    def __repr__(self):
        return f"CausalOrder.{self.name}"


class SettingFamily(Enum):
    """Setting-operator families: ideal tomography and the experimentally restricted one."""
    FULL = "full"
    RESTRICTED = "restricted"

    @property
    def future_bases(self) -> int:
        return 3 if self is SettingFamily.FULL else 2

    @property
    def count(self) -> int:
        # 4 past states, 24 instrument elements per party, future bases times 2 outcomes
        return 4 * 24 * 24 * self.future_bases * 2

    @property
    def configuration_count(self) -> int:
        """Distinct experimental configurations when both future outcomes are read at once."""
        return self.count // 2


class NoiseType(Enum):
    WHITE = "white"
    GENERALIZED = "generalized"


class SeparabilityDefinition(Enum):
    CONVEX_MIXTURE = "convex"
    EXTENDED_CONTROL = "extended"


class SolverStatus(Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


def parse_enum(enum_cls, value):
    """Accept an enum member, its value or its name (case-insensitive)."""
    if isinstance(value, enum_cls):
        return value
    text = str(value).strip()
    for member in enum_cls:
        if text == member.value or text.upper() == member.name:
            return member
    choices = ", ".join(member.value for member in enum_cls)
    raise ValidationError(f"Unknown {enum_cls.__name__} '{value}' (expected one of: {choices})")
