"""
Unit tests for the shared enums and exceptions.
"""
import pytest
import sys
import os

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.models import (
    CausalOrder, LayoutError, NoiseType, SeparabilityDefinition, SettingFamily, SolverError,
    SolverStatus, TomographyError, ValidationError, parse_enum,
)


class TestSettingFamily:
    """Tests for the setting family sizes."""

    def test_full_counts(self):
        """Test the full family has 13824 settings in 6912 configurations."""
        assert SettingFamily.FULL.count == 13824
        assert SettingFamily.FULL.configuration_count == 6912

    def test_restricted_counts(self):
        """Test the restricted family drops one future basis."""
        assert SettingFamily.RESTRICTED.future_bases == 2
        assert SettingFamily.RESTRICTED.count == 9216
        assert SettingFamily.RESTRICTED.configuration_count == 4608


class TestParseEnum:
    """Tests for parse_enum."""

    def test_member_passes_through(self):
        """Test an enum member is returned unchanged."""
        assert parse_enum(NoiseType, NoiseType.WHITE) is NoiseType.WHITE

    def test_value_and_name(self):
        """Test values and case-insensitive names are accepted."""
        assert parse_enum(SeparabilityDefinition, "extended") is SeparabilityDefinition.EXTENDED_CONTROL
        assert parse_enum(SeparabilityDefinition, "convex_mixture") is SeparabilityDefinition.CONVEX_MIXTURE
        assert parse_enum(CausalOrder, " A_then_B ") is CausalOrder.A_THEN_B

    def test_unknown_value(self):
        """Test an unknown value raises ValidationError naming the choices."""
        with pytest.raises(ValidationError, match="white, generalized"):
            parse_enum(NoiseType, "pink")


class TestErrors:
    """Tests for the exception hierarchy."""

    @pytest.mark.parametrize("error", [LayoutError, ValidationError, SolverError])
    def test_common_base(self, error):
        """Test every core error derives from TomographyError."""
        assert issubclass(error, TomographyError)

    def test_validation_is_value_error(self):
        """Test input errors can be caught as ValueError."""
        assert issubclass(ValidationError, ValueError)

    def test_solver_error_status(self):
        """Test SolverError carries the solver status."""
        error = SolverError("no certificate", SolverStatus.MAX_ITER)
        assert error.status is SolverStatus.MAX_ITER
        assert str(error) == "no certificate"
