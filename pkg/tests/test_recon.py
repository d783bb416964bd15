"""
Tests for reconstruction, worst-case tomography and the epsilon sweeps.
"""
import pytest
import sys
import os

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.causal import Witness, optimal_witness
from core.conic import SolverOptions
from core.metrics import fidelity
from core.models import NoiseType, SeparabilityDefinition, SettingFamily, SolverStatus, ValidationError
from core.procmat import mixture_process, validity_projector, white_noise_process
from core.qsys import PAULI_X, kron, trace_inner
from core.recon import (
    RESIDUAL_SLACK, crossing_epsilon, default_eps_grid, future_x_operator, parse_eps_grid,
    probability_comparison, reconstruct, residual, sweep_worst_case, worst_case,
)
from core.simlab import NoiseModel, normalize, simulate_counts
from core.tomoset import BornMatrix

RESTRICTED = SettingFamily.RESTRICTED
SOLVER = SolverOptions(eps_abs=1e-7, eps_rel=1e-7, max_iter=20000)


def dummy_witness(family=RESTRICTED):
    return Witness(np.eye(64), np.zeros(family.count), NoiseType.WHITE,
                   SeparabilityDefinition.CONVEX_MIXTURE, family)


@pytest.fixture(scope="module")
def noisy_restricted(switch_y):
    """Restricted-family table of the SWITCH at 1600 shots per configuration."""
    return normalize(simulate_counts(switch_y, RESTRICTED, NoiseModel(shots=1600), seed=1))


@pytest.fixture(scope="module")
def noisy_fit(noisy_restricted):
    return reconstruct(noisy_restricted, options=SOLVER)


@pytest.fixture(scope="module")
def restricted_witness(switch_y):
    return optimal_witness(switch_y, RESTRICTED, NoiseType.GENERALIZED,
                           SeparabilityDefinition.CONVEX_MIXTURE, SOLVER)


class TestResidual:
    """Tests for the mean absolute deviation."""

    def test_future_x_operator(self):
        """Test the operator is I ⊗ X on the control future."""
        assert np.allclose(future_x_operator(), kron(np.eye(32), PAULI_X))

    def test_switch_has_no_future_x(self, switch_y):
        """Test Tr(W·X_F) vanishes for the |y−⟩ SWITCH."""
        assert trace_inner(future_x_operator(), switch_y.matrix) == pytest.approx(0.0, abs=1e-12)

    def test_exact_table(self, switch_y, exact_restricted):
        """Test the generating process has zero residual."""
        assert residual(switch_y, exact_restricted) == pytest.approx(0.0, abs=1e-12)

    def test_other_process(self, exact_restricted):
        """Test white noise does not fit the SWITCH data."""
        assert residual(white_noise_process(), exact_restricted) > 1e-3

    def test_family_mismatch(self, switch_y, exact_restricted):
        """Test asking for another family raises ValidationError."""
        with pytest.raises(ValidationError):
            residual(switch_y, exact_restricted, SettingFamily.FULL)

    def test_probability_comparison(self, switch_y, exact_restricted):
        """Test the comparison table has zero deviation for the true process."""
        frame = probability_comparison(switch_y, exact_restricted)
        assert {"p_exp", "p_model", "deviation"} <= set(frame.columns)
        assert len(frame) == 9216
        assert np.allclose(frame["deviation"], 0.0, atol=1e-12)


class TestEpsilonGrids:
    """Tests for ε grid helpers."""

    def test_default_grid(self):
        """Test the default grid runs from r to 0.015 in steps of 5e-4."""
        grid = default_eps_grid(0.01)
        assert len(grid) == 11
        assert grid[0] == pytest.approx(0.01)
        assert grid[-1] == pytest.approx(0.015)

    def test_default_grid_above_stop(self):
        """Test a residual past the stop value gives a one-point grid."""
        assert list(default_eps_grid(0.02)) == [0.02]

    def test_parse(self):
        """Test start:end:step includes the end point."""
        assert np.allclose(parse_eps_grid("0:0.01:0.005"), [0.0, 0.005, 0.01])

    @pytest.mark.parametrize("text", ["0.01", "a:b:c", "0.02:0.01:0.001", "0:0.01:0"])
    def test_parse_invalid(self, text):
        """Test malformed grids raise ValidationError."""
        with pytest.raises(ValidationError):
            parse_eps_grid(text)

    def test_crossing(self):
        """Test the zero crossing is linearly interpolated."""
        sweep = pd.DataFrame({
            "witness": ["g"] * 3 + ["h"] * 2,
            "epsilon": [0.0, 1.0, 2.0, 0.0, 1.0],
            "status": ["Optimal"] * 5,
            "value": [-1.0, -0.5, 0.5, -2.0, -1.0],
        })
        assert crossing_epsilon(sweep, "g") == pytest.approx(1.5)
        assert crossing_epsilon(sweep, "h") is None

    def test_crossing_skips_infeasible(self):
        """Test infeasible points (no value) are ignored."""
        sweep = pd.DataFrame({
            "witness": ["g"] * 3,
            "epsilon": [0.0, 1.0, 2.0],
            "status": ["Infeasible", "Optimal", "Optimal"],
            "value": [np.nan, 0.25, 1.0],
        })
        assert crossing_epsilon(sweep, "g") == pytest.approx(1.0)


class TestWorstCaseChecks:
    """Fast argument checks of worst_case."""

    def test_negative_epsilon(self, exact_restricted):
        """Test a negative budget raises ValidationError."""
        with pytest.raises(ValidationError):
            worst_case(exact_restricted, dummy_witness(), -0.1)

    def test_family_mismatch(self, exact_restricted):
        """Test a witness from another family raises ValidationError."""
        with pytest.raises(ValidationError):
            worst_case(exact_restricted, dummy_witness(SettingFamily.FULL), 0.01)

    def test_below_attainable_residual(self, exact_restricted):
        """Test ε below the known minimal deviation is infeasible without solving."""
        result = worst_case(exact_restricted, dummy_witness(), 0.001, min_residual=0.002)
        assert result.status is SolverStatus.INFEASIBLE
        assert not result.feasible
        assert np.isnan(result.value)


@pytest.mark.slow
class TestReconstruction:
    """Reconstruction of SWITCH data."""

    def test_noiseless_full_round_trip(self, switch_y, exact_full):
        """Test exact full-family data reconstruct the SWITCH."""
        result = reconstruct(exact_full, options=SOLVER)
        assert result.residual <= 1e-5
        assert fidelity(result.process, switch_y) >= 0.999
        assert result.process.check(validity_projector()).valid

    def test_restricted_with_and_without_future_x(self, exact_restricted):
        """Test imposing Tr(W·X_F) = 0 barely changes a restricted reconstruction."""
        plain = reconstruct(exact_restricted, options=SOLVER)
        imposed = reconstruct(exact_restricted, impose_future_x=True, options=SOLVER)
        assert imposed.impose_future_x
        assert abs(trace_inner(future_x_operator(), imposed.process.matrix)) < 1e-9
        assert fidelity(plain.process, imposed.process) >= 0.9999

    def test_shot_noise(self, switch_y, noisy_fit):
        """Test 1600 shots per configuration still give a faithful process."""
        assert noisy_fit.process.check(validity_projector()).valid
        assert fidelity(noisy_fit.process, switch_y) >= 0.97
        assert 0 < noisy_fit.residual < 0.02
        assert noisy_fit.to_dict()["family"] == "restricted"


@pytest.mark.slow
class TestWorstCase:
    """Worst-case witness values over the ε grid."""

    def test_infeasible_below_residual(self, noisy_restricted, noisy_fit, restricted_witness):
        """Test ε just below r is infeasible even when solved."""
        born = BornMatrix(RESTRICTED)
        result = worst_case(noisy_restricted, restricted_witness, 0.5 * noisy_fit.residual, SOLVER, born)
        assert not result.feasible

    def test_epsilon_within_slack_is_solved(self, noisy_restricted, noisy_fit, restricted_witness):
        """Test ε a fraction of the slack below r goes to the solver instead of the unsolved shortcut."""
        r = noisy_fit.residual
        result = worst_case(noisy_restricted, restricted_witness, r - 0.5 * RESIDUAL_SLACK, SOLVER,
                            min_residual=r)
        assert "iterations" in result.diagnostics
        assert result.diagnostics["iterations"] >= 1

    def test_monotone_sweep(self, noisy_restricted, noisy_fit, restricted_witness):
        """Test the sweep is feasible from r on and nondecreasing in ε."""
        r = noisy_fit.residual
        grid = [0.5 * r, r, r + 0.002, r + 0.004]
        sweep = sweep_worst_case(noisy_restricted, [restricted_witness], grid, SOLVER, min_residual=r)
        assert list(sweep["status"])[0] == "Infeasible"
        feasible = sweep.iloc[1:]
        assert all(status != "Infeasible" for status in feasible["status"])
        values = feasible["value"].to_numpy()
        assert np.all(np.diff(values) >= -1e-4)
        # starts near the reconstruction's own witness value
        assert values[0] >= restricted_witness.evaluate(noisy_fit.process) - 1e-3

    def test_separable_data(self, switch_y, separable_mixture):
        """Test a separable source never looks non-separable in the worst case."""
        # white-noise witness: Tr(G·1_W) = 1, so the noisy mixture sits well inside
        witness = optimal_witness(switch_y, RESTRICTED, NoiseType.WHITE,
                                  SeparabilityDefinition.CONVEX_MIXTURE, SOLVER)
        source = mixture_process([0.5, 0.5], [separable_mixture, white_noise_process()], "noisy-mixture")
        p = normalize(simulate_counts(source, RESTRICTED, NoiseModel(shots=1600), seed=2))
        fit = reconstruct(p, options=SOLVER)
        result = worst_case(p, witness, fit.residual, SOLVER, min_residual=fit.residual)
        assert result.feasible
        assert result.value >= 0.0
