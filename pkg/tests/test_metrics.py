"""
Tests for fidelity, the commutation game and Monte Carlo error bars.
"""
import pytest
import sys
import os

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.choi import random_unitary
from core.metrics import (
    GamePair, GameSpec, MonteCarloConfig, fidelity, game_success, monte_carlo_errorbars,
    pauli_game, sampling_deviation,
)
from core.models import LayoutError, SettingFamily, ValidationError
from core.procmat import ProcessMatrix, switch_simplified, white_noise_process
from core.qsys import FULL_SWITCH_LAYOUT, HADAMARD, KET_0, PAULI_X, PAULI_Z, projector
from core.simlab import exact_probabilities


class TestFidelity:
    """Tests for the Uhlmann fidelity."""

    def test_identical(self):
        """Test F(W, W) = 1 for the |+⟩ SWITCH."""
        w = switch_simplified("plus")
        assert fidelity(w, w) == pytest.approx(1.0, abs=1e-9)

    def test_pure_against_mixed(self):
        """Test F(|0⟩⟨0|, I/2) = √½."""
        assert fidelity(projector(KET_0), np.eye(2) / 2) == pytest.approx(np.sqrt(0.5))

    def test_orthogonal(self):
        """Test orthogonal states have zero fidelity."""
        assert fidelity(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])) == pytest.approx(0.0, abs=1e-12)

    def test_trace_normalization(self):
        """Test unnormalized arguments are divided by their trace."""
        assert fidelity(3 * projector(KET_0), np.eye(2)) == pytest.approx(np.sqrt(0.5))

    def test_symmetric(self, switch_y):
        """Test F(ρ, σ) = F(σ, ρ)."""
        noise = white_noise_process()
        assert fidelity(switch_y, noise) == pytest.approx(fidelity(noise, switch_y), abs=1e-9)

    def test_unitary_invariance(self, rng):
        """Test conjugating both arguments by one unitary keeps F."""
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho, sigma = a @ a.conj().T, b @ b.conj().T
        u = random_unitary(4, rng)
        rotated = fidelity(u @ rho @ u.conj().T, u @ sigma @ u.conj().T)
        assert rotated == pytest.approx(fidelity(rho, sigma), abs=1e-9)

    def test_layout_mismatch(self, switch_y):
        """Test processes on different layouts raise LayoutError."""
        other = ProcessMatrix(np.eye(256) / 32, FULL_SWITCH_LAYOUT)
        with pytest.raises(LayoutError):
            fidelity(switch_y, other)

    def test_zero_trace(self):
        """Test a zero-trace argument raises ValidationError."""
        with pytest.raises(ValidationError):
            fidelity(np.zeros((2, 2)), np.eye(2))


class TestGame:
    """Tests for the commutation game."""

    def test_pair_relations(self):
        """Test Pauli pairs are classified by their bracket."""
        game = pauli_game()
        relations = {pair.name: pair.relation for pair in game.pairs}
        assert len(relations) == 10
        assert relations["XY"] == "anticommute"
        assert relations["XZ"] == "anticommute"
        assert relations["IX"] == "commute"
        assert relations["ZZ"] == "commute"

    def test_unbracketed_pair(self):
        """Test a pair that neither commutes nor anticommutes raises ValidationError."""
        with pytest.raises(ValidationError):
            GamePair("HX", HADAMARD, PAULI_X)

    def test_perfect_visibility(self):
        """Test every pair is won with certainty at v² = 1."""
        result = game_success(pauli_game(1.0))
        assert result.success == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(result.table["p_correct"], 1.0, atol=1e-9)

    def test_reduced_visibility(self):
        """Test at v² = 0.97 each pair gives ½(1 + √0.97)."""
        result = game_success(pauli_game(0.97))
        expected = 0.5 * (1 + np.sqrt(0.97))
        assert result.success == pytest.approx(expected, abs=1e-9)
        assert 0.95 <= result.success <= 1.0

    def test_zero_visibility(self):
        """Test without coherence the control carries no information."""
        assert game_success(pauli_game(0.0)).success == pytest.approx(0.5)

    def test_custom_target(self):
        """Test the success does not depend on the target state for Pauli pairs."""
        spec = GameSpec([GamePair("XZ", PAULI_X, PAULI_Z)], 1.0, target=np.array([0.6, 0.8]))
        assert game_success(spec).success == pytest.approx(1.0)

    @pytest.mark.parametrize("visibility_sq", [-0.1, 1.2])
    def test_invalid_visibility(self, visibility_sq):
        """Test visibilities outside [0, 1] raise ValidationError."""
        with pytest.raises(ValidationError):
            GameSpec(pauli_game().pairs, visibility_sq)

    def test_result_dict(self):
        """Test the JSON form lists every pair."""
        payload = game_success(pauli_game()).to_dict()
        assert len(payload["pairs"]) == 10
        assert {"pair", "relation", "p_correct"} <= set(payload["pairs"][0])


class TestMonteCarlo:
    """Tests for sampling deviation and Monte Carlo error bars."""

    def test_sampling_deviation_zero(self, exact_restricted):
        """Test a table has zero deviation from itself."""
        assert sampling_deviation(exact_restricted, exact_restricted) == 0.0

    def test_sampling_deviation_family(self, exact_restricted, exact_full):
        """Test tables of different families raise ValidationError."""
        with pytest.raises(ValidationError):
            sampling_deviation(exact_restricted, exact_full)

    def test_invalid_trials(self):
        """Test zero trials raise ValidationError."""
        with pytest.raises(ValidationError):
            MonteCarloConfig(trials=0)

    def test_process_matrix_source(self, switch_y):
        """Test a ProcessMatrix is used as given and an unknown preset fails on construction."""
        config = MonteCarloConfig(process=switch_y, shots=50, trials=1, reconstruct=False)
        assert config.process is switch_y
        frame, _ = monte_carlo_errorbars(config)
        assert len(frame) == 1
        with pytest.raises(ValidationError):
            MonteCarloConfig(process="w.json")

    def test_sampling_only(self):
        """Test a run without reconstruction reports sampling columns per trial."""
        config = MonteCarloConfig(shots=100, jitter_deg=1.0, trials=3, seed=4, reconstruct=False)
        frame, summary = monte_carlo_errorbars(config)
        assert len(frame) == 3
        assert set(summary) == {"sampling_deviation", "stat_error"}
        assert summary["sampling_deviation"]["mean"] > 0
        assert summary["stat_error"]["std"] >= 0

    def test_reproducible(self):
        """Test the same seed repeats every trial exactly."""
        config = MonteCarloConfig(shots=50, jitter_deg=1.0, trials=2, seed=9, reconstruct=False)
        first, _ = monte_carlo_errorbars(config)
        second, _ = monte_carlo_errorbars(config)
        assert first.equals(second)

    def test_spread_shrinks_with_shots(self):
        """Test the sampling deviation falls roughly as 1/√shots."""
        means = []
        for shots in (100, 400, 1600):
            config = MonteCarloConfig(shots=shots, jitter_deg=0.0, trials=3, seed=1, reconstruct=False)
            means.append(monte_carlo_errorbars(config)[1]["sampling_deviation"]["mean"])
        assert means[0] > means[1] > means[2]
        assert 3.0 < means[0] / means[2] < 5.0

    def test_exact_process_reference(self, switch_y):
        """Test the reference table is the preset's exact table."""
        exact = exact_probabilities(switch_y, SettingFamily.RESTRICTED)
        assert np.allclose(exact.group_sums(), 1.0)

    @pytest.mark.slow
    def test_shot_noise_reconstruction(self):
        """Test 1600-shot trials reconstruct with high fidelity and a residual on the statistical scale."""
        config = MonteCarloConfig(shots=1600, jitter_deg=0.0, trials=2, seed=0)
        frame, summary = monte_carlo_errorbars(config)
        assert (frame["fidelity"] >= 0.97).all()
        ratio = frame["residual"] / frame["stat_error"]
        assert ((ratio > 1 / 3) & (ratio < 3)).all()
        assert "fidelity" in summary
