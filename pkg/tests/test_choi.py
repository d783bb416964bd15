"""
Unit tests for Choi operators, instruments and channel composition.
"""
import pytest
import sys
import os

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.choi import (
    ChoiOperator, Instrument, Povm, apply_channel, choi_vector_of_unitary, clifford_unitaries,
    depolarizing_choi, kraus_choi, link_channels, measure_reprepare, random_channel, random_state,
    replacement_choi, unitary_choi,
)
from core.models import ValidationError
from core.qsys import HADAMARD, KET_0, KET_1, KET_PLUS, PAULI_X, PAULI_Z, projector


class TestUnitaryChoi:
    """Tests for Choi operators of unitaries."""

    def test_identity_vector(self):
        """Test |I⟩⟩ = |00⟩ + |11⟩."""
        assert np.allclose(choi_vector_of_unitary(np.eye(2)), [1, 0, 0, 1])

    def test_x_vector(self):
        """Test |X⟩⟩ = |01⟩ + |10⟩."""
        assert np.allclose(choi_vector_of_unitary(PAULI_X), [0, 1, 1, 0])

    def test_non_unitary_rejected(self):
        """Test a non-unitary matrix raises ValidationError."""
        with pytest.raises(ValidationError):
            choi_vector_of_unitary(np.array([[1, 1], [0, 1]]))

    def test_unitary_channel_is_cptp(self):
        """Test the Choi operator of a unitary is CP and TP with trace d."""
        c = unitary_choi(HADAMARD)
        assert c.is_cp()
        assert c.is_tp()
        assert np.trace(c.matrix).real == pytest.approx(2.0)

    def test_apply_unitary(self, rng):
        """Test applying a unitary Choi matches U ρ U†."""
        rho = random_state(2, rng)
        out = apply_channel(unitary_choi(HADAMARD), rho)
        assert np.allclose(out, HADAMARD @ rho @ HADAMARD.conj().T)


class TestChannels:
    """Tests for Kraus, depolarizing, replacement and random channels."""

    def test_kraus_matches_unitary(self):
        """Test a single Kraus operator gives the unitary Choi operator."""
        assert np.allclose(kraus_choi([PAULI_Z]).matrix, unitary_choi(PAULI_Z).matrix)

    def test_fully_depolarizing(self, rng):
        """Test the fully depolarizing channel outputs I/d."""
        out = depolarizing_choi(2).apply(random_state(2, rng))
        assert np.allclose(out, np.eye(2) / 2)

    def test_replacement(self, rng):
        """Test the replacement channel outputs σ for any input."""
        sigma = projector(KET_PLUS)
        out = replacement_choi(sigma).apply(random_state(2, rng))
        assert np.allclose(out, sigma)

    def test_random_channel_is_cptp(self, rng):
        """Test a random dilated channel is CP and TP."""
        c = random_channel(2, rng)
        assert c.is_cp()
        assert c.is_tp()

    def test_apply_dimension_mismatch(self):
        """Test applying to a state of the wrong size raises ValidationError."""
        with pytest.raises(ValidationError):
            apply_channel(unitary_choi(np.eye(2)), np.eye(4) / 4)

    def test_choi_shape_checked(self):
        """Test a Choi matrix of the wrong shape raises ValidationError."""
        with pytest.raises(ValidationError):
            ChoiOperator(np.eye(3), 2, 2)

    def test_link_product_composes(self, rng):
        """Test link_channels(A, B) applies A then B."""
        first, second = random_channel(2, rng), random_channel(2, rng)
        rho = random_state(2, rng)
        linked = link_channels(first, second)
        assert np.allclose(linked.apply(rho), second.apply(first.apply(rho)))

    def test_link_dimension_mismatch(self):
        """Test linking incompatible dimensions raises ValidationError."""
        with pytest.raises(ValidationError):
            link_channels(unitary_choi(np.eye(2)), unitary_choi(np.eye(4)))


class TestInstruments:
    """Tests for measure-and-reprepare instruments and POVMs."""

    def test_measure_reprepare_probability(self):
        """Test Tr of the output equals the outcome probability."""
        element = measure_reprepare(projector(KET_0), projector(KET_PLUS))
        out = element.apply(projector(KET_PLUS))
        assert np.trace(out).real == pytest.approx(0.5)
        assert np.allclose(out / np.trace(out), projector(KET_PLUS))

    def test_measure_reprepare_rejects_bad_state(self):
        """Test a repreparation that is not a density matrix raises ValidationError."""
        with pytest.raises(ValidationError):
            measure_reprepare(projector(KET_0), 2 * projector(KET_1))

    def test_complete_instrument_validates(self):
        """Test Z measurement followed by any repreparation is a valid instrument."""
        instrument = Instrument([
            measure_reprepare(projector(KET_0), projector(KET_PLUS)),
            measure_reprepare(projector(KET_1), projector(KET_0)),
        ])
        instrument.validate()
        assert instrument.total().is_tp()

    def test_incomplete_instrument_rejected(self):
        """Test an instrument whose effects do not sum to I raises ValidationError."""
        instrument = Instrument([measure_reprepare(projector(KET_0), projector(KET_0))])
        with pytest.raises(ValidationError):
            instrument.validate()

    def test_povm_validation(self):
        """Test a projective POVM passes and a half POVM fails."""
        Povm([projector(KET_0), projector(KET_1)]).validate()
        with pytest.raises(ValidationError):
            Povm([projector(KET_0)]).validate()


class TestCliffords:
    """Tests for the single-qubit Clifford group."""

    def test_count(self):
        """Test there are 24 Cliffords up to phase."""
        assert len(clifford_unitaries()) == 24

    def test_all_unitary(self):
        """Test every element is unitary."""
        for u in clifford_unitaries():
            assert np.allclose(u.conj().T @ u, np.eye(2))

    def test_chois_are_distinct(self):
        """Test no two Cliffords give the same channel."""
        chois = [unitary_choi(u).matrix for u in clifford_unitaries()]
        for i in range(len(chois)):
            for j in range(i):
                assert not np.allclose(chois[i], chois[j])
