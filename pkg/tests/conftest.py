"""
Shared pytest fixtures for switch tomography tests.

Running tests:
    pytest tests/                  - full suite including the semidefinite reproductions (~30 min)
    pytest tests/ -m "not slow"   - fast subset (~1 min, for small changes)
"""
import pytest
import sys
import os

import numpy as np

# Add src directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.models import CausalOrder, SettingFamily
from core.procmat import comb_process, mixture_process, switch_simplified


@pytest.fixture
def rng():
    """Seeded generator so random checks are repeatable."""
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def switch_y():
    """Simplified SWITCH with the control in |y−⟩."""
    return switch_simplified("y-")


@pytest.fixture(scope="session")
def comb_ab():
    """A→B causally ordered process built from identity channels."""
    return comb_process(CausalOrder.A_THEN_B)


@pytest.fixture(scope="session")
def comb_ba():
    """B→A causally ordered process built from identity channels."""
    return comb_process(CausalOrder.B_THEN_A)


@pytest.fixture(scope="session")
def separable_mixture(comb_ab, comb_ba):
    """½W_{A→B} + ½W_{B→A}."""
    return mixture_process([0.5, 0.5], [comb_ab, comb_ba], "mixture-ab-ba")


@pytest.fixture(scope="session")
def exact_full(switch_y):
    """Exact full-family probabilities of the |y−⟩ SWITCH."""
    from core.simlab import exact_probabilities
    return exact_probabilities(switch_y, SettingFamily.FULL)


@pytest.fixture(scope="session")
def exact_restricted(switch_y):
    """Exact restricted-family probabilities of the |y−⟩ SWITCH."""
    from core.simlab import exact_probabilities
    return exact_probabilities(switch_y, SettingFamily.RESTRICTED)


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    """Temporary output directory picked up through the environment."""
    directory = tmp_path / "runs"
    monkeypatch.setenv("SWITCH_TOMOGRAPHY_OUTPUT_DIR", str(directory))
    return directory
