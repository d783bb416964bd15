"""
Unit tests for run configurations and manifests.
"""
import json
import pytest
import sys
import os

import jsonschema

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.models import NoiseType, SeparabilityDefinition, SettingFamily, ValidationError
from core.runconfig import DEFAULT_OUTPUT_DIR, RunConfig, load_yaml_config, package_versions, write_manifest
from core.simlab import DEFAULT_JITTER_DEG


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "command: simulate\n"
        "family: restricted\n"
        "process: switch-y-\n"
        "noise:\n"
        "  shots: 1600\n"
        "  jitter_deg: 1.0\n"
        "seed: 7\n"
    )
    return path


class TestSources:
    """Tests for merging files and command-line overrides."""

    def test_file_values(self, config_file):
        """Test values come from the YAML file."""
        config = RunConfig.from_sources("simulate", config_file)
        assert config.family is SettingFamily.RESTRICTED
        assert config.seed == 7
        noise = config.noise_model()
        assert (noise.shots, noise.jitter_deg) == (1600, 1.0)

    def test_overrides_win(self, config_file):
        """Test flags override the file and unset flags keep it."""
        config = RunConfig.from_sources("simulate", config_file,
                                        {"seed": 11, "family": None, "noise": {"shots": 100, "jitter_deg": None}})
        assert config.seed == 11
        assert config.family is SettingFamily.RESTRICTED
        assert config.noise_model().shots == 100
        assert config.noise_model().jitter_deg == 1.0

    def test_command_mismatch(self, config_file):
        """Test a file written for another command raises ValidationError."""
        with pytest.raises(ValidationError):
            RunConfig.from_sources("reconstruct", config_file)

    def test_empty_file(self, tmp_path):
        """Test an empty YAML file is an empty mapping."""
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_yaml_config(path) == {}

    def test_non_mapping(self, tmp_path):
        """Test a YAML list raises ValidationError."""
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ValidationError):
            load_yaml_config(path)


class TestSchema:
    """Tests for schema validation."""

    def test_unknown_key(self):
        """Test unknown keys are rejected."""
        with pytest.raises(jsonschema.ValidationError):
            RunConfig({"command": "game", "shots": 10})

    def test_unknown_solver_key(self):
        """Test unknown solver options are rejected."""
        with pytest.raises(jsonschema.ValidationError):
            RunConfig({"command": "witness", "solver": {"tolerance": 1e-6}})

    @pytest.mark.parametrize("grid", ["0.01", "a:b:c"])
    def test_eps_grid_pattern(self, grid):
        """Test ε grids must look like start:end:step."""
        with pytest.raises(jsonschema.ValidationError):
            RunConfig({"command": "worst-case", "eps_grid": grid})

    def test_visibility_range(self):
        """Test v² above one is rejected."""
        with pytest.raises(jsonschema.ValidationError):
            RunConfig({"command": "game", "noise": {"visibility_sq": 1.5}})


class TestDefaults:
    """Tests for defaults and derived values."""

    def test_defaults(self):
        """Test a bare config falls back to full family, white noise and convex mixtures."""
        config = RunConfig({"command": "witness"})
        assert config.family is SettingFamily.FULL
        assert config.noise_type is NoiseType.WHITE
        assert config.definition is SeparabilityDefinition.CONVEX_MIXTURE
        assert config.seed is None
        assert config.noise_model().analytic

    def test_sampled_runs_default_to_jitter(self):
        """Test shots without an explicit jitter use DEFAULT_JITTER_DEG, analytic runs none."""
        sampled = RunConfig({"command": "simulate", "noise": {"shots": 1600}}).noise_model()
        assert sampled.jitter_deg == DEFAULT_JITTER_DEG == 1.0
        analytic = RunConfig({"command": "simulate", "noise": {"visibility_sq": 0.9}}).noise_model()
        assert analytic.jitter_deg == 0.0
        explicit = RunConfig({"command": "simulate", "noise": {"shots": 1600, "jitter_deg": 0.0}}).noise_model()
        assert explicit.jitter_deg == 0.0

    def test_output_dir_from_environment(self, output_dir):
        """Test the environment variable sets the output directory."""
        assert RunConfig({"command": "game"}).output_dir == str(output_dir)

    def test_output_dir_default(self, monkeypatch):
        """Test the output directory defaults to ./data/runs."""
        monkeypatch.delenv("SWITCH_TOMOGRAPHY_OUTPUT_DIR", raising=False)
        assert RunConfig({"command": "game"}).output_dir == DEFAULT_OUTPUT_DIR

    def test_solver_options(self):
        """Test config solver values override per-problem defaults."""
        config = RunConfig({"command": "witness", "solver": {"max_iter": 123}})
        options = config.solver_options(max_iter=10, eps_abs=1e-5)
        assert options.max_iter == 123
        assert options.eps_abs == 1e-5

    def test_config_hash(self):
        """Test the hash ignores key order and changes with values."""
        first = RunConfig({"command": "game", "seed": 1, "family": "full"})
        second = RunConfig({"family": "full", "seed": 1, "command": "game"})
        third = RunConfig({"command": "game", "seed": 2, "family": "full"})
        assert first.config_hash() == second.config_hash()
        assert first.config_hash() != third.config_hash()
        assert len(first.config_hash()) == 64


class TestManifest:
    """Tests for write_manifest."""

    def test_contents(self, tmp_path):
        """Test the manifest records config, hash, seeds, noise, outputs and versions."""
        config = RunConfig({"command": "simulate", "seed": 3, "output_dir": str(tmp_path)})
        path = write_manifest(config, ["b.csv", "a.csv"])
        assert path == os.path.join(str(tmp_path), "manifest.json")
        with open(path) as file:
            manifest = json.load(file)
        assert manifest["command"] == "simulate"
        assert manifest["config"]["seed"] == 3
        assert manifest["config_sha256"] == config.config_hash()
        assert manifest["seeds"] == {"seed": 3}
        assert manifest["noise"] == {"shots": None, "jitter_deg": 0.0, "visibility_sq": 1.0}
        assert manifest["outputs"] == ["a.csv", "b.csv"]
        assert "numpy" in manifest["versions"]
        assert manifest["created_utc"]

    def test_package_versions(self):
        """Test missing packages are reported rather than raising."""
        versions = package_versions(["numpy", "surely-not-a-package"])
        assert "python" in versions
        assert versions["surely-not-a-package"] == "not installed"
