"""
Synthetic experiments: exact probabilities, finite-shot counts, normalization
and statistical error.

Counts and probabilities are flat arrays in setting enumeration order; each
consecutive block of eight entries is one (x, y, z, w) group over the joint
outcomes (a, b, c).
"""
import logging
from typing import Optional, Union

import numpy as np
import pandas as pd

from core.models import SettingFamily, ValidationError, parse_enum
from core.procmat import ProcessMatrix
from core.tomoset import (
    ENUMERATION_ORDER, SETTING_FIELDS, BornMatrix, family_operators, settings_array,
)

logger = logging.getLogger(__name__)

OUTCOMES_PER_GROUP = 8
AB_CONFIGURATIONS = 4
DEFAULT_JITTER_DEG = 1.0
RNG_ALGORITHM = "PCG64"


class NoiseModel:
    """Shot count per configuration (None = analytic), waveplate jitter and visibility."""

    def __init__(self, shots: Optional[int] = None, jitter_deg: float = 0.0, visibility_sq: float = 1.0):
        if shots is not None and int(shots) < 1:
            raise ValidationError(f"shots must be at least 1, got {shots}")
        if not 0.0 <= float(visibility_sq) <= 1.0:
            raise ValidationError(f"visibility_sq must lie in [0, 1], got {visibility_sq}")
        if float(jitter_deg) < 0:
            raise ValidationError(f"jitter_deg must be non-negative, got {jitter_deg}")
        self.shots = None if shots is None else int(shots)
        self.jitter_deg = float(jitter_deg)
        self.visibility_sq = float(visibility_sq)

    @property
    def analytic(self) -> bool:
        return self.shots is None

    @property
    def group_total(self) -> Optional[int]:
        """Events per (x, y, z, w) group: ``shots`` for each of the four (a, b) configurations."""
        return None if self.shots is None else self.shots * AB_CONFIGURATIONS

    def to_dict(self) -> dict:
        return {"shots": self.shots, "jitter_deg": self.jitter_deg, "visibility_sq": self.visibility_sq}

    def __repr__(self):
        return f"NoiseModel(shots={self.shots}, jitter_deg={self.jitter_deg}, visibility_sq={self.visibility_sq})"


class CountTable:
    """Counts C(abc|xyzw) for every setting of a family, in enumeration order."""

    def __init__(self, family: SettingFamily, counts: np.ndarray, shots: Optional[int] = None,
                 seed: Optional[int] = None):
        family = parse_enum(SettingFamily, family)
        counts = np.asarray(counts, dtype=float)
        if counts.shape != (family.count,):
            raise ValidationError(f"Count table holds {counts.size} entries, family {family.value} needs {family.count}")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ValidationError("Counts must be finite and non-negative")
        self.family = family
        self.counts = counts
        self.shots = shots
        self.seed = seed

    def group_totals(self) -> np.ndarray:
        return self.counts.reshape(-1, OUTCOMES_PER_GROUP).sum(axis=1)

    def to_frame(self) -> pd.DataFrame:
        return _frame(self.family, "count", self.counts)

    def __repr__(self):
        return f"CountTable(family={self.family.value}, shots={self.shots}, seed={self.seed}, total={self.counts.sum():.0f})"


class ProbabilityTable:
    """Experimental probabilities p(abc|xyzw) for every setting of a family."""

    def __init__(self, family: SettingFamily, probabilities: np.ndarray):
        family = parse_enum(SettingFamily, family)
        probabilities = np.asarray(probabilities, dtype=float)
        if probabilities.shape != (family.count,):
            raise ValidationError(
                f"Probability table holds {probabilities.size} entries, family {family.value} needs {family.count}")
        if not np.all(np.isfinite(probabilities)):
            raise ValidationError("Probability table is incomplete (non-finite entries)")
        self.family = family
        self.probabilities = probabilities

    def group_sums(self) -> np.ndarray:
        return self.probabilities.reshape(-1, OUTCOMES_PER_GROUP).sum(axis=1)

    def to_frame(self) -> pd.DataFrame:
        return _frame(self.family, "p", self.probabilities)

    def __repr__(self):
        return f"ProbabilityTable(family={self.family.value}, settings={self.probabilities.size})"


def _frame(family: SettingFamily, column: str, values: np.ndarray) -> pd.DataFrame:
    table = pd.DataFrame(settings_array(family), columns=list(ENUMERATION_ORDER))[list(SETTING_FIELDS)]
    table[column] = values
    return table


def exact_probabilities(w: ProcessMatrix, family: Union[SettingFamily, str], born: Optional[BornMatrix] = None) -> ProbabilityTable:
    """Born-rule probabilities of every setting (clamped to [0, 1])."""
    family = parse_enum(SettingFamily, family)
    born = born or BornMatrix(family)
    probabilities = born.probabilities(w.matrix)
    return ProbabilityTable(family, np.clip(probabilities, 0.0, 1.0))


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def simulate_counts(w: ProcessMatrix, family: Union[SettingFamily, str], noise: Optional[NoiseModel] = None,
                    seed=None) -> CountTable:
    """
    Draw a multinomial sample per (x, y, z, w) group from the Born probabilities.

    Randomness comes from a PCG64 generator seeded with ``seed``; the seed is split
    into one stream for waveplate jitter and one for shot noise, and all groups
    are sampled in one vectorized draw in enumeration order. In analytic mode
    (``noise.shots`` unset) the table holds the exact probabilities.
    """
    family = parse_enum(SettingFamily, family)
    noise = noise or NoiseModel()
    jitter_seq, shot_seq = _seed_sequence(seed).spawn(2)
    operators = None
    if noise.jitter_deg > 0:
        operators = family_operators(family, noise.jitter_deg, np.random.Generator(np.random.PCG64(jitter_seq)))
    born = BornMatrix(family, operators=operators)
    probabilities = np.clip(born.probabilities(w.matrix), 0.0, None).reshape(-1, OUTCOMES_PER_GROUP)
    totals = probabilities.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise ValidationError("A setting group has zero total probability")
    probabilities = probabilities / totals
    seed_value = seed if isinstance(seed, (int, np.integer)) else None
    if noise.analytic:
        logger.info(f"Analytic probabilities for {family.value} family ({family.count} settings)")
        return CountTable(family, probabilities.ravel(), None, seed_value)

    rng = np.random.Generator(np.random.PCG64(shot_seq))
    counts = rng.multinomial(noise.group_total, probabilities)
    logger.info(f"Sampled {noise.group_total} events per group for {counts.shape[0]} groups")
    return CountTable(family, counts.ravel().astype(float), noise.shots, seed_value)


def normalize(counts: CountTable) -> ProbabilityTable:
    """p = C / N per (x, y, z, w) group."""
    grouped = counts.counts.reshape(-1, OUTCOMES_PER_GROUP)
    totals = grouped.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        empty = int(np.flatnonzero(totals.ravel() <= 0)[0])
        raise ValidationError(f"Setting group {empty} has no counts")
    return ProbabilityTable(counts.family, (grouped / totals).ravel())


def stat_error(p: ProbabilityTable, counts: CountTable, variant: str = "scaled") -> float:
    """
    Mean statistical error over all settings.

    ``scaled``: p(1−p)/√N with N the group total; ``binomial``: √(p(1−p)/N).
    """
    if p.family is not counts.family:
        raise ValidationError("Probability and count tables belong to different families")
    totals = np.repeat(counts.group_totals(), OUTCOMES_PER_GROUP)
    if np.any(totals <= 0):
        raise ValidationError("Count table has an empty group")
    variance = p.probabilities * (1 - p.probabilities)
    if variant == "scaled":
        return float(np.mean(variance / np.sqrt(totals)))
    if variant == "binomial":
        return float(np.mean(np.sqrt(variance / totals)))
    raise ValidationError(f"Unknown statistical error variant '{variant}' (expected 'scaled' or 'binomial')")


def _header(family: SettingFamily, shots, seed) -> str:
    return f"# family={family.value} shots={'' if shots is None else shots} seed={'' if seed is None else seed}\n"


def _read_header(handle) -> dict:
    first = handle.readline()
    if not first.startswith("#"):
        raise ValidationError("Table file is missing its '# family=...' header line")
    fields = dict(part.split("=", 1) for part in first[1:].split() if "=" in part)
    if "family" not in fields:
        raise ValidationError("Table header does not name a family")
    return fields


def write_table(path_or_handle, table: Union[CountTable, ProbabilityTable]) -> None:
    """Write a count or probability table as CSV preceded by its family header."""
    if isinstance(table, CountTable):
        frame, header = table.to_frame(), _header(table.family, table.shots, table.seed)
        if table.shots is not None:
            frame["count"] = frame["count"].round().astype(np.int64)
    else:
        frame, header = table.to_frame(), _header(table.family, None, None)
    if hasattr(path_or_handle, "write"):
        path_or_handle.write(header)
        frame.to_csv(path_or_handle, index=False)
        return
    with open(path_or_handle, mode="w", encoding="utf-8", newline="") as handle:
        handle.write(header)
        frame.to_csv(handle, index=False)


def read_table(path_or_handle, family: Optional[Union[SettingFamily, str]] = None) -> Union[CountTable, ProbabilityTable]:
    """Read a table written by ``write_table``; rejects a family other than the one requested."""
    if hasattr(path_or_handle, "readline"):
        return _read_table(path_or_handle, family)
    with open(path_or_handle, mode="r", encoding="utf-8") as handle:
        return _read_table(handle, family)


def _read_table(handle, family) -> Union[CountTable, ProbabilityTable]:
    header = _read_header(handle)
    stored = parse_enum(SettingFamily, header["family"])
    if family is not None and parse_enum(SettingFamily, family) is not stored:
        raise ValidationError(f"Table belongs to family '{stored.value}', expected '{parse_enum(SettingFamily, family).value}'")
    frame = pd.read_csv(handle)
    missing = [c for c in SETTING_FIELDS if c not in frame.columns]
    if missing:
        raise ValidationError(f"Table is missing columns: {missing}")
    if len(frame) != stored.count:
        raise ValidationError(f"Table is incomplete: {len(frame)} rows, family {stored.value} needs {stored.count}")
    frame = frame.sort_values(list(ENUMERATION_ORDER), kind="mergesort").reset_index(drop=True)
    expected = settings_array(stored)
    if not np.array_equal(frame[list(ENUMERATION_ORDER)].to_numpy(), expected):
        raise ValidationError("Table rows do not cover every setting of the family exactly once")
    if "count" in frame.columns:
        shots = int(header["shots"]) if header.get("shots") else None
        seed = int(header["seed"]) if header.get("seed") else None
        return CountTable(stored, frame["count"].to_numpy(dtype=float), shots, seed)
    if "p" in frame.columns:
        return ProbabilityTable(stored, frame["p"].to_numpy(dtype=float))
    raise ValidationError("Table has neither a 'count' nor a 'p' column")
