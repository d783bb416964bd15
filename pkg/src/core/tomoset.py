"""
Tomographic fixtures and the generalized Born rule.

A setting is one experimental configuration (a, b, c | x, y, z, w): past state w,
Alice's instrument x = (jA, kA) with outcome a, Bob's instrument y = (jB, kB) with
outcome b and future basis z with outcome c. Its operator is

    S = ψ_w^T ⊗ R_{a|(jA,kA)} ⊗ R_{b|(jB,kB)} ⊗ E_{c|z}

on (P_t, A_in, A_out, B_in, B_out, F_c), with R_{i|(j,k)} = M_{i|j} ⊗ ψ_k^T.
Settings are enumerated lexicographically over (w, jA, kA, jB, kB, z, a, b, c),
all indices 1-based.
"""
import functools
import hashlib
import itertools
import logging
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.sparse.linalg import LinearOperator

from core.choi import ChoiOperator, Instrument, Povm, measure_reprepare
from core.models import SettingFamily, ValidationError, parse_enum
from core.qsys import (
    KET_0, KET_1, KET_MINUS, KET_PLUS, KET_Y_MINUS, KET_Y_PLUS, SWITCH_LAYOUT, SystemLayout,
    from_coords, kron, linear_map_matrix, orthonormal_span, projector, to_coords,
)

logger = logging.getLogger(__name__)

PROBABILITY_TOL = 1e-10

SETTING_FIELDS = ("a", "b", "c", "jA", "kA", "jB", "kB", "z", "w")
ENUMERATION_ORDER = ("w", "jA", "kA", "jB", "kB", "z", "a", "b", "c")

# Waveplate angles in degrees as (quarter-wave, half-wave) pairs.
EXPERIMENTAL_STATE_ANGLES = ((0.0, 0.0), (0.0, -45.0), (0.0, -22.5), (-45.0, 0.0))
EXPERIMENTAL_MEASUREMENT_ANGLES = (
    ((0.0, 0.0), (0.0, 45.0)),
    ((45.0, 22.5), (45.0, 67.5)),
    ((45.0, 0.0), (45.0, 45.0)),
)
EXPERIMENTAL_REPREPARATION_ANGLES = ((0.0, 0.0), (0.0, 45.0), (0.0, 22.5), (45.0, 0.0))

IDEAL_STATE_ANGLES = ((0.0, 0.0), (0.0, 45.0), (0.0, 22.5), (-45.0, 0.0))
IDEAL_MEASUREMENT_ANGLES = (
    ((0.0, 0.0), (0.0, 45.0)),
    ((45.0, 22.5), (45.0, 67.5)),
    ((45.0, 45.0), (45.0, 0.0)),
)


def half_waveplate(theta_deg: float) -> np.ndarray:
    t = np.radians(2 * theta_deg)
    return np.array([[np.cos(t), np.sin(t)], [np.sin(t), -np.cos(t)]], dtype=complex)


def quarter_waveplate(theta_deg: float) -> np.ndarray:
    t = np.radians(theta_deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([
        [c * c - 1j * s * s, (1 + 1j) * c * s],
        [(1 + 1j) * c * s, s * s - 1j * c * c],
    ])


def prepared_state(qwp_deg: float, hwp_deg: float) -> np.ndarray:
    """Projector of |0⟩ sent through a quarter- then a half-waveplate."""
    return projector(half_waveplate(hwp_deg) @ quarter_waveplate(qwp_deg) @ KET_0)


def analyzed_state(qwp_deg: float, hwp_deg: float) -> np.ndarray:
    """Projector of the state transmitted to the |0⟩ analyzer behind a quarter- and a half-waveplate."""
    ket = quarter_waveplate(qwp_deg).conj().T @ half_waveplate(hwp_deg).conj().T @ KET_0
    return projector(ket)


def state_set() -> np.ndarray:
    """Past states {|0⟩, |1⟩, |+⟩, |y+⟩} as projectors, shape (4, 2, 2)."""
    return np.array([projector(k) for k in (KET_0, KET_1, KET_PLUS, KET_Y_PLUS)])


def measurement_set() -> np.ndarray:
    """Effects M[j, i] for Z, X, Y measurements with outcomes (+1, −1); shape (3, 2, 2, 2)."""
    pairs = ((KET_0, KET_1), (KET_PLUS, KET_MINUS), (KET_Y_PLUS, KET_Y_MINUS))
    return np.array([[projector(k) for k in pair] for pair in pairs])


def instrument_elements(effects: np.ndarray, repreparations: np.ndarray) -> np.ndarray:
    """R[j, k, i] = M_{i|j} ⊗ φ_k^T; shape (3, 4, 2, 4, 4)."""
    return np.einsum("jiab,kcd->jkiacbd", effects, np.swapaxes(repreparations, -1, -2)).reshape(
        effects.shape[0], repreparations.shape[0], effects.shape[1], 4, 4)


def instrument_set() -> np.ndarray:
    """The 24 ideal measure-and-reprepare elements R_{i|(j,k)} = M_{i|j} ⊗ ψ_k^T."""
    return instrument_elements(measurement_set(), state_set())


def instruments(effects: Optional[np.ndarray] = None, repreparations: Optional[np.ndarray] = None) -> List[Instrument]:
    """Instrument objects for every (j, k), built through the Choi helpers."""
    effects = measurement_set() if effects is None else effects
    repreparations = state_set() if repreparations is None else repreparations
    result = []
    for j, k in itertools.product(range(effects.shape[0]), range(repreparations.shape[0])):
        elements = [measure_reprepare(effects[j, i], repreparations[k]) for i in range(effects.shape[1])]
        result.append(Instrument(elements, labels=[(i + 1, (j + 1, k + 1)) for i in range(effects.shape[1])]))
    return result


class ExperimentalSets:
    """States, effects, repreparations and control effects realized in the experiment."""

    def __init__(self, states, effects, repreparations, control_effects):
        self.states = states
        self.effects = effects
        self.repreparations = repreparations
        self.control_effects = control_effects

    def __repr__(self):
        return (f"ExperimentalSets(states={len(self.states)}, measurements={len(self.effects)}, "
                f"repreparations={len(self.repreparations)}, control_bases={len(self.control_effects)})")


def _from_angles(table, offsets: Optional[np.ndarray], builder) -> np.ndarray:
    angles = np.array(table, dtype=float)
    if offsets is not None:
        angles = angles + offsets
    flat = angles.reshape(-1, 2)
    ops = np.array([builder(qwp, hwp) for qwp, hwp in flat])
    return ops.reshape(angles.shape[:-1] + (2, 2))


def _jitter(table, jitter_deg: float, rng: Optional[np.random.Generator]) -> Optional[np.ndarray]:
    if jitter_deg <= 0:
        return None
    if rng is None:
        raise ValidationError("Waveplate jitter needs a random generator")
    return rng.normal(0.0, jitter_deg, size=np.shape(table))


def control_effects() -> np.ndarray:
    """C̃[z, c]: z=1 reads (|1⟩, |0⟩), z=2 reads (|y−⟩, |y+⟩)."""
    return np.array([
        [projector(KET_1), projector(KET_0)],
        [projector(KET_Y_MINUS), projector(KET_Y_PLUS)],
    ])


def experimental_sets(jitter_deg: float = 0.0, rng: Optional[np.random.Generator] = None) -> ExperimentalSets:
    """Sets produced by the waveplate settings of the experiment, optionally with angle jitter."""
    states = _from_angles(EXPERIMENTAL_STATE_ANGLES, _jitter(EXPERIMENTAL_STATE_ANGLES, jitter_deg, rng), prepared_state)
    effects = _from_angles(EXPERIMENTAL_MEASUREMENT_ANGLES,
                           _jitter(EXPERIMENTAL_MEASUREMENT_ANGLES, jitter_deg, rng), analyzed_state)
    repreparations = _from_angles(EXPERIMENTAL_REPREPARATION_ANGLES,
                                  _jitter(EXPERIMENTAL_REPREPARATION_ANGLES, jitter_deg, rng), prepared_state)
    return ExperimentalSets(states, effects, repreparations, control_effects())


class FamilyOperators:
    """Local operators of a setting family: past (transposed), Alice, Bob and future."""

    def __init__(self, family: SettingFamily, past, alice, bob, future):
        self.family = family
        self.past = past          # (4, 2, 2)
        self.alice = alice        # (3, 4, 2, 4, 4)
        self.bob = bob            # (3, 4, 2, 4, 4)
        self.future = future      # (Z, 2, 2, 2)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (4, 3, 4, 3, 4, self.future.shape[0], 2, 2, 2)

    def __repr__(self):
        return f"FamilyOperators(family={self.family.value}, shape={self.shape})"


def family_operators(family: Union[SettingFamily, str], jitter_deg: float = 0.0,
                     rng: Optional[np.random.Generator] = None) -> FamilyOperators:
    """
    Local operators of a family. With jitter, every waveplate angle (past state,
    both instruments, future analyzer) is perturbed independently.
    """
    family = parse_enum(SettingFamily, family)
    if family is SettingFamily.FULL:
        if jitter_deg > 0:
            states = _from_angles(IDEAL_STATE_ANGLES, _jitter(IDEAL_STATE_ANGLES, jitter_deg, rng), prepared_state)

            def party():
                eff = _from_angles(IDEAL_MEASUREMENT_ANGLES, _jitter(IDEAL_MEASUREMENT_ANGLES, jitter_deg, rng), analyzed_state)
                rep = _from_angles(IDEAL_STATE_ANGLES, _jitter(IDEAL_STATE_ANGLES, jitter_deg, rng), prepared_state)
                return instrument_elements(eff, rep)

            alice, bob = party(), party()
            future = _from_angles(IDEAL_MEASUREMENT_ANGLES, _jitter(IDEAL_MEASUREMENT_ANGLES, jitter_deg, rng), analyzed_state)
        else:
            states = state_set()
            alice = bob = instrument_set()
            future = measurement_set()
    else:
        past_sets = experimental_sets(jitter_deg, rng)
        states = past_sets.states
        alice = instrument_elements(past_sets.effects, past_sets.repreparations)
        if jitter_deg > 0:
            bob_sets = experimental_sets(jitter_deg, rng)
            bob = instrument_elements(bob_sets.effects, bob_sets.repreparations)
        else:
            bob = alice
        future = past_sets.control_effects
    return FamilyOperators(family, np.swapaxes(states, -1, -2), alice, bob, future)


@functools.lru_cache(maxsize=None)
def _nominal_operators(family: SettingFamily) -> FamilyOperators:
    return family_operators(family)


class SettingIndex:
    """One setting (a, b, c | jA, kA, jB, kB, z, w), 1-based."""

    __slots__ = SETTING_FIELDS

    def __init__(self, a, b, c, jA, kA, jB, kB, z, w):
        self.a, self.b, self.c = int(a), int(b), int(c)
        self.jA, self.kA, self.jB, self.kB = int(jA), int(kA), int(jB), int(kB)
        self.z, self.w = int(z), int(w)

    def key(self) -> Tuple[int, ...]:
        """Indices in enumeration order (w, jA, kA, jB, kB, z, a, b, c)."""
        return tuple(getattr(self, name) for name in ENUMERATION_ORDER)

    def group(self) -> Tuple[int, ...]:
        """The (x, y, z, w) configuration this setting belongs to."""
        return self.key()[:6]

    def check(self, family: SettingFamily) -> None:
        shape = (4, 3, 4, 3, 4, family.future_bases, 2, 2, 2)
        for name, value, size in zip(ENUMERATION_ORDER, self.key(), shape):
            if not 1 <= value <= size:
                raise ValidationError(f"Setting index {name}={value} out of range 1..{size} for family {family.value}")

    def __eq__(self, other):
        return isinstance(other, SettingIndex) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return "SettingIndex(" + ", ".join(f"{name}={getattr(self, name)}" for name in SETTING_FIELDS) + ")"


def family_shape(family: SettingFamily) -> Tuple[int, ...]:
    return (4, 3, 4, 3, 4, family.future_bases, 2, 2, 2)


def enumerate_settings(family: Union[SettingFamily, str]) -> Iterator[SettingIndex]:
    family = parse_enum(SettingFamily, family)
    for values in itertools.product(*(range(1, n + 1) for n in family_shape(family))):
        yield SettingIndex(**dict(zip(ENUMERATION_ORDER, values)))


def setting_position(idx: SettingIndex, family: Union[SettingFamily, str]) -> int:
    family = parse_enum(SettingFamily, family)
    idx.check(family)
    return int(np.ravel_multi_index(tuple(v - 1 for v in idx.key()), family_shape(family)))


def setting_at(position: int, family: Union[SettingFamily, str]) -> SettingIndex:
    family = parse_enum(SettingFamily, family)
    values = np.unravel_index(position, family_shape(family))
    return SettingIndex(**{name: int(v) + 1 for name, v in zip(ENUMERATION_ORDER, values)})


def settings_array(family: Union[SettingFamily, str]) -> np.ndarray:
    """All settings as an integer array with columns in enumeration order."""
    family = parse_enum(SettingFamily, family)
    grids = np.indices(family_shape(family)).reshape(9, -1).T
    return grids + 1


def setting_operator(idx: SettingIndex, family: Union[SettingFamily, str],
                     operators: Optional[FamilyOperators] = None) -> np.ndarray:
    """The 64×64 product operator of one setting."""
    family = parse_enum(SettingFamily, family)
    idx.check(family)
    ops = operators or _nominal_operators(family)
    return kron(
        ops.past[idx.w - 1],
        ops.alice[idx.jA - 1, idx.kA - 1, idx.a - 1],
        ops.bob[idx.jB - 1, idx.kB - 1, idx.b - 1],
        ops.future[idx.z - 1, idx.c - 1],
    )


def _clamp(p: float, setting) -> float:
    if p < -PROBABILITY_TOL or p > 1 + PROBABILITY_TOL:
        logger.warning(f"Born probability {p:.3e} for {setting} lies outside [0, 1]; clamping")
    return min(1.0, max(0.0, p))


def born_probability(w, idx: SettingIndex, family: Union[SettingFamily, str]) -> float:
    """Tr(W·S) for one setting, clamped to [0, 1]."""
    matrix = getattr(w, "matrix", w)
    p = float(np.trace(matrix @ setting_operator(idx, family)).real)
    return _clamp(p, idx)


class BornMatrix:
    """
    Linear map from Hermitian coordinates of W to the probabilities of every
    setting in a family.

    The map is evaluated by contracting W with the local operators, so the
    settings × d² matrix is never stored in full; explicit rows are produced in
    chunks on demand.
    """

    _FORWARD = "...pqrsPQRS,wPp,jkaQq,lmbRr,zcSs->...wjklmzabc"
    _ADJOINT = "...wjklmzabc,wPp,jkaQq,lmbRr,zcSs->...PQRSpqrs"

    def __init__(self, family: Union[SettingFamily, str], layout: SystemLayout = SWITCH_LAYOUT,
                 operators: Optional[FamilyOperators] = None, chunk_rows: int = 2048):
        family = parse_enum(SettingFamily, family)
        if layout != SWITCH_LAYOUT:
            raise ValidationError(f"Born matrices are defined on {SWITCH_LAYOUT}")
        self.family = family
        self.layout = layout
        self.operators = operators or _nominal_operators(family)
        self.chunk_rows = chunk_rows
        self._normal = None
        self.shape = (family.count, layout.dim ** 2)
        ops = self.operators
        self._local = (ops.past, ops.alice, ops.bob, ops.future)
        template = np.zeros((2, 4, 4, 2, 2, 4, 4, 2), dtype=complex)
        self._forward_path = np.einsum_path(self._FORWARD, template, *self._local, optimize="greedy")[0]
        template = np.zeros(family_shape(family), dtype=complex)
        self._adjoint_path = np.einsum_path(self._ADJOINT, template, *self._local, optimize="greedy")[0]

    @property
    def n_settings(self) -> int:
        return self.shape[0]

    def probabilities(self, matrix: np.ndarray) -> np.ndarray:
        """Tr(W·S) for every setting, in enumeration order (accepts a stack of W)."""
        matrix = np.asarray(matrix, dtype=complex)
        batch = matrix.shape[:-2]
        tensor = matrix.reshape(batch + (2, 4, 4, 2, 2, 4, 4, 2))
        out = np.einsum(self._FORWARD, tensor, *self._local, optimize=self._forward_path)
        return out.real.reshape(batch + (self.n_settings,))

    def adjoint(self, weights: np.ndarray) -> np.ndarray:
        """Σ_s weights_s · S_s as a 64×64 matrix (accepts a stack of weight vectors)."""
        weights = np.asarray(weights, dtype=float)
        batch = weights.shape[:-1]
        tensor = weights.reshape(batch + family_shape(self.family)).astype(complex)
        out = np.einsum(self._ADJOINT, tensor, *self._local, optimize=self._adjoint_path)
        return out.reshape(batch + (self.layout.dim, self.layout.dim))

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return self.probabilities(from_coords(coords, self.layout.dim))

    def apply_adjoint(self, weights: np.ndarray) -> np.ndarray:
        return to_coords(self.adjoint(weights))

    def row_operators(self, start: int, stop: int) -> np.ndarray:
        """Explicit setting operators for positions [start, stop)."""
        ops = self.operators
        rows = []
        for position in range(start, stop):
            idx = setting_at(position, self.family)
            rows.append(setting_operator(idx, self.family, ops))
        return np.array(rows)

    def rows(self, start: int, stop: int) -> np.ndarray:
        """Explicit matrix rows (Hermitian coordinates of the setting operators)."""
        return to_coords(self.row_operators(start, stop))

    def iter_chunks(self) -> Iterator[Tuple[int, np.ndarray]]:
        for start in range(0, self.n_settings, self.chunk_rows):
            stop = min(self.n_settings, start + self.chunk_rows)
            yield start, self.rows(start, stop)

    @functools.cached_property
    def row_norms_sq(self) -> np.ndarray:
        """‖S‖² for every setting, from the local Frobenius norms."""
        norms = [np.sum(np.abs(op) ** 2, axis=(-1, -2)) for op in self._local]
        past, alice, bob, future = norms
        full = np.einsum("w,jka,lmb,zc->wjklmzabc", past, alice, bob, future)
        return full.reshape(self.n_settings)

    def normal_matrix(self) -> np.ndarray:
        """BᵀB as a dense d²×d² matrix (computed once per instance)."""
        if self._normal is None:
            logger.info(f"Assembling normal matrix of {self}")
            dim = self.layout.dim
            self._normal = linear_map_matrix(lambda m: to_coords(self.adjoint(self.probabilities(m))), dim, chunk=256)
        return self._normal

    def as_operator(self) -> LinearOperator:
        """The map as a scipy LinearOperator (probabilities ← coordinates)."""
        operator = LinearOperator(
            self.shape,
            matvec=self.apply,
            rmatvec=self.apply_adjoint,
            matmat=lambda x: self.apply(x.T).T,
            rmatmat=lambda y: self.apply_adjoint(y.T).T,
            dtype=float,
        )
        operator.row_norms_sq = self.row_norms_sq
        operator.normal_matrix = self.normal_matrix
        return operator

    def __repr__(self):
        return f"BornMatrix(family={self.family.value}, shape={self.shape})"


def born_matrix(family: Union[SettingFamily, str], layout: SystemLayout = SWITCH_LAYOUT) -> BornMatrix:
    return BornMatrix(family, layout)


def family_span_complement(family: Union[SettingFamily, str],
                           operators: Optional[FamilyOperators] = None) -> np.ndarray:
    """
    Orthonormal basis (columns, Hermitian coordinates) of the operators orthogonal
    to every setting operator of the family.

    The setting operators are products of local operators, so their span is the
    tensor product of the local spans and its complement is spanned by products
    with at least one locally orthogonal factor.
    """
    family = parse_enum(SettingFamily, family)
    ops = operators or _nominal_operators(family)
    local_sets = (
        (ops.past.reshape(-1, 2, 2), 2),
        (ops.alice.reshape(-1, 4, 4), 4),
        (ops.bob.reshape(-1, 4, 4), 4),
        (ops.future.reshape(-1, 2, 2), 2),
    )
    spans, complements = [], []
    for operators_, dim in local_sets:
        span = orthonormal_span(to_coords(operators_))
        full = np.linalg.svd(span, full_matrices=True)[2] if span.shape[0] else np.eye(dim * dim)
        complement = full[span.shape[0]:]
        spans.append(from_coords(span, dim))
        complements.append(from_coords(complement, dim))

    columns = []
    for choice in itertools.product((False, True), repeat=4):
        if not any(choice):
            continue
        factors = [complements[i] if use else spans[i] for i, use in enumerate(choice)]
        if any(len(f) == 0 for f in factors):
            continue
        for combo in itertools.product(*factors):
            columns.append(to_coords(kron(*combo)))
    if not columns:
        return np.zeros((SWITCH_LAYOUT.dim ** 2, 0))
    return np.array(columns).T


def operator_hash(op: np.ndarray) -> str:
    """Short SHA-256 of an operator rounded to 12 decimals."""
    rounded = np.round(np.asarray(op, dtype=complex), 12) + 0.0
    payload = np.concatenate([rounded.real.ravel(), rounded.imag.ravel()]) + 0.0
    return hashlib.sha256(payload.tobytes()).hexdigest()[:16]


def settings_frame(family: Union[SettingFamily, str], with_hash: bool = True) -> pd.DataFrame:
    """One row per setting in enumeration order, columns a,b,c,jA,kA,jB,kB,z,w[,operator_sha256]."""
    family = parse_enum(SettingFamily, family)
    table = pd.DataFrame(settings_array(family), columns=list(ENUMERATION_ORDER))[list(SETTING_FIELDS)]
    if with_hash:
        born = BornMatrix(family)
        hashes = []
        for start in range(0, born.n_settings, born.chunk_rows):
            stop = min(born.n_settings, start + born.chunk_rows)
            hashes.extend(operator_hash(op) for op in born.row_operators(start, stop))
        table["operator_sha256"] = hashes
    return table
