"""
Process matrices: causally ordered combs, the quantum SWITCH, white noise,
the valid-process subspace and the comb (causal order) subspaces.
"""
import functools
import itertools
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.choi import clifford_unitaries, random_channel, replacement_choi, unitary_choi
from core.models import CausalOrder, LayoutError, ValidationError, parse_enum
from core.qsys import (
    FULL_SWITCH_LAYOUT, KET_0, KET_1, KET_PLUS, KET_Y_PLUS, SQRT2, SWITCH_LAYOUT,
    SystemLayout, herm_eig, is_hermitian, kron, linear_map_matrix, orthonormal_span,
    partial_trace, permute_factors, projector, to_coords, from_coords, trace_replace,
)

logger = logging.getLogger(__name__)

PSD_TOL = 1e-9
TRACE_TOL = 1e-9
SUBSPACE_TOL = 1e-8
SVD_CUTOFF = 1e-9

PAST_LABELS = ("P_c", "P_t")

# Control presets as amplitude pairs (α on A→B, β on B→A)
CONTROL_PRESETS: Dict[str, Tuple[complex, complex]] = {
    "plus": (1 / SQRT2, 1 / SQRT2),
    "y-": (1 / SQRT2, -1j / SQRT2),
    "zero": (1.0, 0.0),
    "one": (0.0, 1.0),
}


class ValidityReport:
    """Outcome of checking a process matrix against the validity conditions."""

    def __init__(self, min_eigenvalue, trace_error, subspace_residual):
        self.min_eigenvalue = float(min_eigenvalue)
        self.trace_error = float(trace_error)
        self.subspace_residual = None if subspace_residual is None else float(subspace_residual)

    @property
    def valid(self) -> bool:
        ok = self.min_eigenvalue >= -PSD_TOL and self.trace_error <= TRACE_TOL
        if self.subspace_residual is not None:
            ok = ok and self.subspace_residual <= SUBSPACE_TOL
        return ok

    def __repr__(self):
        return (f"ValidityReport(valid={self.valid}, min_eigenvalue={self.min_eigenvalue:.3g}, "
                f"trace_error={self.trace_error:.3g}, subspace_residual={self.subspace_residual})")


class ProcessMatrix:
    """A Hermitian process matrix W over a layout."""

    def __init__(self, matrix: np.ndarray, layout: SystemLayout = SWITCH_LAYOUT, name: str = ""):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (layout.dim, layout.dim):
            raise LayoutError(f"Process matrix of shape {matrix.shape} does not match {layout}")
        if not is_hermitian(matrix):
            raise ValidationError(f"Process matrix '{name}' is not Hermitian")
        self.matrix = (matrix + matrix.conj().T) / 2
        self.layout = layout
        self.name = name

    @property
    def trace_norm(self) -> float:
        """Expected trace d_P · d_{A_out} · d_{B_out}."""
        labels = [label for label in self.layout.labels if label in PAST_LABELS + ("A_out", "B_out")]
        return float(self.layout.dim_of(labels))

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalized(self) -> np.ndarray:
        """W / Tr W, a density matrix."""
        return self.matrix / self.trace

    def check(self, subspace: Optional["ValiditySubspace"] = None) -> ValidityReport:
        values, _ = herm_eig(self.matrix)
        residual = subspace.residual(self.matrix) if subspace is not None else None
        return ValidityReport(values[0], abs(self.trace - self.trace_norm), residual)

    def validate(self, subspace: Optional["ValiditySubspace"] = None) -> "ProcessMatrix":
        """Raise ValidationError unless PSD, normalized and (optionally) in the valid subspace."""
        report = self.check(subspace)
        if not report.valid:
            raise ValidationError(f"Process matrix '{self.name}' is not valid: {report}")
        return self

    def __add__(self, other):
        return ProcessMatrix(self.matrix + other.matrix, self.layout)

    def __rmul__(self, scalar):
        return ProcessMatrix(scalar * self.matrix, self.layout)

    def __repr__(self):
        return f"ProcessMatrix(name={self.name!r}, layout={self.layout}, trace={self.trace:.6g})"


def _require_comb_layout(layout: SystemLayout) -> None:
    if len(layout) != 6 or any(dim != 2 for dim in layout.dims):
        raise LayoutError(f"Comb construction needs six qubit factors (past, A_in, A_out, B_in, B_out, future), got {layout}")


def _comb_vector(order: CausalOrder) -> np.ndarray:
    """Process vector over (P, A_in, A_out, B_in, B_out, F) built from identity Choi vectors."""
    vec = np.zeros((2,) * 6, dtype=complex)
    for p, j, k in itertools.product(range(2), repeat=3):
        if order is CausalOrder.A_THEN_B:
            vec[p, p, j, j, k, k] = 1.0       # P→A_in, A_out→B_in, B_out→F
        else:
            vec[p, j, k, p, j, k] = 1.0       # P→B_in, B_out→A_in, A_out→F
    return vec.reshape(64)


def comb_process(order: Union[CausalOrder, str], layout: SystemLayout = SWITCH_LAYOUT) -> ProcessMatrix:
    """Rank-1 causally ordered process |A→B⟩⟨A→B| or |B→A⟩⟨B→A|."""
    order = parse_enum(CausalOrder, order)
    _require_comb_layout(layout)
    vec = _comb_vector(order)
    name = "comb-ab" if order is CausalOrder.A_THEN_B else "comb-ba"
    return ProcessMatrix(np.outer(vec, vec.conj()), layout, name)


def _control_amplitudes(control) -> Tuple[complex, complex]:
    if isinstance(control, str):
        if control not in CONTROL_PRESETS:
            raise ValidationError(f"Unknown control preset '{control}' (expected one of: {', '.join(CONTROL_PRESETS)})")
        return CONTROL_PRESETS[control]
    amplitudes = np.asarray(control, dtype=complex).ravel()
    if amplitudes.shape != (2,):
        raise ValidationError("Control state must be a qubit amplitude pair")
    if abs(np.vdot(amplitudes, amplitudes).real - 1.0) > 1e-10:
        raise ValidationError(f"Control state {amplitudes} is not normalized")
    return complex(amplitudes[0]), complex(amplitudes[1])


def _switch_vector(alpha: complex, beta: complex) -> np.ndarray:
    """α|A→B⟩|0⟩_Fc + β|B→A⟩|1⟩_Fc over (P_t, A_in, A_out, B_in, B_out, F_c, F_t)."""
    vec = np.zeros((2,) * 7, dtype=complex)
    for p, j, k in itertools.product(range(2), repeat=3):
        vec[p, p, j, j, k, 0, k] += alpha
        vec[p, j, k, p, j, 1, k] += beta
    return vec.reshape(128)


def switch_simplified(control="y-") -> ProcessMatrix:
    """64×64 SWITCH process with the control prepared in ``control`` and F_t traced out."""
    alpha, beta = _control_amplitudes(control)
    vec = _switch_vector(alpha, beta)
    layout = SystemLayout(list(SWITCH_LAYOUT.factors) + [("F_t", 2)])
    w = partial_trace(np.outer(vec, vec.conj()), layout, SWITCH_LAYOUT.labels)
    name = f"switch-{control}" if isinstance(control, str) else "switch-custom"
    return ProcessMatrix(w, SWITCH_LAYOUT, name)


def switch_full() -> ProcessMatrix:
    """256×256 rank-1 SWITCH process including the control past P_c and target future F_t."""
    vec = np.zeros((2,) * 8, dtype=complex)
    for p, j, k in itertools.product(range(2), repeat=3):
        vec[0, p, p, j, j, k, 0, k] = 1.0
        vec[1, p, j, k, p, j, 1, k] = 1.0
    vec = vec.reshape(256)
    return ProcessMatrix(np.outer(vec, vec.conj()), FULL_SWITCH_LAYOUT, "switch-full")


def white_noise_process(layout: SystemLayout = SWITCH_LAYOUT) -> ProcessMatrix:
    """1_W = I / (d_P · d_{A_out} · d_{B_out})."""
    unit = ProcessMatrix(np.eye(layout.dim), layout)
    return ProcessMatrix(np.eye(layout.dim) / unit.trace_norm, layout, "white-noise")


def mixture_process(weights: Sequence[float], processes: Sequence[ProcessMatrix], name: str = "mixture") -> ProcessMatrix:
    matrix = sum(weight * w.matrix for weight, w in zip(weights, processes))
    return ProcessMatrix(matrix, processes[0].layout, name)


def depolarize_past(m: np.ndarray, layout: SystemLayout = SWITCH_LAYOUT) -> np.ndarray:
    """I_P/d_P ⊗ Tr_P(m) on the target past factor."""
    return trace_replace(m, layout, ["P_t"])


def random_comb_process(order: Union[CausalOrder, str], rng: np.random.Generator) -> ProcessMatrix:
    """Sequential circuit with random channels P→first, first→second, second→F."""
    order = parse_enum(CausalOrder, order)
    c1, c2, c3 = (random_channel(2, rng).matrix for _ in range(3))
    if order is CausalOrder.A_THEN_B:
        return ProcessMatrix(kron(c1, c2, c3), SWITCH_LAYOUT, "random-comb-ab")
    # B first: channels act on (P_t, B_in), (B_out, A_in), (A_out, F_c)
    wiring = SystemLayout([("P_t", 2), ("B_in", 2), ("B_out", 2), ("A_in", 2), ("A_out", 2), ("F_c", 2)])
    w, _ = permute_factors(kron(c1, c2, c3), wiring, SWITCH_LAYOUT.labels)
    return ProcessMatrix(w, SWITCH_LAYOUT, "random-comb-ba")


def random_separable_process(rng: np.random.Generator, terms: int = 2) -> ProcessMatrix:
    """Random convex mixture of randomly wired causally ordered processes."""
    weights = rng.dirichlet(np.ones(2 * terms))
    combs = [random_comb_process(order, rng) for order in CausalOrder for _ in range(terms)]
    return mixture_process(weights, combs, "random-separable")


PRESETS = {
    "switch-y-": lambda: switch_simplified("y-"),
    "switch-plus": lambda: switch_simplified("plus"),
    "switch-zero": lambda: switch_simplified("zero"),
    "switch-one": lambda: switch_simplified("one"),
    "comb-ab": lambda: comb_process(CausalOrder.A_THEN_B),
    "comb-ba": lambda: comb_process(CausalOrder.B_THEN_A),
    "white-noise": lambda: white_noise_process(),
    "mixture-ab-ba": lambda: mixture_process(
        [0.5, 0.5], [comb_process(CausalOrder.A_THEN_B), comb_process(CausalOrder.B_THEN_A)], "mixture-ab-ba"),
}


def preset(name: str) -> ProcessMatrix:
    if name not in PRESETS:
        raise ValidationError(f"Unknown process preset '{name}' (expected one of: {', '.join(PRESETS)})")
    return PRESETS[name]()


class LinearSubspace:
    """
    A linear subspace of Hermitian operators described by an orthonormal basis of
    its orthogonal complement (columns of ``complement``, Hermitian coordinates).
    """

    def __init__(self, layout: SystemLayout, complement: np.ndarray):
        self.layout = layout
        self.complement = np.asarray(complement, dtype=float)

    @property
    def dimension(self) -> int:
        return self.layout.dim ** 2 - self.complement.shape[1]

    def project_coords(self, x: np.ndarray) -> np.ndarray:
        return x - self.complement @ (self.complement.T @ x)

    def project(self, m: np.ndarray) -> np.ndarray:
        return from_coords(self.project_coords(to_coords(m)), self.layout.dim)

    def residual(self, m: np.ndarray) -> float:
        """Norm of the component of ``m`` outside the subspace."""
        return float(np.linalg.norm(self.complement.T @ to_coords(m)))

    def contains(self, m: np.ndarray, tol: float = SUBSPACE_TOL) -> bool:
        return self.residual(m) <= tol


class ValiditySubspace(LinearSubspace):
    """Span of valid process matrices: Tr(W·D) constant over deterministic setting operators D."""

    @property
    def offset(self) -> np.ndarray:
        return white_noise_process(self.layout).matrix

    @functools.cached_property
    def basis(self) -> np.ndarray:
        """Orthonormal coordinates (columns) of the traceless valid directions."""
        identity = to_coords(np.eye(self.layout.dim))
        constraints = np.concatenate([self.complement, (identity / np.linalg.norm(identity))[:, None]], axis=1)
        _, singular, vt = np.linalg.svd(constraints.T, full_matrices=True)
        rank = int(np.sum(singular > SVD_CUTOFF * singular[0]))
        return vt[rank:].T

    def __repr__(self):
        return f"ValiditySubspace(layout={self.layout}, dimension={self.dimension})"


def _spanning_states() -> List[np.ndarray]:
    return [projector(ket) for ket in (KET_0, KET_1, KET_PLUS, KET_Y_PLUS)]


def _spanning_channels() -> List[np.ndarray]:
    """Transposed Choi operators of Clifford unitaries and replacement channels."""
    chois = [unitary_choi(u).matrix for u in clifford_unitaries()]
    chois += [replacement_choi(state).matrix for state in _spanning_states()]
    return [c.T for c in chois]


@functools.lru_cache(maxsize=None)
def validity_projector(layout: SystemLayout = SWITCH_LAYOUT) -> ValiditySubspace:
    """
    Build the valid-process subspace for the simplified SWITCH layout.

    Deterministic setting operators D = ρ^T ⊗ A^T ⊗ B^T ⊗ I_F (spanning states ρ,
    spanning CPTP Chois A, B) all give probability one on a valid process, so the
    complement is spanned by the differences D_k − D_0. Everything is expressed in
    the product basis of the local spans, which keeps the factorization small.
    """
    if layout != SWITCH_LAYOUT:
        raise LayoutError(f"Validity subspace is defined for {SWITCH_LAYOUT}, got {layout}")
    logger.info("Building validity subspace")
    states = [s.T for s in _spanning_states()]
    channels = _spanning_channels()

    state_basis = orthonormal_span(to_coords(np.array(states)), SVD_CUTOFF)
    channel_basis = orthonormal_span(to_coords(np.array(channels)), SVD_CUTOFF)
    state_coeffs = to_coords(np.array(states)) @ state_basis.T
    channel_coeffs = to_coords(np.array(channels)) @ channel_basis.T

    # coefficients of D in the product basis (future factor I = √2 · I/√2)
    coeffs = np.einsum("ri,aj,bk->rabijk", state_coeffs, channel_coeffs, channel_coeffs) * SQRT2
    coeffs = coeffs.reshape(-1, state_basis.shape[0] * channel_basis.shape[0] ** 2)
    differences = coeffs[1:] - coeffs[0]
    directions = orthonormal_span(differences, SVD_CUTOFF)

    local_state = from_coords(state_basis, 2)
    local_channel = from_coords(channel_basis, 4)
    future = np.eye(2) / SQRT2
    product_basis = np.array([
        to_coords(kron(s, a, b, future))
        for s, a, b in itertools.product(local_state, local_channel, local_channel)
    ])
    complement = (directions @ product_basis).T
    subspace = ValiditySubspace(layout, complement)
    logger.info(f"Validity subspace has dimension {subspace.dimension} (complement {complement.shape[1]})")
    return subspace


def _comb_roles(order: CausalOrder, layout: SystemLayout):
    past, a_in, a_out, b_in, b_out, future = layout.labels
    if order is CausalOrder.A_THEN_B:
        return past, (a_in, a_out), (b_in, b_out), future
    return past, (b_in, b_out), (a_in, a_out), future


def comb_residuals(m: np.ndarray, order: CausalOrder, layout: SystemLayout = SWITCH_LAYOUT) -> List[np.ndarray]:
    """
    Trace-replacement residuals of the three causal-order conditions.

    For first→second with F the future:
      Tr_F W     = Tr_{second_out F} W ⊗ I/2
      Tr_{second F} W   = Tr_{first_out second F} W ⊗ I/2
      Tr_{all but P} W  = Tr W · I/2
    each written as ``X − T(X)`` on the reduced operator X. Accepts stacks.
    """
    _require_comb_layout(layout)
    past, (first_in, first_out), (second_in, second_out), future = _comb_roles(order, layout)

    keep1 = [label for label in layout.labels if label != future]
    sub1 = layout.restrict(keep1)
    x1 = partial_trace(m, layout, keep1)
    r1 = x1 - trace_replace(x1, sub1, [second_out])

    keep2 = [label for label in layout.labels if label in (past, first_in, first_out)]
    sub2 = layout.restrict(keep2)
    x2 = partial_trace(m, layout, keep2)
    r2 = x2 - trace_replace(x2, sub2, [first_out])

    sub3 = layout.restrict([past])
    x3 = partial_trace(m, layout, [past])
    r3 = x3 - trace_replace(x3, sub3, [past])
    return [r1, r2, r3]


class CombReport:
    """Per-condition residual norms of a causal-order check."""

    def __init__(self, order: CausalOrder, residuals: Sequence[float], tol: float):
        self.order = order
        self.residuals = tuple(float(r) for r in residuals)
        self.tol = tol

    @property
    def passed(self) -> bool:
        return all(r <= self.tol for r in self.residuals)

    def __repr__(self):
        return f"CombReport(order={self.order.value}, residuals={self.residuals}, passed={self.passed})"


def comb_membership(w: Union[ProcessMatrix, np.ndarray], order: Union[CausalOrder, str], tol: float = 1e-10) -> CombReport:
    """Check the trace-replacement conditions of a causal order (Frobenius norm residuals)."""
    order = parse_enum(CausalOrder, order)
    matrix = w.matrix if isinstance(w, ProcessMatrix) else np.asarray(w)
    layout = w.layout if isinstance(w, ProcessMatrix) else SWITCH_LAYOUT
    residuals = [np.linalg.norm(r) for r in comb_residuals(matrix, order, layout)]
    return CombReport(order, residuals, tol)


class CombSubspace(LinearSubspace):
    """Linear span of the processes with a definite causal order."""

    def __init__(self, order: CausalOrder, layout: SystemLayout, complement: np.ndarray):
        super().__init__(layout, complement)
        self.order = order

    def __repr__(self):
        return f"CombSubspace(order={self.order.value}, dimension={self.dimension})"


@functools.lru_cache(maxsize=None)
def comb_subspace(order: Union[CausalOrder, str], layout: SystemLayout = SWITCH_LAYOUT) -> CombSubspace:
    """Null space of the comb residual map, stored through its orthogonal complement."""
    order = parse_enum(CausalOrder, order)
    _require_comb_layout(layout)
    logger.info(f"Building comb subspace for {order.value}")

    def residual_coords(batch):
        return np.concatenate([to_coords(r) for r in comb_residuals(batch, order, layout)], axis=1)

    residual_map = linear_map_matrix(residual_coords, layout.dim)
    complement = orthonormal_span(residual_map, SVD_CUTOFF).T
    subspace = CombSubspace(order, layout, complement)
    logger.info(f"Comb subspace {order.value} has dimension {subspace.dimension}")
    return subspace
