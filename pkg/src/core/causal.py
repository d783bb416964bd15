"""
Causal separability: optimal witnesses, robustness and witness evaluation.

A process is causally separable when it is a sum of an A→B and a B→A comb. Both
definitions are handled in a working space: the full operator space for convex
mixtures, and for extended control the operators invariant under depolarizing
the target past, parametrized as (I_P ⊗ X)/√2 with X on the remaining 32
dimensions.
"""
import functools
import json
import logging
import os
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.sparse.linalg import LinearOperator, lsqr

from core.conic import ProgramBuilder, Solution, SolverOptions, dual_cone_membership, solve
from core.models import (
    CausalOrder, NoiseType, SeparabilityDefinition, SettingFamily, SolverError, SolverStatus,
    ValidationError, parse_enum,
)
from core.procmat import (
    ProcessMatrix, comb_subspace, depolarize_past, validity_projector, white_noise_process,
)
from core.qsys import (
    SQRT2, SWITCH_LAYOUT, embed, from_coords, herm_eig, linear_map_matrix, load_matrix,
    orthonormal_span, save_matrix, to_coords, trace_inner,
)
from core.tomoset import BornMatrix, family_span_complement

logger = logging.getLogger(__name__)

ALPHA_TOL = 1e-8


def _reduced_complement(embedding: Optional[np.ndarray], complement: np.ndarray) -> np.ndarray:
    if embedding is None or complement.shape[1] == 0:
        return complement if embedding is None else np.zeros((embedding.shape[1], 0))
    return orthonormal_span((embedding.T @ complement).T).T


def past_embedding() -> np.ndarray:
    """Isometry X ↦ (I_P ⊗ X)/√2 from 32-dim Hermitian coordinates into the 64-dim ones."""
    rest = SWITCH_LAYOUT.labels[1:]
    return linear_map_matrix(lambda batch: to_coords(embed(batch, SWITCH_LAYOUT, rest) / SQRT2), 32)


class CausalSpace:
    """Working space of a separability definition for a setting family."""

    def __init__(self, definition: SeparabilityDefinition, family: SettingFamily):
        self.definition = definition
        self.family = family
        comb_ab = comb_subspace(CausalOrder.A_THEN_B).complement
        comb_ba = comb_subspace(CausalOrder.B_THEN_A).complement
        valid = validity_projector().complement
        self.span_full = family_span_complement(family)
        if definition is SeparabilityDefinition.EXTENDED_CONTROL:
            self.embedding = past_embedding()
            self.psd_dim = 32
        else:
            self.embedding = None
            self.psd_dim = SWITCH_LAYOUT.dim
        self.comb = {
            CausalOrder.A_THEN_B: _reduced_complement(self.embedding, comb_ab),
            CausalOrder.B_THEN_A: _reduced_complement(self.embedding, comb_ba),
        }
        self.valid = _reduced_complement(self.embedding, valid)
        self.span = _reduced_complement(self.embedding, self.span_full)
        logger.info(f"Causal space {definition.value}/{family.value}: block {self.psd_dim}, "
                    f"comb complements {self.comb[CausalOrder.A_THEN_B].shape[1]}/"
                    f"{self.comb[CausalOrder.B_THEN_A].shape[1]}, span complement {self.span.shape[1]}")

    def reduce(self, coords: np.ndarray) -> np.ndarray:
        return coords if self.embedding is None else self.embedding.T @ coords

    def lift(self, reduced: np.ndarray) -> np.ndarray:
        return reduced if self.embedding is None else self.embedding @ reduced

    def restrict(self, m: np.ndarray) -> np.ndarray:
        """The part of ``m`` the definition can see (past depolarized for extended control)."""
        if self.embedding is None:
            return m
        return depolarize_past(m)

    def project_span(self, coords: np.ndarray) -> np.ndarray:
        """Drop components orthogonal to every setting operator of the family."""
        if self.span_full.shape[1] == 0:
            return coords
        return coords - self.span_full @ (self.span_full.T @ coords)

    @property
    def identity(self) -> np.ndarray:
        return self.reduce(to_coords(np.eye(SWITCH_LAYOUT.dim)))

    def __repr__(self):
        return f"CausalSpace(definition={self.definition.value}, family={self.family.value}, psd_dim={self.psd_dim})"


@functools.lru_cache(maxsize=None)
def causal_space(definition: SeparabilityDefinition, family: SettingFamily) -> CausalSpace:
    return CausalSpace(definition, family)


class Witness:
    """Causal witness G with its coefficients over the family's setting operators."""

    def __init__(self, matrix: np.ndarray, alpha: np.ndarray, noise: NoiseType,
                 definition: SeparabilityDefinition, family: SettingFamily, value: float = float("nan"),
                 diagnostics: Optional[dict] = None):
        self.matrix = matrix
        self.alpha = np.asarray(alpha, dtype=float)
        self.noise = noise
        self.definition = definition
        self.family = family
        self.value = value
        self.diagnostics = diagnostics or {}

    @property
    def label(self) -> str:
        return f"{self.noise.value}/{self.definition.value}/{self.family.value}"

    def evaluate(self, w) -> float:
        return evaluate_witness(self, w)

    def reconstructed(self, born: Optional[BornMatrix] = None) -> np.ndarray:
        """Σ_s α_s S_s."""
        born = born or BornMatrix(self.family)
        return born.adjoint(self.alpha)

    def __repr__(self):
        return f"Witness({self.label}, value={self.value:.6g})"


class RobustnessResult:
    """Robustness r with its separable decomposition certificate."""

    def __init__(self, r: float, noise: NoiseType, definition: SeparabilityDefinition, family: SettingFamily,
                 s_ab: np.ndarray, s_ba: np.ndarray, noise_process: np.ndarray, diagnostics: dict):
        self.r = r
        self.noise = noise
        self.definition = definition
        self.family = family
        self.s_ab = s_ab
        self.s_ba = s_ba
        self.noise_process = noise_process
        self.diagnostics = diagnostics

    def __repr__(self):
        return f"RobustnessResult(r={self.r:.6g}, noise={self.noise.value}, definition={self.definition.value})"


def _matrix_of(w) -> np.ndarray:
    return w.matrix if isinstance(w, ProcessMatrix) else np.asarray(w)


def _require_solved(solution: Solution, what: str) -> None:
    if solution.status is SolverStatus.INFEASIBLE:
        raise SolverError(f"{what} program reported infeasible", solution.status)


def _witness_alpha(g_coords: np.ndarray, born: BornMatrix) -> Tuple[np.ndarray, float]:
    """Minimum-norm α with Σ α_s S_s = G."""
    dim2 = born.shape[1]
    operator = LinearOperator((dim2, born.n_settings), matvec=born.apply_adjoint, rmatvec=born.apply, dtype=float)
    alpha = lsqr(operator, g_coords, atol=1e-15, btol=1e-15, iter_lim=5000)[0]
    error = float(np.linalg.norm(born.apply_adjoint(alpha) - g_coords))
    return alpha, error


def optimal_witness(w, family: Union[SettingFamily, str] = SettingFamily.FULL,
                    noise: Union[NoiseType, str] = NoiseType.GENERALIZED,
                    definition: Union[SeparabilityDefinition, str] = SeparabilityDefinition.CONVEX_MIXTURE,
                    options: Optional[SolverOptions] = None) -> Witness:
    """
    Minimize Tr(G·W) over witnesses in the span of the family's setting operators
    that are nonnegative on both comb cones, under the noise normalization:
    Tr(G) ≤ Tr(1_W) for white noise, Tr(G·Ω) ≤ 1 for every valid Ω otherwise.
    """
    family = parse_enum(SettingFamily, family)
    noise = parse_enum(NoiseType, noise)
    definition = parse_enum(SeparabilityDefinition, definition)
    space = causal_space(definition, family)
    matrix = _matrix_of(w)
    w_reduced = space.reduce(to_coords(matrix))
    norm = white_noise_process().trace_norm
    dim2 = space.psd_dim ** 2

    builder = ProgramBuilder()
    ab = dual_cone_membership(builder, space.comb[CausalOrder.A_THEN_B], space.psd_dim, "G_ab")
    ba = dual_cone_membership(builder, space.comb[CausalOrder.B_THEN_A], space.psd_dim, "G_ba")
    builder.add_equality(ab.terms(1.0) + ba.terms(-1.0), np.zeros(dim2), name="both orders")
    if space.span.shape[1]:
        builder.add_equality(ab.projected_terms(space.span.T), np.zeros(space.span.shape[1]), name="setting span")
    if noise is NoiseType.WHITE:
        slack = builder.add_nonneg("trace_slack", 1)
        builder.add_equality(ab.projected_terms(space.identity[None, :]) + [(slack, 1.0)], [norm], name="trace")
    else:
        valid = dual_cone_membership(builder, space.valid, space.psd_dim, "normalization")
        builder.add_equality(ab.terms(1.0) + valid.terms(1.0), space.identity / norm, name="noise normalization")
    ab.add_objective(builder, w_reduced)

    solution = solve(builder.build(), options)
    _require_solved(solution, "Witness")
    g = space.project_span(space.lift(ab.value(solution)))
    g_matrix = from_coords(g, SWITCH_LAYOUT.dim)
    born = BornMatrix(family)
    alpha, error = _witness_alpha(g, born)
    if error > ALPHA_TOL * max(1.0, float(np.linalg.norm(g))):
        logger.warning(f"Witness coefficients reproduce G only to {error:.2e}")
    value = trace_inner(g_matrix, matrix)
    diagnostics = solution.diagnostics()
    diagnostics["alpha_error"] = error
    witness = Witness(g_matrix, alpha, noise, definition, family, value, diagnostics)
    logger.info(f"Optimal witness {witness.label}: Tr(GW) = {value:.6f}")
    return witness


def robustness(w, noise: Union[NoiseType, str] = NoiseType.WHITE,
               definition: Union[SeparabilityDefinition, str] = SeparabilityDefinition.CONVEX_MIXTURE,
               family: Union[SettingFamily, str] = SettingFamily.FULL,
               options: Optional[SolverOptions] = None) -> RobustnessResult:
    """
    Minimal r such that (W + r·Ω)/(1 + r) is causally separable.

    White noise fixes Ω = 1_W; generalized robustness optimizes over valid Ω.
    For the restricted family the mixture only has to hold on the span of its
    setting operators (the dual of a witness confined to that span).
    """
    noise = parse_enum(NoiseType, noise)
    definition = parse_enum(SeparabilityDefinition, definition)
    family = parse_enum(SettingFamily, family)
    space = causal_space(definition, family)
    matrix = _matrix_of(w)
    w_reduced = space.reduce(to_coords(matrix))
    white = white_noise_process()
    norm = white.trace_norm
    dim2 = space.psd_dim ** 2

    builder = ProgramBuilder()
    t_ab = builder.add_psd("S_ab", space.psd_dim)
    t_ba = builder.add_psd("S_ba", space.psd_dim)
    for block, order in ((t_ab, CausalOrder.A_THEN_B), (t_ba, CausalOrder.B_THEN_A)):
        complement = space.comb[order]
        builder.add_equality([(block, complement.T)], np.zeros(complement.shape[1]), name=f"comb {order.value}")
    mixture = [(t_ab, 1.0), (t_ba, 1.0)]
    if space.span.shape[1]:
        off_span = builder.add_free("off_span", space.span.shape[1])
        mixture.append((off_span, -space.span))
    if noise is NoiseType.WHITE:
        r_block = builder.add_nonneg("r", 1)
        mixture.append((r_block, -space.reduce(to_coords(white.matrix))))
        builder.add_objective(r_block, 1.0)
    else:
        omega = builder.add_psd("noise", space.psd_dim)
        builder.add_equality([(omega, space.valid.T)], np.zeros(space.valid.shape[1]), name="valid noise")
        mixture.append((omega, -1.0))
        builder.add_objective(omega, space.identity / norm)
    builder.add_equality(mixture, w_reduced, name="mixture")

    solution = solve(builder.build(), options)
    _require_solved(solution, "Robustness")
    r = max(0.0, solution.objective)
    s_ab = from_coords(space.lift(solution.values["S_ab"]), SWITCH_LAYOUT.dim) / (1 + r)
    s_ba = from_coords(space.lift(solution.values["S_ba"]), SWITCH_LAYOUT.dim) / (1 + r)
    if noise is NoiseType.WHITE or r <= 1e-9:
        noise_process = white.matrix
    else:
        noise_process = from_coords(space.lift(solution.values["noise"]), SWITCH_LAYOUT.dim) / r
    result = RobustnessResult(r, noise, definition, family, s_ab, s_ba, noise_process, solution.diagnostics())
    logger.info(f"Robustness {noise.value}/{definition.value}/{family.value}: r = {r:.6f}")
    return result


def certificate_residuals(result: RobustnessResult, w) -> Dict[str, float]:
    """How well the separable decomposition of a robustness result holds up."""
    space = causal_space(result.definition, result.family)
    matrix = space.restrict(_matrix_of(w))
    noise = space.restrict(result.noise_process)
    difference = (matrix + result.r * noise) / (1 + result.r) - result.s_ab - result.s_ba
    mixture = float(np.linalg.norm(space.project_span(to_coords(difference))))
    return {
        "mixture": mixture,
        "min_eig_ab": float(herm_eig(result.s_ab)[0][0]),
        "min_eig_ba": float(herm_eig(result.s_ba)[0][0]),
        "comb_ab": comb_subspace(CausalOrder.A_THEN_B).residual(result.s_ab),
        "comb_ba": comb_subspace(CausalOrder.B_THEN_A).residual(result.s_ba),
    }


def evaluate_witness(g: Witness, w) -> float:
    """Tr(G·W)."""
    return trace_inner(g.matrix, _matrix_of(w))


def witness_table(w, cases: Optional[Iterable[Tuple]] = None, options: Optional[SolverOptions] = None) -> pd.DataFrame:
    """Optimal witness values for (noise, definition, family) cases, one row per case."""
    if cases is None:
        cases = [(noise, definition, family)
                 for definition in SeparabilityDefinition
                 for noise in NoiseType
                 for family in SettingFamily]
    rows = []
    for noise, definition, family in cases:
        witness = optimal_witness(w, family, noise, definition, options)
        rows.append({"noise": witness.noise.value, "definition": witness.definition.value,
                     "family": witness.family.value, "value": witness.value})
    return pd.DataFrame(rows)


def save_witness(path, witness: Witness) -> None:
    """Write witness JSON plus its matrix file (same stem, ``.matrix.json``)."""
    stem, _ = os.path.splitext(os.fspath(path))
    matrix_path = stem + ".matrix.json"
    save_matrix(matrix_path, witness.matrix, SWITCH_LAYOUT)
    payload = {
        "family": witness.family.value,
        "noise": witness.noise.value,
        "definition": witness.definition.value,
        "value": witness.value,
        "alpha": witness.alpha.tolist(),
        "matrix": os.path.basename(matrix_path),
        "diagnostics": witness.diagnostics,
    }
    with open(path, mode="w", encoding="utf-8") as file:
        json.dump(payload, file, indent=2)


def load_witness(path) -> Witness:
    with open(path, mode="r", encoding="utf-8") as file:
        payload = json.load(file)
    try:
        family = parse_enum(SettingFamily, payload["family"])
        noise = parse_enum(NoiseType, payload["noise"])
        definition = parse_enum(SeparabilityDefinition, payload["definition"])
        matrix_ref = payload["matrix"]
    except KeyError as e:
        raise ValidationError(f"Witness file {path} is missing {e}") from e
    matrix, layout = load_matrix(os.path.join(os.path.dirname(os.fspath(path)), matrix_ref))
    if layout != SWITCH_LAYOUT:
        raise ValidationError(f"Witness matrix layout {layout} is not the switch layout")
    alpha = np.asarray(payload.get("alpha", []), dtype=float)
    if alpha.size != family.count:
        raise ValidationError(f"Witness holds {alpha.size} coefficients, family {family.value} has {family.count} settings")
    return Witness(matrix, alpha, noise, definition, family, payload.get("value", float("nan")),
                   payload.get("diagnostics"))
