"""
Process-matrix reconstruction and worst-case tomography.

Reconstruction minimizes the mean absolute deviation between measured
probabilities and Tr(W·S) over valid process matrices. Worst-case tomography
maximizes a witness over every valid W that fits the data within ε.
"""
import logging
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from core.causal import Witness
from core.conic import ProgramBuilder, SolverOptions, l1_epigraph, solve
from core.models import SettingFamily, SolverError, SolverStatus, ValidationError, parse_enum
from core.procmat import ProcessMatrix, validity_projector, white_noise_process
from core.qsys import PAULI_X, SWITCH_LAYOUT, embed, from_coords, herm_eig, to_coords
from core.simlab import ProbabilityTable
from core.tomoset import BornMatrix

logger = logging.getLogger(__name__)

DEFAULT_EPS_STOP = 0.015
DEFAULT_EPS_STEP = 5e-4
# equality residual above which an unconverged worst-case solve counts as infeasible
UNRESOLVED_RESIDUAL = 1e-4
# polished reconstructions sit up to this far above the raw L1 optimum
RESIDUAL_SLACK = 1e-6


def future_x_operator() -> np.ndarray:
    """I ⊗ X on the control future F_c."""
    return embed(PAULI_X, SWITCH_LAYOUT, ["F_c"])


class ReconstructionResult:
    """Reconstructed process matrix with its residual and solver diagnostics."""

    def __init__(self, process: ProcessMatrix, residual: float, family: SettingFamily,
                 impose_future_x: bool, diagnostics: dict):
        self.process = process
        self.residual = residual
        self.family = family
        self.impose_future_x = impose_future_x
        self.diagnostics = diagnostics

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "impose_future_x": self.impose_future_x,
            "residual": self.residual,
            "diagnostics": self.diagnostics,
        }

    def __repr__(self):
        return (f"ReconstructionResult(family={self.family.value}, residual={self.residual:.3e}, "
                f"impose_future_x={self.impose_future_x})")


class WorstCaseResult:
    """Largest witness value among processes fitting the data within ε."""

    def __init__(self, epsilon: float, status: SolverStatus, value: float,
                 process: Optional[ProcessMatrix], diagnostics: dict):
        self.epsilon = epsilon
        self.status = status
        self.value = value
        self.process = process
        self.diagnostics = diagnostics

    @property
    def feasible(self) -> bool:
        return self.status is not SolverStatus.INFEASIBLE

    def __repr__(self):
        return f"WorstCaseResult(epsilon={self.epsilon:.4g}, status={self.status.value}, value={self.value:.6g})"


def _resolve_family(p: ProbabilityTable, family) -> SettingFamily:
    if family is None:
        return p.family
    family = parse_enum(SettingFamily, family)
    if family is not p.family:
        raise ValidationError(f"Probability table belongs to family '{p.family.value}', not '{family.value}'")
    return family


def _add_valid_process(builder: ProgramBuilder, impose_future_x: bool):
    """PSD W in the validity subspace with the valid trace (and optionally Tr(W·X_F) = 0)."""
    w = builder.add_psd("W", SWITCH_LAYOUT.dim)
    complement = validity_projector().complement
    builder.add_equality([(w, complement.T)], np.zeros(complement.shape[1]), name="validity")
    builder.add_equality([(w, to_coords(np.eye(SWITCH_LAYOUT.dim)))], [white_noise_process().trace_norm], name="trace")
    if impose_future_x:
        builder.add_equality([(w, to_coords(future_x_operator()))], [0.0], name="future X")
    return w


def _polish(coords: np.ndarray, impose_future_x: bool) -> np.ndarray:
    """
    Map a solver iterate onto the valid set exactly: project onto the affine
    constraints, then mix in just enough white noise to clear negative eigenvalues.
    """
    complement = validity_projector().complement
    coords = coords - complement @ (complement.T @ coords)
    identity = to_coords(np.eye(SWITCH_LAYOUT.dim))
    white = white_noise_process()
    coords = coords + (white.trace_norm - identity @ coords) / (identity @ identity) * identity
    if impose_future_x:
        x = to_coords(future_x_operator())
        coords = coords - (x @ coords) / (x @ x) * x
    m = from_coords(coords, SWITCH_LAYOUT.dim)
    lowest = float(herm_eig(m)[0][0])
    if lowest < 0:
        white_eig = 1.0 / white.trace_norm
        t = -lowest / (white_eig - lowest)
        m = (1 - t) * m + t * white.matrix
        logger.debug(f"Polish mixed {t:.2e} of white noise to clear eigenvalue {lowest:.2e}")
    return m


def residual(w, p: ProbabilityTable, family: Optional[Union[SettingFamily, str]] = None,
             born: Optional[BornMatrix] = None) -> float:
    """r = (1/N) Σ |p_exp − Tr(W·S)| over the N settings of the family."""
    family = _resolve_family(p, family)
    born = born or BornMatrix(family)
    matrix = w.matrix if isinstance(w, ProcessMatrix) else np.asarray(w)
    return float(np.mean(np.abs(p.probabilities - born.probabilities(matrix))))


def reconstruct(p: ProbabilityTable, family: Optional[Union[SettingFamily, str]] = None,
                impose_future_x: bool = False, options: Optional[SolverOptions] = None,
                born: Optional[BornMatrix] = None) -> ReconstructionResult:
    """Least-absolute-residual fit of a valid process matrix to a probability table."""
    family = _resolve_family(p, family)
    born = born or BornMatrix(family)
    n = born.n_settings

    builder = ProgramBuilder()
    w = _add_valid_process(builder, impose_future_x)
    deviation = l1_epigraph(builder, n, "deviation", weight=1.0 / n)
    builder.add_equality([(w, born.as_operator())] + deviation.residual_terms(-1.0), p.probabilities, name="born")
    solution = solve(builder.build(), options)
    if solution.status is SolverStatus.INFEASIBLE:
        raise SolverError("Reconstruction program reported infeasible", solution.status)

    process = ProcessMatrix(_polish(solution.values["W"], impose_future_x), SWITCH_LAYOUT, "reconstructed")
    r = residual(process, p, family, born)
    diagnostics = solution.diagnostics()
    diagnostics["validity"] = repr(process.check(validity_projector()))
    logger.info(f"Reconstructed {family.value} table: r = {r:.3e} ({solution.status.value})")
    return ReconstructionResult(process, r, family, impose_future_x, diagnostics)


def worst_case(p: ProbabilityTable, g: Witness, epsilon: float, options: Optional[SolverOptions] = None,
               born: Optional[BornMatrix] = None, min_residual: Optional[float] = None) -> WorstCaseResult:
    """
    max Tr(G·W) over valid W with (1/N) Σ |Tr(S·W) − p_exp| ≤ ε.

    ``min_residual`` is the residual of the reconstruction, an upper bound on the
    smallest attainable deviation. ε more than RESIDUAL_SLACK below it is
    reported as Infeasible without solving; anything closer is solved.
    """
    if epsilon < 0:
        raise ValidationError(f"epsilon must be non-negative, got {epsilon}")
    if g.family is not p.family:
        raise ValidationError(f"Witness family '{g.family.value}' does not match table family '{p.family.value}'")
    if min_residual is not None and epsilon < min_residual - RESIDUAL_SLACK:
        logger.info(f"epsilon {epsilon:.4g} is below the attainable deviation {min_residual:.4g}")
        return WorstCaseResult(epsilon, SolverStatus.INFEASIBLE, float("nan"), None, {"status": "Infeasible"})
    born = born or BornMatrix(p.family)
    n = born.n_settings

    builder = ProgramBuilder()
    w = _add_valid_process(builder, False)
    deviation = l1_epigraph(builder, n, "deviation", weight=0.0)
    builder.add_equality([(w, born.as_operator())] + deviation.residual_terms(-1.0), p.probabilities, name="born")
    slack = builder.add_nonneg("budget_slack", 1)
    builder.add_equality(deviation.sum_terms(1.0 / n) + [(slack, 1.0)], [epsilon], name="budget")
    builder.add_objective(w, -to_coords(g.matrix))
    solution = solve(builder.build(), options)

    status = solution.status
    if status is SolverStatus.MAX_ITER and solution.equality_residual > UNRESOLVED_RESIDUAL:
        logger.info(f"Unconverged solve at epsilon {epsilon:.4g} leaves residual {solution.equality_residual:.2e}; "
                    "treating as infeasible")
        status = SolverStatus.INFEASIBLE
    diagnostics = solution.diagnostics()
    diagnostics["status"] = status.value
    if status is SolverStatus.INFEASIBLE:
        return WorstCaseResult(epsilon, status, float("nan"), None, diagnostics)
    process = ProcessMatrix(solution.matrix("W"), SWITCH_LAYOUT, "worst-case")
    value = -solution.objective
    logger.info(f"Worst case at epsilon {epsilon:.4g}: Tr(GW) = {value:.6f}")
    return WorstCaseResult(epsilon, status, value, process, diagnostics)


def default_eps_grid(r: float, stop: float = DEFAULT_EPS_STOP, step: float = DEFAULT_EPS_STEP) -> np.ndarray:
    """From the reconstruction residual r up to ``stop`` in steps of ``step``."""
    if r >= stop:
        return np.array([r])
    count = int(np.floor((stop - r) / step + 1e-9)) + 1
    return r + step * np.arange(count)


def parse_eps_grid(text: str) -> np.ndarray:
    """Parse ``start:end:step`` (end inclusive)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValidationError(f"epsilon grid '{text}' must look like start:end:step")
    try:
        start, end, step = (float(x) for x in parts)
    except ValueError as e:
        raise ValidationError(f"epsilon grid '{text}' has a non-numeric field") from e
    if start < 0 or end < start or step <= 0:
        raise ValidationError(f"epsilon grid '{text}' needs 0 <= start <= end and step > 0")
    count = int(np.floor((end - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def sweep_worst_case(p: ProbabilityTable, witnesses: Union[Dict[str, Witness], Iterable[Witness]],
                     eps_grid: Optional[Iterable[float]] = None, options: Optional[SolverOptions] = None,
                     min_residual: Optional[float] = None) -> pd.DataFrame:
    """
    Worst-case witness value of every witness over an ε grid.

    Columns: witness, epsilon, status, value. Without a grid the default grid
    starts at the reconstruction residual of ``p``.
    """
    if not isinstance(witnesses, dict):
        witnesses = {g.label: g for g in witnesses}
    born = BornMatrix(p.family)
    if min_residual is None:
        min_residual = reconstruct(p, options=options, born=born).residual
    grid = default_eps_grid(min_residual) if eps_grid is None else np.asarray(list(eps_grid), dtype=float)
    rows: List[dict] = []
    for label, g in witnesses.items():
        for epsilon in grid:
            result = worst_case(p, g, float(epsilon), options, born, min_residual)
            rows.append({"witness": label, "epsilon": float(epsilon), "status": result.status.value,
                         "value": result.value})
    return pd.DataFrame(rows, columns=["witness", "epsilon", "status", "value"])


def crossing_epsilon(sweep: pd.DataFrame, witness: str) -> Optional[float]:
    """Smallest ε where the worst-case value of ``witness`` reaches zero (linear interpolation)."""
    curve = sweep[(sweep["witness"] == witness) & sweep["value"].notna()].sort_values("epsilon")
    eps = curve["epsilon"].to_numpy()
    values = curve["value"].to_numpy()
    for i, value in enumerate(values):
        if value >= 0:
            if i == 0:
                return float(eps[0])
            e0, e1, v0, v1 = eps[i - 1], eps[i], values[i - 1], value
            return float(e0 + (0 - v0) * (e1 - e0) / (v1 - v0))
    return None


def probability_comparison(w, p: ProbabilityTable, born: Optional[BornMatrix] = None) -> pd.DataFrame:
    """Per-setting measured vs. predicted probabilities with their deviation."""
    born = born or BornMatrix(p.family)
    matrix = w.matrix if isinstance(w, ProcessMatrix) else np.asarray(w)
    frame = p.to_frame().rename(columns={"p": "p_exp"})
    frame["p_model"] = born.probabilities(matrix)
    frame["deviation"] = frame["p_exp"] - frame["p_model"]
    return frame
