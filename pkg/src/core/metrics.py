"""
Figures of merit: fidelity between process matrices, the commutation game
played with the SWITCH, and Monte Carlo error bars of the whole pipeline.
"""
import itertools
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.causal import Witness, evaluate_witness, optimal_witness
from core.conic import SolverOptions
from core.models import LayoutError, NoiseType, SeparabilityDefinition, SettingFamily, ValidationError, parse_enum
from core.procmat import ProcessMatrix, preset
from core.qsys import I2, KET_0, PAULI_X, PAULI_Y, PAULI_Z, herm_eig
from core.recon import reconstruct
from core.simlab import DEFAULT_JITTER_DEG, NoiseModel, exact_probabilities, normalize, simulate_counts, stat_error
from core.tomoset import BornMatrix

logger = logging.getLogger(__name__)

EIGEN_CLIP_TOL = 1e-10
BRACKET_TOL = 1e-9

PAULIS = {"I": I2, "X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    values, vectors = herm_eig(m)
    if values[0] < -EIGEN_CLIP_TOL:
        logger.warning(f"Clipping eigenvalue {values[0]:.3e} below -{EIGEN_CLIP_TOL:g} in matrix square root")
    roots = np.sqrt(np.clip(values, 0.0, None))
    return (vectors * roots) @ vectors.conj().T


def fidelity(w1, w2) -> float:
    """Uhlmann fidelity Tr√(√σ ρ √σ) of the trace-normalized matrices."""
    if isinstance(w1, ProcessMatrix) and isinstance(w2, ProcessMatrix) and w1.layout != w2.layout:
        raise LayoutError(f"Cannot compare processes on {w1.layout} and {w2.layout}")
    rho = np.asarray(getattr(w1, "matrix", w1))
    sigma = np.asarray(getattr(w2, "matrix", w2))
    if rho.shape != sigma.shape:
        raise LayoutError(f"Matrix shapes differ: {rho.shape} vs {sigma.shape}")
    traces = (np.trace(rho).real, np.trace(sigma).real)
    if min(traces) <= 0:
        raise ValidationError(f"Fidelity needs positive traces, got {traces}")
    rho = rho / traces[0]
    root = _sqrt_psd(sigma / traces[1])
    inner = root @ rho @ root
    values = herm_eig((inner + inner.conj().T) / 2)[0]
    return float(min(1.0, np.sum(np.sqrt(np.clip(values, 0.0, None)))))


class GamePair:
    """Unitaries handed to Alice and Bob with the bracket relation they are promised to satisfy."""

    def __init__(self, name: str, u_a: np.ndarray, u_b: np.ndarray):
        self.name = name
        self.u_a = np.asarray(u_a, dtype=complex)
        self.u_b = np.asarray(u_b, dtype=complex)
        commutator = np.linalg.norm(self.u_a @ self.u_b - self.u_b @ self.u_a)
        anticommutator = np.linalg.norm(self.u_a @ self.u_b + self.u_b @ self.u_a)
        if commutator <= BRACKET_TOL:
            self.relation = "commute"
        elif anticommutator <= BRACKET_TOL:
            self.relation = "anticommute"
        else:
            raise ValidationError(f"Pair {name} neither commutes nor anticommutes")

    @property
    def correct_outcome(self) -> int:
        return 0 if self.relation == "commute" else 1

    def __repr__(self):
        return f"GamePair({self.name}, {self.relation})"


class GameSpec:
    """Pairs of the commutation game, the control visibility v² and the target input state."""

    def __init__(self, pairs: Sequence[GamePair], visibility_sq: float = 1.0, target: Optional[np.ndarray] = None):
        if not 0.0 <= visibility_sq <= 1.0:
            raise ValidationError(f"visibility_sq must lie in [0, 1], got {visibility_sq}")
        if not pairs:
            raise ValidationError("A game needs at least one pair")
        self.pairs = list(pairs)
        self.visibility_sq = float(visibility_sq)
        self.target = KET_0 if target is None else np.asarray(target, dtype=complex)

    def __repr__(self):
        return f"GameSpec(pairs={len(self.pairs)}, visibility_sq={self.visibility_sq})"


def pauli_game(visibility_sq: float = 1.0) -> GameSpec:
    """All ten unordered pairs of {I, X, Y, Z}, identical pairs included."""
    pairs = [GamePair(f"{a}{b}", PAULIS[a], PAULIS[b])
             for a, b in itertools.combinations_with_replacement(PAULIS, 2)]
    return GameSpec(pairs, visibility_sq)


class GameResult:
    """Per-pair probabilities of the correct control outcome and the aggregate success probability."""

    def __init__(self, table: pd.DataFrame, success: float):
        self.table = table
        self.success = success

    def to_dict(self) -> dict:
        return {"success": self.success, "pairs": self.table.to_dict(orient="records")}

    def __repr__(self):
        return f"GameResult(success={self.success:.6f}, pairs={len(self.table)})"


def game_success(spec: GameSpec) -> GameResult:
    """
    Play every pair through the SWITCH with the control in |+⟩.

    The control ends up in ½|0⟩{A,B}|ψ⟩ + ½|1⟩[A,B]|ψ⟩; its coherence is damped by
    v = √(v²), so outcome 0 occurs with probability ½(1 + v·Re⟨U_A U_B ψ|U_B U_A ψ⟩).
    """
    v = np.sqrt(spec.visibility_sq)
    rows = []
    for pair in spec.pairs:
        a_first = pair.u_b @ pair.u_a @ spec.target
        b_first = pair.u_a @ pair.u_b @ spec.target
        overlap = float(np.vdot(b_first, a_first).real)
        p_zero = 0.5 * (1 + v * overlap)
        p_correct = p_zero if pair.correct_outcome == 0 else 1 - p_zero
        rows.append({"pair": pair.name, "relation": pair.relation, "p_correct": p_correct})
    table = pd.DataFrame(rows)
    by_relation = table.groupby("relation")["p_correct"].mean()
    success = float(by_relation.mean())
    logger.info(f"Commutation game at v^2 = {spec.visibility_sq}: p_succ = {success:.6f}")
    return GameResult(table, success)


def sampling_deviation(simulated, exact) -> float:
    """Mean absolute difference between a sampled and an exact probability table."""
    if simulated.family is not exact.family:
        raise ValidationError("Tables belong to different families")
    return float(np.mean(np.abs(simulated.probabilities - exact.probabilities)))


class MonteCarloConfig:
    """Settings of a Monte Carlo error-bar run; ``process`` is a preset name or a ProcessMatrix."""

    def __init__(self, process: Union[str, ProcessMatrix] = "switch-y-",
                 family: SettingFamily = SettingFamily.RESTRICTED, shots: Optional[int] = 1600,
                 jitter_deg: float = DEFAULT_JITTER_DEG, trials: int = 20, seed: int = 0,
                 impose_future_x: bool = True, reconstruct: bool = True,
                 witnesses: Sequence[Tuple[NoiseType, SeparabilityDefinition]] = ()):
        if trials < 1:
            raise ValidationError(f"trials must be at least 1, got {trials}")
        self.process = process if isinstance(process, ProcessMatrix) else preset(process)
        self.family = parse_enum(SettingFamily, family)
        self.noise = NoiseModel(shots, jitter_deg)
        self.trials = int(trials)
        self.seed = seed
        self.impose_future_x = bool(impose_future_x)
        self.reconstruct = bool(reconstruct)
        self.witnesses = [(parse_enum(NoiseType, n), parse_enum(SeparabilityDefinition, d)) for n, d in witnesses]

    def __repr__(self):
        return (f"MonteCarloConfig(process={self.process.name}, family={self.family.value}, {self.noise}, "
                f"trials={self.trials}, seed={self.seed})")


def monte_carlo_errorbars(config: MonteCarloConfig,
                          options: Optional[SolverOptions] = None) -> Tuple[pd.DataFrame, Dict[str, Dict[str, float]]]:
    """
    Repeat simulate → reconstruct → (fidelity, residual, witnesses) with fresh
    shot noise and waveplate jitter. Trial t draws from the t-th child of
    SeedSequence(seed), so trials are independent of each other and of their order.
    """
    w = config.process
    born = BornMatrix(config.family)
    exact = exact_probabilities(w, config.family, born)
    witnesses: List[Witness] = [optimal_witness(w, config.family, noise, definition, options)
                                for noise, definition in config.witnesses]
    children = np.random.SeedSequence(config.seed).spawn(config.trials)
    rows = []
    for trial, child in enumerate(children):
        counts = simulate_counts(w, config.family, config.noise, seed=child)
        p = normalize(counts)
        row = {"trial": trial, "sampling_deviation": sampling_deviation(p, exact)}
        if not config.noise.analytic:
            row["stat_error"] = stat_error(p, counts, "binomial")
        if config.reconstruct:
            result = reconstruct(p, impose_future_x=config.impose_future_x, options=options, born=born)
            row["fidelity"] = fidelity(result.process, w)
            row["residual"] = result.residual
            for g in witnesses:
                row[f"witness {g.label}"] = evaluate_witness(g, result.process)
        rows.append(row)
        logger.info(f"Monte Carlo trial {trial + 1}/{config.trials}: " +
                    ", ".join(f"{k}={v:.5g}" for k, v in row.items() if k != "trial"))
    frame = pd.DataFrame(rows)
    summary = {
        column: {"mean": float(frame[column].mean()), "std": float(frame[column].std(ddof=1)) if len(frame) > 1 else 0.0}
        for column in frame.columns if column != "trial"
    }
    return frame, summary
