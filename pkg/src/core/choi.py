"""
Choi representation of channels, measurements and measure-and-reprepare instruments.

Conventions: the Choi operator of a map E from dimension d_in to d_out is
C = Σ_ij |i⟩⟨j| ⊗ E(|i⟩⟨j|) (unnormalized, input factor first), so a channel acts
as E(ρ) = Tr_in((ρ^T ⊗ I) C) and Tr C = d_in for a trace-preserving map.
"""
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import unitary_group

from core.models import ValidationError
from core.qsys import HADAMARD, PHASE_S, herm_eig, is_hermitian, kron, projector

CHOI_TOL = 1e-10


class ChoiOperator:
    """Choi matrix of a linear map between a d_in- and a d_out-dimensional system."""

    def __init__(self, matrix: np.ndarray, in_dim: int, out_dim: int):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (in_dim * out_dim, in_dim * out_dim):
            raise ValidationError(f"Choi matrix shape {matrix.shape} does not match {in_dim}x{out_dim}")
        self.matrix = matrix
        self.in_dim = in_dim
        self.out_dim = out_dim

    def output_marginal(self) -> np.ndarray:
        """Tr_out C, an operator on the input factor."""
        tensor = self.matrix.reshape(self.in_dim, self.out_dim, self.in_dim, self.out_dim)
        return np.einsum("iaja->ij", tensor)

    def is_cp(self, tol: float = CHOI_TOL) -> bool:
        if not is_hermitian(self.matrix, tol):
            return False
        values, _ = herm_eig(self.matrix)
        return bool(values[0] >= -tol)

    def is_tp(self, tol: float = CHOI_TOL) -> bool:
        return bool(np.allclose(self.output_marginal(), np.eye(self.in_dim), atol=tol, rtol=0))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return apply_channel(self, rho)

    def __add__(self, other: "ChoiOperator") -> "ChoiOperator":
        if (self.in_dim, self.out_dim) != (other.in_dim, other.out_dim):
            raise ValidationError("Cannot add Choi operators of different shapes")
        return ChoiOperator(self.matrix + other.matrix, self.in_dim, self.out_dim)

    def __repr__(self):
        return f"ChoiOperator(in_dim={self.in_dim}, out_dim={self.out_dim}, trace={np.trace(self.matrix).real:.6g})"


class Povm:
    """A list of effects summing to the identity."""

    def __init__(self, effects: Sequence[np.ndarray], labels: Optional[Sequence] = None):
        self.effects = [np.asarray(e, dtype=complex) for e in effects]
        self.labels = list(labels) if labels is not None else list(range(1, len(self.effects) + 1))

    def validate(self, tol: float = CHOI_TOL) -> None:
        dim = self.effects[0].shape[0]
        for label, effect in zip(self.labels, self.effects):
            if not is_hermitian(effect, tol) or herm_eig(effect)[0][0] < -tol:
                raise ValidationError(f"Effect {label} is not positive semidefinite")
        if not np.allclose(sum(self.effects), np.eye(dim), atol=tol, rtol=0):
            raise ValidationError("Effects do not sum to the identity")

    def __repr__(self):
        return f"Povm(outcomes={self.labels})"


class Instrument:
    """Quantum instrument: CP elements whose sum is trace preserving."""

    def __init__(self, elements: Sequence[ChoiOperator], labels: Optional[Sequence] = None):
        self.elements = list(elements)
        self.labels = list(labels) if labels is not None else list(range(1, len(self.elements) + 1))

    def total(self) -> ChoiOperator:
        total = self.elements[0]
        for element in self.elements[1:]:
            total = total + element
        return total

    def validate(self, tol: float = CHOI_TOL) -> None:
        for label, element in zip(self.labels, self.elements):
            if not element.is_cp(tol):
                raise ValidationError(f"Instrument element {label} is not completely positive")
        if not self.total().is_tp(tol):
            raise ValidationError("Instrument elements do not sum to a trace-preserving map")

    def __repr__(self):
        return f"Instrument(outcomes={self.labels})"


def _check_unitary(u: np.ndarray, tol: float = CHOI_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValidationError(f"Expected a square matrix, got shape {u.shape}")
    if not np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=tol, rtol=0):
        raise ValidationError("Matrix is not unitary")
    return u


def choi_vector_of_unitary(u: np.ndarray) -> np.ndarray:
    """|U⟩⟩ = Σ_i |i⟩ ⊗ U|i⟩."""
    u = _check_unitary(u)
    return u.T.reshape(u.shape[0] ** 2)


def unitary_choi(u: np.ndarray) -> ChoiOperator:
    vec = choi_vector_of_unitary(u)
    dim = u.shape[0]
    return ChoiOperator(np.outer(vec, vec.conj()), dim, dim)


def kraus_choi(kraus: Sequence[np.ndarray]) -> ChoiOperator:
    """Choi operator of the map ρ → Σ K ρ K†."""
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    out_dim, in_dim = kraus[0].shape
    matrix = np.zeros((in_dim * out_dim, in_dim * out_dim), dtype=complex)
    for k in kraus:
        vec = k.T.reshape(in_dim * out_dim)
        matrix += np.outer(vec, vec.conj())
    return ChoiOperator(matrix, in_dim, out_dim)


def apply_channel(c: ChoiOperator, rho: np.ndarray) -> np.ndarray:
    """E(ρ) = Tr_in((ρ^T ⊗ I) C)."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (c.in_dim, c.in_dim):
        raise ValidationError(f"State of shape {rho.shape} does not match channel input dimension {c.in_dim}")
    tensor = c.matrix.reshape(c.in_dim, c.out_dim, c.in_dim, c.out_dim)
    # Σ_ij ρ_ij C[(i,a),(j,b)]
    return np.einsum("ij,iajb->ab", rho, tensor)


def measure_reprepare(effect: np.ndarray, sigma: np.ndarray) -> ChoiOperator:
    """R = M^T ⊗ σ: measure with effect M, then prepare σ."""
    effect = np.asarray(effect, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if not is_hermitian(effect) or herm_eig(effect)[0][0] < -CHOI_TOL:
        raise ValidationError("Measurement effect must be positive semidefinite")
    if not is_hermitian(sigma) or herm_eig(sigma)[0][0] < -CHOI_TOL or abs(np.trace(sigma) - 1) > CHOI_TOL:
        raise ValidationError("Repreparation must be a density matrix")
    return ChoiOperator(kron(effect.T, sigma), effect.shape[0], sigma.shape[0])


def link_channels(first: ChoiOperator, second: ChoiOperator) -> ChoiOperator:
    """Choi operator of ``second ∘ first`` via the link product over the shared system."""
    if first.out_dim != second.in_dim:
        raise ValidationError("Output of the first channel does not match input of the second")
    a = first.matrix.reshape(first.in_dim, first.out_dim, first.in_dim, first.out_dim)
    b = second.matrix.reshape(second.in_dim, second.out_dim, second.in_dim, second.out_dim)
    # C[(i,o),(j,p)] = Σ_mn A[(i,m),(j,n)] B[(m,o),(n,p)]
    linked = np.einsum("imjn,monp->iojp", a, b)
    size = first.in_dim * second.out_dim
    return ChoiOperator(linked.reshape(size, size), first.in_dim, second.out_dim)


def depolarizing_choi(dim: int, p: float = 1.0) -> ChoiOperator:
    """(1−p)·identity channel + p·fully depolarizing channel."""
    identity = unitary_choi(np.eye(dim)).matrix
    return ChoiOperator((1 - p) * identity + p * np.eye(dim * dim) / dim, dim, dim)


def replacement_choi(sigma: np.ndarray) -> ChoiOperator:
    """Channel that discards its input and prepares σ."""
    sigma = np.asarray(sigma, dtype=complex)
    dim = sigma.shape[0]
    return ChoiOperator(kron(np.eye(dim), sigma), dim, dim)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    return unitary_group.rvs(dim, random_state=rng)


def random_channel(dim: int, rng: np.random.Generator, env_dim: int = 2) -> ChoiOperator:
    """Random CPTP map from a Haar-random unitary on system ⊗ environment."""
    u = random_unitary(dim * env_dim, rng).reshape(dim, env_dim, dim, env_dim)
    # environment starts in |0⟩ and is traced out
    kraus = [u[:, e, :, 0] for e in range(env_dim)]
    return kraus_choi(kraus)


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    return projector(random_unitary(dim, rng)[:, 0])


def clifford_unitaries() -> List[np.ndarray]:
    """The 24 single-qubit Clifford unitaries (up to phase) generated by H and S."""
    def key(u):
        pivot = u.flat[np.flatnonzero(np.abs(u) > 1e-9)[0]]
        u = u / (pivot / abs(pivot))
        return tuple(np.round(np.concatenate([u.real.ravel(), u.imag.ravel()]), 8))

    found = {key(np.eye(2)): np.eye(2, dtype=complex)}
    frontier = [np.eye(2, dtype=complex)]
    while frontier:
        grown = []
        for u in frontier:
            for g in (HADAMARD, PHASE_S):
                v = g @ u
                k = key(v)
                if k not in found:
                    found[k] = v
                    grown.append(v)
        frontier = grown
    return [found[k] for k in sorted(found)]
