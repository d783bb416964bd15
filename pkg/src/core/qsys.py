"""
Dense complex linear algebra over labeled tensor-product spaces.

Matrices are plain complex ``numpy`` arrays. Factor order always follows the
``SystemLayout`` (leftmost factor is the most significant index). Most routines
accept a stack of matrices with leading batch dimensions.
"""
import functools
import json
import math
import string
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.models import LayoutError, NotHermitianError, ValidationError

KNOWN_LABELS = ("P_c", "P_t", "A_in", "A_out", "B_in", "B_out", "F_c", "F_t")

HERMITIAN_TOL = 1e-10

SQRT2 = math.sqrt(2.0)

# Single-qubit constants
I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / SQRT2
PHASE_S = np.array([[1, 0], [0, 1j]], dtype=complex)

KET_0 = np.array([1, 0], dtype=complex)
KET_1 = np.array([0, 1], dtype=complex)
KET_PLUS = np.array([1, 1], dtype=complex) / SQRT2
KET_MINUS = np.array([1, -1], dtype=complex) / SQRT2
KET_Y_PLUS = np.array([1, 1j], dtype=complex) / SQRT2
KET_Y_MINUS = np.array([1, -1j], dtype=complex) / SQRT2


def projector(ket: np.ndarray) -> np.ndarray:
    """Rank-1 projector onto a (not necessarily normalized) ket."""
    ket = np.asarray(ket, dtype=complex)
    return np.outer(ket, ket.conj()) / np.vdot(ket, ket).real


class SystemLayout:
    """Ordered labeled tensor factors with their dimensions."""

    def __init__(self, factors: Iterable[Tuple[str, int]]):
        factors = tuple((str(label), int(dim)) for label, dim in factors)
        labels = [label for label, _ in factors]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"Duplicate factor labels in layout: {labels}")
        for label, dim in factors:
            if label not in KNOWN_LABELS:
                raise LayoutError(f"Unknown factor label '{label}'")
            if dim < 1:
                raise LayoutError(f"Factor '{label}' has invalid dimension {dim}")
        self.factors = factors

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(label for label, _ in self.factors)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(dim for _, dim in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=int))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"Label '{label}' is not part of layout {self.labels}") from None

    def dim_of(self, labels: Iterable[str]) -> int:
        return int(np.prod([self.factors[self.index(label)][1] for label in labels], dtype=int))

    def restrict(self, keep: Iterable[str]) -> "SystemLayout":
        """Layout of the kept factors in their original order."""
        keep = set(_check_labels(self, keep))
        return SystemLayout([f for f in self.factors if f[0] in keep])

    def without(self, drop: Iterable[str]) -> "SystemLayout":
        drop = set(_check_labels(self, drop))
        return SystemLayout([f for f in self.factors if f[0] not in drop])

    def to_json(self) -> List[List]:
        return [[label, dim] for label, dim in self.factors]

    def __eq__(self, other):
        return isinstance(other, SystemLayout) and self.factors == other.factors

    def __hash__(self):
        return hash(self.factors)

    def __iter__(self):
        return iter(self.factors)

    def __len__(self):
        return len(self.factors)

    def __repr__(self):
        return f"SystemLayout({', '.join(f'{label}:{dim}' for label, dim in self.factors)})"


SWITCH_LAYOUT = SystemLayout([
    ("P_t", 2), ("A_in", 2), ("A_out", 2), ("B_in", 2), ("B_out", 2), ("F_c", 2),
])

FULL_SWITCH_LAYOUT = SystemLayout([
    ("P_c", 2), ("P_t", 2), ("A_in", 2), ("A_out", 2),
    ("B_in", 2), ("B_out", 2), ("F_c", 2), ("F_t", 2),
])


def _check_labels(layout: SystemLayout, labels: Iterable[str]) -> List[str]:
    if isinstance(labels, str):
        labels = [labels]
    labels = list(labels)
    for label in labels:
        layout.index(label)
    return labels


def _check_square(m: np.ndarray, layout: SystemLayout) -> None:
    if m.ndim < 2 or m.shape[-1] != m.shape[-2] or m.shape[-1] != layout.dim:
        raise LayoutError(f"Matrix of shape {m.shape} does not match layout dimension {layout.dim}")


def kron(*terms: np.ndarray) -> np.ndarray:
    """Kronecker product of any number of factors, leftmost most significant."""
    if not terms:
        raise ValueError("kron needs at least one factor")
    return functools.reduce(np.kron, terms)


def partial_trace(m: np.ndarray, layout: SystemLayout, keep: Iterable[str]) -> np.ndarray:
    """Trace out every factor not listed in ``keep``; kept factors stay in layout order."""
    m = np.asarray(m)
    _check_square(m, layout)
    keep = set(_check_labels(layout, keep))
    n = len(layout)
    batch = m.shape[:-2]
    rows = list(string.ascii_letters[:n])
    cols = list(string.ascii_letters[n:2 * n])
    for i, label in enumerate(layout.labels):
        if label not in keep:
            cols[i] = rows[i]
    out_rows = [rows[i] for i, label in enumerate(layout.labels) if label in keep]
    out_cols = [cols[i] for i, label in enumerate(layout.labels) if label in keep]
    tensor = m.reshape(batch + layout.dims + layout.dims)
    subscripts = f"...{''.join(rows)}{''.join(cols)}->...{''.join(out_rows)}{''.join(out_cols)}"
    reduced = np.einsum(subscripts, tensor)
    kept_dim = layout.dim_of(label for label in layout.labels if label in keep)
    return reduced.reshape(batch + (kept_dim, kept_dim))


def partial_transpose(m: np.ndarray, layout: SystemLayout, subset: Iterable[str]) -> np.ndarray:
    """Transpose, in the computational basis, only the listed factors."""
    m = np.asarray(m)
    _check_square(m, layout)
    positions = [layout.index(label) for label in _check_labels(layout, subset)]
    n = len(layout)
    batch = m.shape[:-2]
    offset = len(batch)
    tensor = m.reshape(batch + layout.dims + layout.dims)
    axes = list(range(tensor.ndim))
    for i in positions:
        axes[offset + i], axes[offset + n + i] = axes[offset + n + i], axes[offset + i]
    return tensor.transpose(axes).reshape(m.shape)


def embed(m: np.ndarray, layout: SystemLayout, keep: Iterable[str]) -> np.ndarray:
    """Place an operator on the ``keep`` factors into ``layout`` as ``m ⊗ I`` on the others."""
    m = np.asarray(m)
    keep = set(_check_labels(layout, keep))
    kept = [i for i, label in enumerate(layout.labels) if label in keep]
    kept_dims = tuple(layout.dims[i] for i in kept)
    if m.shape[-1] != int(np.prod(kept_dims, dtype=int)):
        raise LayoutError(f"Operator of shape {m.shape} does not match factors {sorted(keep)}")
    n = len(layout)
    batch = m.shape[:-2]
    rows = string.ascii_letters[:n]
    cols = string.ascii_letters[n:2 * n]
    operands = [m.reshape(batch + kept_dims + kept_dims)]
    subscripts = ["..." + "".join(rows[i] for i in kept) + "".join(cols[i] for i in kept)]
    for i in range(n):
        if i not in kept:
            operands.append(np.eye(layout.dims[i]))
            subscripts.append(rows[i] + cols[i])
    full = np.einsum(",".join(subscripts) + "->..." + rows + cols, *operands)
    return full.reshape(batch + (layout.dim, layout.dim))


def trace_replace(m: np.ndarray, layout: SystemLayout, labels: Iterable[str]) -> np.ndarray:
    """Replace the listed factors by the normalized identity: Tr_X(m) ⊗ I_X/d_X."""
    labels = set(_check_labels(layout, labels))
    keep = [label for label in layout.labels if label not in labels]
    reduced = partial_trace(m, layout, keep)
    return embed(reduced, layout, keep) / layout.dim_of(labels)


def permute_factors(m: np.ndarray, layout: SystemLayout, order: Sequence[str]) -> Tuple[np.ndarray, SystemLayout]:
    """Reorder the tensor factors of ``m`` to follow ``order``."""
    m = np.asarray(m)
    _check_square(m, layout)
    order = _check_labels(layout, order)
    if sorted(order) != sorted(layout.labels):
        raise LayoutError(f"Permutation {order} does not cover layout {layout.labels}")
    perm = [layout.index(label) for label in order]
    n = len(layout)
    batch = m.shape[:-2]
    offset = len(batch)
    tensor = m.reshape(batch + layout.dims + layout.dims)
    axes = list(range(offset)) + [offset + i for i in perm] + [offset + n + i for i in perm]
    new_layout = SystemLayout([layout.factors[i] for i in perm])
    return tensor.transpose(axes).reshape(m.shape), new_layout


def trace_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Real part of Tr(a† b)."""
    return float(np.vdot(a, b).real)


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    m = np.asarray(m)
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    return bool(np.max(np.abs(m - np.swapaxes(m, -1, -2).conj()), initial=0.0) <= tol * scale)


def herm_eig(m: np.ndarray, tol: float = HERMITIAN_TOL) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and eigenvectors of a Hermitian matrix."""
    m = np.asarray(m, dtype=complex)
    if not is_hermitian(m, tol):
        raise NotHermitianError(f"Matrix of shape {m.shape} is not Hermitian within {tol}")
    sym = (m + np.swapaxes(m, -1, -2).conj()) / 2
    return np.linalg.eigh(sym)


def psd_project(m: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped to zero)."""
    values, vectors = herm_eig(m)
    clipped = np.clip(values, 0.0, None)
    out = (vectors * clipped[..., None, :]) @ np.swapaxes(vectors, -1, -2).conj()
    return (out + np.swapaxes(out, -1, -2).conj()) / 2


def is_psd(m: np.ndarray, tol: float = 1e-9) -> bool:
    values, _ = herm_eig(m)
    return bool(values.min() >= -tol)


# Hermitian coordinates: diagonal entries, then sqrt(2)·Re and sqrt(2)·Im of the upper triangle.
# The map is an isometry between (Hermitian matrices, Tr(AB)) and (R^{d²}, dot product).

@functools.lru_cache(maxsize=None)
def _coord_indices(dim: int):
    upper = np.triu_indices(dim, 1)
    return np.arange(dim), upper


def coords_dim(dim: int) -> int:
    return dim * dim


def matrix_dim(n_coords: int) -> int:
    dim = math.isqrt(int(n_coords))
    if dim * dim != n_coords:
        raise LayoutError(f"{n_coords} coordinates do not describe a square Hermitian matrix")
    return dim


def to_coords(m: np.ndarray) -> np.ndarray:
    """Hermitian matrix (or stack) → real coordinate vector(s)."""
    m = np.asarray(m)
    dim = m.shape[-1]
    diag, (iu, ju) = _coord_indices(dim)
    upper = m[..., iu, ju]
    return np.concatenate([
        m[..., diag, diag].real,
        SQRT2 * upper.real,
        SQRT2 * upper.imag,
    ], axis=-1)


def from_coords(x: np.ndarray, dim: Optional[int] = None) -> np.ndarray:
    """Real coordinate vector(s) → Hermitian matrix (or stack)."""
    x = np.asarray(x, dtype=float)
    dim = matrix_dim(x.shape[-1]) if dim is None else dim
    if x.shape[-1] != dim * dim:
        raise LayoutError(f"Expected {dim * dim} coordinates, got {x.shape[-1]}")
    diag, (iu, ju) = _coord_indices(dim)
    n_off = len(iu)
    m = np.zeros(x.shape[:-1] + (dim, dim), dtype=complex)
    m[..., diag, diag] = x[..., :dim]
    off = (x[..., dim:dim + n_off] + 1j * x[..., dim + n_off:]) / SQRT2
    m[..., iu, ju] = off
    m[..., ju, iu] = off.conj()
    return m


class HermitianCoords:
    """A Hermitian operator on a layout, stored as real orthonormal-basis coordinates."""

    def __init__(self, layout: SystemLayout, coords: np.ndarray):
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (layout.dim ** 2,):
            raise LayoutError(f"Expected {layout.dim ** 2} coordinates for {layout}, got {coords.shape}")
        self.layout = layout
        self.coords = coords

    @classmethod
    def from_matrix(cls, layout: SystemLayout, m: np.ndarray) -> "HermitianCoords":
        m = np.asarray(m)
        _check_square(m, layout)
        if not is_hermitian(m):
            raise NotHermitianError("HermitianCoords requires a Hermitian matrix")
        return cls(layout, to_coords(m))

    def matrix(self) -> np.ndarray:
        return from_coords(self.coords, self.layout.dim)

    def __repr__(self):
        return f"HermitianCoords(layout={self.layout}, norm={np.linalg.norm(self.coords):.6g})"


def linear_map_matrix(fn: Callable[[np.ndarray], np.ndarray], dim: int, chunk: int = 512) -> np.ndarray:
    """
    Real matrix of a linear map acting on Hermitian coordinates.

    ``fn`` receives a stack of Hermitian matrices of shape (k, dim, dim) and must
    return a real array of shape (k, n_out). Column i of the result is the image
    of the i-th coordinate basis element.
    """
    n = dim * dim
    columns = []
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        unit = np.zeros((stop - start, n))
        unit[np.arange(stop - start), np.arange(start, stop)] = 1.0
        columns.append(np.asarray(fn(from_coords(unit, dim)), dtype=float))
    return np.concatenate(columns, axis=0).T


def orthonormal_span(vectors: np.ndarray, cutoff: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (as rows) of the row span of ``vectors``, relative SVD cutoff."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    if vectors.size == 0:
        return np.zeros((0, vectors.shape[-1]))
    _, singular, vt = np.linalg.svd(vectors, full_matrices=False)
    if singular.size == 0 or singular[0] == 0.0:
        return np.zeros((0, vectors.shape[-1]))
    rank = int(np.sum(singular > cutoff * singular[0]))
    return vt[:rank]


def save_matrix(path, m: np.ndarray, layout: SystemLayout) -> None:
    """Write a matrix in the JSON interchange format."""
    m = np.asarray(m, dtype=complex)
    _check_square(m, layout)
    payload = {
        "layout": layout.to_json(),
        "re": m.real.ravel().tolist(),
        "im": m.imag.ravel().tolist(),
    }
    with open(path, mode="w", encoding="utf-8") as file:
        json.dump(payload, file)


def load_matrix(path) -> Tuple[np.ndarray, SystemLayout]:
    """Read a matrix written by ``save_matrix``."""
    with open(path, mode="r", encoding="utf-8") as file:
        payload = json.load(file)
    return matrix_from_json(payload)


def matrix_from_json(payload: dict) -> Tuple[np.ndarray, SystemLayout]:
    try:
        layout = SystemLayout(payload["layout"])
        re = np.asarray(payload["re"], dtype=float)
        im = np.asarray(payload["im"], dtype=float)
    except (KeyError, TypeError) as e:
        raise ValidationError(f"Malformed matrix file: {e}") from e
    if re.shape != (layout.dim ** 2,) or im.shape != re.shape:
        raise ValidationError(f"Matrix file holds {re.size} entries, layout needs {layout.dim ** 2}")
    return (re + 1j * im).reshape(layout.dim, layout.dim), layout
