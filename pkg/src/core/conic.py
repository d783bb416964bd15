"""
First-order conic solver for the tomography and causality programs.

Programs have the form

    minimize  cᵀx + const   subject to   A x = b,   x ∈ K

where x stacks the coordinates of every variable block and K is the product of
PSD cones (Hermitian coordinates), free blocks and nonnegative orthants. The
solver is an over-relaxed ADMM (Douglas–Rachford) splitting between the affine
set and the cone: the affine projection uses either a dense Cholesky factor of
A Aᵀ or warm-started conjugate gradients on A Aᵀ, the cone projection is
blockwise (eigenvalue clipping for PSD blocks).
"""
import json
import logging
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from core.models import SolverStatus, ValidationError
from core.qsys import from_coords, psd_project, to_coords

logger = logging.getLogger(__name__)


class BlockKind(Enum):
    PSD = "psd"
    FREE = "free"
    NONNEG = "nonneg"


class Block:
    """A variable block: a PSD matrix (``size`` = matrix dimension) or a real vector."""

    def __init__(self, name: str, kind: BlockKind, size: int, offset: int):
        self.name = name
        self.kind = kind
        self.size = int(size)
        self.offset = int(offset)

    @property
    def length(self) -> int:
        return self.size * self.size if self.kind is BlockKind.PSD else self.size

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)

    def __repr__(self):
        return f"Block(name={self.name!r}, kind={self.kind.value}, size={self.size})"


class Term:
    """Coefficient of one block inside one group of equality rows."""

    def __init__(self, block: Block, coeff, rows: int):
        self.block = block
        self.rows = rows
        cols = block.length
        if isinstance(coeff, (int, float, np.integer, np.floating)):
            if rows != cols:
                raise ValidationError(f"Scalar coefficient on '{block.name}' needs {cols} rows, group has {rows}")
            self.kind, self.value = "scalar", float(coeff)
        elif isinstance(coeff, LinearOperator):
            self._check_shape(coeff.shape)
            self.kind, self.value = "operator", coeff
        elif sp.issparse(coeff):
            self._check_shape(coeff.shape)
            self.kind, self.value = "sparse", sp.csr_matrix(coeff, dtype=float)
        else:
            coeff = np.asarray(coeff, dtype=float)
            if coeff.ndim == 1:
                coeff = coeff[:, None] if cols == 1 else coeff[None, :]
            self._check_shape(coeff.shape)
            self.kind, self.value = "dense", coeff

    def _check_shape(self, shape):
        if tuple(shape) != (self.rows, self.block.length):
            raise ValidationError(
                f"Coefficient on '{self.block.name}' has shape {tuple(shape)}, expected {(self.rows, self.block.length)}")

    @property
    def explicit(self) -> bool:
        return self.kind != "operator"

    def matvec(self, x_block: np.ndarray) -> np.ndarray:
        if self.kind == "scalar":
            return self.value * x_block
        if self.kind == "operator":
            return self.value.matvec(x_block).ravel()
        return self.value @ x_block

    def rmatvec(self, y_rows: np.ndarray) -> np.ndarray:
        if self.kind == "scalar":
            return self.value * y_rows
        if self.kind == "operator":
            return self.value.rmatvec(y_rows).ravel()
        return self.value.T @ y_rows

    def row_norms_sq(self) -> np.ndarray:
        if self.kind == "scalar":
            return np.full(self.rows, self.value ** 2)
        if self.kind == "dense":
            return np.sum(self.value ** 2, axis=1)
        if self.kind == "sparse":
            return np.asarray(self.value.multiply(self.value).sum(axis=1)).ravel()
        norms = getattr(self.value, "row_norms_sq", None)
        return np.ones(self.rows) if norms is None else np.asarray(norms, dtype=float)

    def to_sparse(self) -> sp.csr_matrix:
        if self.kind == "scalar":
            return sp.identity(self.rows, format="csr") * self.value
        if self.kind == "operator":
            raise ValidationError(f"Coefficient on '{self.block.name}' is only available as an operator")
        return sp.csr_matrix(self.value)

    def dense(self) -> np.ndarray:
        if self.kind == "dense":
            return self.value
        return self.to_sparse().toarray()


def _gram(t1: Term, t2: Term) -> np.ndarray:
    """t1 · t2ᵀ as a dense (rows1 × rows2) array for terms on the same block."""
    if t1.kind == "scalar" and t2.kind == "scalar":
        return t1.value * t2.value * np.eye(t1.rows)
    if t1.kind == "scalar":
        return t1.value * t2.dense().T
    if t2.kind == "scalar":
        return t2.value * t1.dense()
    product = t1.value @ t2.value.T
    return product.toarray() if sp.issparse(product) else np.asarray(product)


class Constraint:
    """A group of equality rows Σ coeff·x_block = rhs."""

    def __init__(self, name: str, terms: List[Term], rhs: np.ndarray):
        self.name = name
        self.terms = terms
        self.rhs = rhs

    @property
    def rows(self) -> int:
        return self.rhs.size

    def __repr__(self):
        return f"Constraint(name={self.name!r}, rows={self.rows}, blocks={[t.block.name for t in self.terms]})"


class ConicProgram:
    """Variable blocks, equality constraints and a linear objective."""

    def __init__(self, blocks: List[Block], constraints: List[Constraint], objective: np.ndarray,
                 objective_constant: float = 0.0):
        self.blocks = blocks
        self.constraints = constraints
        self.objective = objective
        self.objective_constant = objective_constant
        self._by_name = {block.name: block for block in blocks}

    @property
    def n(self) -> int:
        return sum(block.length for block in self.blocks)

    @property
    def m(self) -> int:
        return sum(c.rows for c in self.constraints)

    @property
    def explicit(self) -> bool:
        return all(t.explicit for c in self.constraints for t in c.terms)

    def block(self, name: str) -> Block:
        return self._by_name[name]

    def rhs(self) -> np.ndarray:
        if not self.constraints:
            return np.zeros(0)
        return np.concatenate([c.rhs for c in self.constraints])

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A x."""
        parts = []
        for c in self.constraints:
            y = np.zeros(c.rows)
            for t in c.terms:
                y += t.matvec(x[t.block.slice])
            parts.append(y)
        return np.concatenate(parts) if parts else np.zeros(0)

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        """Aᵀ y."""
        x = np.zeros(self.n)
        start = 0
        for c in self.constraints:
            y_rows = y[start:start + c.rows]
            for t in c.terms:
                x[t.block.slice] += t.rmatvec(y_rows)
            start += c.rows
        return x

    def row_norms_sq(self) -> np.ndarray:
        parts = []
        for c in self.constraints:
            norms = np.zeros(c.rows)
            for t in c.terms:
                norms += t.row_norms_sq()
            parts.append(norms)
        return np.concatenate(parts) if parts else np.zeros(0)

    def gram(self) -> np.ndarray:
        """Dense A Aᵀ assembled group by group."""
        offsets = np.cumsum([0] + [c.rows for c in self.constraints])
        gram = np.zeros((self.m, self.m))
        for gi, ci in enumerate(self.constraints):
            for gj in range(gi, len(self.constraints)):
                cj = self.constraints[gj]
                block = np.zeros((ci.rows, cj.rows))
                touched = False
                for ti in ci.terms:
                    for tj in cj.terms:
                        if ti.block is tj.block:
                            block += _gram(ti, tj)
                            touched = True
                if touched:
                    gram[offsets[gi]:offsets[gi + 1], offsets[gj]:offsets[gj + 1]] = block
                    if gj != gi:
                        gram[offsets[gj]:offsets[gj + 1], offsets[gi]:offsets[gi + 1]] = block.T
        return gram

    def constraint_matrix(self) -> sp.csr_matrix:
        """The full constraint matrix A (explicit programs only)."""
        rows = []
        for c in self.constraints:
            row = [None] * len(self.blocks)
            for t in c.terms:
                k = self.blocks.index(t.block)
                row[k] = t.to_sparse() if row[k] is None else row[k] + t.to_sparse()
            for k, block in enumerate(self.blocks):
                if row[k] is None:
                    row[k] = sp.csr_matrix((c.rows, block.length))
            rows.append(row)
        return sp.bmat(rows, format="csr")

    def dump(self, path) -> None:
        """Write the program as JSON (sparse triplets) for external cross-checks."""
        a = self.constraint_matrix().tocoo()
        payload = {
            "blocks": [{"name": b.name, "kind": b.kind.value, "size": b.size, "offset": b.offset} for b in self.blocks],
            "constraints": [{"name": c.name, "rows": c.rows} for c in self.constraints],
            "coordinates": "hermitian: diagonal, sqrt2*Re(upper), sqrt2*Im(upper), row-major upper triangle",
            "A": {"shape": list(a.shape), "row": a.row.tolist(), "col": a.col.tolist(), "data": a.data.tolist()},
            "b": self.rhs().tolist(),
            "c": self.objective.tolist(),
            "objective_constant": self.objective_constant,
        }
        with open(path, mode="w", encoding="utf-8") as file:
            json.dump(payload, file)

    def __repr__(self):
        return f"ConicProgram(blocks={len(self.blocks)}, n={self.n}, m={self.m})"


class ProgramBuilder:
    """Typed construction of a ConicProgram."""

    def __init__(self):
        self._blocks: List[Block] = []
        self._constraints: List[Constraint] = []
        self._objective: Dict[str, np.ndarray] = {}
        self._constant = 0.0
        self._offset = 0

    def _add(self, name: str, kind: BlockKind, size: int) -> Block:
        if any(b.name == name for b in self._blocks):
            raise ValidationError(f"Duplicate block name '{name}'")
        block = Block(name, kind, size, self._offset)
        self._offset += block.length
        self._blocks.append(block)
        return block

    def add_psd(self, name: str, dim: int) -> Block:
        return self._add(name, BlockKind.PSD, dim)

    def add_free(self, name: str, length: int) -> Block:
        return self._add(name, BlockKind.FREE, length)

    def add_nonneg(self, name: str, length: int) -> Block:
        return self._add(name, BlockKind.NONNEG, length)

    def add_equality(self, terms: Iterable[Tuple[Block, object]], rhs, name: Optional[str] = None) -> Constraint:
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float)).ravel()
        built = [Term(block, coeff, rhs.size) for block, coeff in terms]
        constraint = Constraint(name or f"c{len(self._constraints)}", built, rhs)
        self._constraints.append(constraint)
        return constraint

    def add_objective(self, block: Block, coeff) -> None:
        coeff = np.broadcast_to(np.asarray(coeff, dtype=float), (block.length,)).copy()
        self._objective[block.name] = self._objective.get(block.name, 0.0) + coeff

    def add_objective_constant(self, value: float) -> None:
        self._constant += float(value)

    def build(self) -> ConicProgram:
        c = np.zeros(self._offset)
        for block in self._blocks:
            if block.name in self._objective:
                c[block.slice] = self._objective[block.name]
        return ConicProgram(list(self._blocks), list(self._constraints), c, self._constant)


class L1Epigraph:
    """Residual r = u − v with u, v ≥ 0 so that Σ|r| = Σ(u + v) at the optimum."""

    def __init__(self, builder: ProgramBuilder, dim: int, name: str = "residual", weight: float = 1.0):
        self.dim = dim
        self.pos = builder.add_nonneg(f"{name}_pos", dim)
        self.neg = builder.add_nonneg(f"{name}_neg", dim)
        if weight:
            builder.add_objective(self.pos, weight)
            builder.add_objective(self.neg, weight)

    def residual_terms(self, sign: float = -1.0) -> List[Tuple[Block, float]]:
        """Terms adding ``sign · r`` to a group of ``dim`` rows."""
        return [(self.pos, sign), (self.neg, -sign)]

    def sum_terms(self, scale: float = 1.0) -> List[Tuple[Block, np.ndarray]]:
        """Terms of a single row equal to scale · Σ(u + v)."""
        ones = np.full(self.dim, scale)
        return [(self.pos, ones), (self.neg, ones)]

    def residual(self, solution: "Solution") -> np.ndarray:
        return solution.values[self.pos.name] - solution.values[self.neg.name]


def l1_epigraph(builder: ProgramBuilder, dim: int, name: str = "residual", weight: float = 1.0) -> L1Epigraph:
    return L1Epigraph(builder, dim, name, weight)


class DualConeMember:
    """G = P + C q with P PSD and C q orthogonal to a subspace (C: complement basis)."""

    def __init__(self, builder: ProgramBuilder, complement: np.ndarray, dim: int, name: str):
        self.complement = np.asarray(complement, dtype=float)
        self.psd = builder.add_psd(f"{name}_psd", dim)
        self.perp = builder.add_free(f"{name}_perp", self.complement.shape[1]) if self.complement.shape[1] else None

    def terms(self, sign: float = 1.0) -> List[Tuple[Block, object]]:
        terms = [(self.psd, sign)]
        if self.perp is not None:
            terms.append((self.perp, sign * self.complement))
        return terms

    def projected_terms(self, rows: np.ndarray, sign: float = 1.0) -> List[Tuple[Block, object]]:
        """Terms of ``rows · G``."""
        terms = [(self.psd, sign * rows)]
        if self.perp is not None:
            terms.append((self.perp, sign * (rows @ self.complement)))
        return terms

    def add_objective(self, builder: ProgramBuilder, weights: np.ndarray) -> None:
        """Add ⟨weights, G⟩ to the objective."""
        builder.add_objective(self.psd, weights)
        if self.perp is not None:
            builder.add_objective(self.perp, self.complement.T @ weights)

    def value(self, solution: "Solution") -> np.ndarray:
        g = solution.values[self.psd.name].copy()
        if self.perp is not None:
            g += self.complement @ solution.values[self.perp.name]
        return g


def dual_cone_membership(builder: ProgramBuilder, complement: np.ndarray, psd_dim: int,
                         name: str = "dual") -> DualConeMember:
    return DualConeMember(builder, complement, psd_dim, name)


class SolverOptions:
    """All solver defaults in one record."""

    FIELDS = ("eps_abs", "eps_rel", "max_iter", "rho", "alpha", "infeasibility_window",
              "infeasibility_tol", "linear_solver", "direct_max_rows", "cg_tol", "cg_max_iter",
              "log_every", "precondition")

    def __init__(self, eps_abs: float = 1e-8, eps_rel: float = 1e-8, max_iter: int = 20000,
                 rho: float = 1.0, alpha: float = 1.6, infeasibility_window: int = 500,
                 infeasibility_tol: float = 1e-6, linear_solver: str = "auto",
                 direct_max_rows: int = 10000, cg_tol: float = 1e-10, cg_max_iter: int = 1000,
                 log_every: int = 500, precondition: bool = True):
        if linear_solver not in ("auto", "direct", "indirect", "structured"):
            raise ValidationError(f"Unknown linear solver '{linear_solver}'")
        if not 0 < alpha < 2:
            raise ValidationError(f"Relaxation alpha must lie in (0, 2), got {alpha}")
        if rho <= 0:
            raise ValidationError(f"Penalty rho must be positive, got {rho}")
        self.eps_abs = float(eps_abs)
        self.eps_rel = float(eps_rel)
        self.max_iter = int(max_iter)
        self.rho = float(rho)
        self.alpha = float(alpha)
        self.infeasibility_window = int(infeasibility_window)
        self.infeasibility_tol = float(infeasibility_tol)
        self.linear_solver = linear_solver
        self.direct_max_rows = int(direct_max_rows)
        self.cg_tol = float(cg_tol)
        self.cg_max_iter = int(cg_max_iter)
        self.log_every = int(log_every)
        self.precondition = bool(precondition)

    @classmethod
    def from_mapping(cls, mapping: Optional[dict]) -> "SolverOptions":
        mapping = dict(mapping or {})
        unknown = set(mapping) - set(cls.FIELDS)
        if unknown:
            raise ValidationError(f"Unknown solver options: {sorted(unknown)}")
        return cls(**mapping)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    def replace(self, **changes) -> "SolverOptions":
        values = self.to_dict()
        values.update({k: v for k, v in changes.items() if v is not None})
        return SolverOptions(**values)

    def __repr__(self):
        return "SolverOptions(" + ", ".join(f"{k}={v}" for k, v in self.to_dict().items()) + ")"


class Solution:
    """Block values, objective, residuals and status of a solve."""

    def __init__(self, program: ConicProgram, x: np.ndarray, objective: float, primal_residual: float,
                 dual_residual: float, iterations: int, status: SolverStatus,
                 equality_residual: float, multipliers: np.ndarray):
        self.program = program
        self.x = x
        self.values = {block.name: x[block.slice].copy() for block in program.blocks}
        self.objective = objective
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        self.iterations = iterations
        self.status = status
        self.equality_residual = equality_residual
        self.multipliers = multipliers

    def matrix(self, name: str) -> np.ndarray:
        block = self.program.block(name)
        if block.kind is not BlockKind.PSD:
            raise ValidationError(f"Block '{name}' is not a matrix block")
        return from_coords(self.values[name], block.size)

    def diagnostics(self) -> dict:
        return {
            "status": self.status.value,
            "objective": self.objective,
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "equality_residual": self.equality_residual,
        }

    def __repr__(self):
        return (f"Solution(status={self.status.value}, objective={self.objective:.8g}, "
                f"iterations={self.iterations}, primal={self.primal_residual:.2e}, dual={self.dual_residual:.2e})")


class _DirectProjector:
    """Affine projection with a dense factorization of A Aᵀ."""

    def __init__(self, program: ConicProgram, scale: np.ndarray):
        gram = program.gram() * scale[:, None] * scale[None, :]
        self._solve = _factor_spd(gram, "Normal matrix")
        logger.debug(f"Normal matrix {gram.shape[0]}x{gram.shape[0]} factorized")

    def solve(self, r: np.ndarray) -> np.ndarray:
        return self._solve(r)


class _IterativeProjector:
    """Affine projection with warm-started conjugate gradients on A Aᵀ."""

    def __init__(self, program: ConicProgram, scale: np.ndarray, options: SolverOptions):
        self._options = options
        m = program.m
        self._operator = LinearOperator(
            (m, m),
            matvec=lambda v: scale * program.apply(program.apply_adjoint(scale * v)),
            dtype=float,
        )
        self._warm = np.zeros(m)

    def solve(self, r: np.ndarray) -> np.ndarray:
        tol = self._options.cg_tol
        atol = tol * max(1.0, float(np.linalg.norm(r)))
        solution, info = cg(self._operator, r, x0=self._warm, rtol=tol, atol=atol,
                            maxiter=self._options.cg_max_iter)
        if info > 0:
            logger.debug(f"CG stopped after {info} iterations without reaching tolerance")
        self._warm = solution
        return solution


def _factor_spd(matrix: np.ndarray, what: str):
    """Solve callback for a symmetric positive (semi)definite matrix."""
    try:
        factor = scipy.linalg.cho_factor(matrix, lower=False, check_finite=False)
        return lambda r: scipy.linalg.cho_solve(factor, r, check_finite=False)
    except np.linalg.LinAlgError:
        logger.warning(f"{what} is singular; falling back to an eigendecomposition pseudo-inverse")
        values, vectors = scipy.linalg.eigh(matrix, check_finite=False)
        keep = values > 1e-10 * max(values.max(), 1e-300)
        inv = np.zeros_like(values)
        inv[keep] = 1.0 / values[keep]

        def pseudo_solve(r):
            projected = vectors.T @ r
            return vectors @ (inv.reshape((-1,) + (1,) * (projected.ndim - 1)) * projected)
        return pseudo_solve


def _structured_group(program: ConicProgram) -> Optional[int]:
    """
    Index of the constraint group of the form B x + Σ s_i y_i = b, if the program
    has exactly one implicit group and its operator B exposes ``normal_matrix``.
    """
    implicit = [i for i, c in enumerate(program.constraints) if not all(t.explicit for t in c.terms)]
    if len(implicit) != 1:
        return None
    group = program.constraints[implicit[0]]
    operators = [t for t in group.terms if t.kind == "operator"]
    if len(operators) != 1 or getattr(operators[0].value, "normal_matrix", None) is None:
        return None
    if any(t.kind not in ("operator", "scalar") for t in group.terms):
        return None
    names = [t.block.name for t in group.terms]
    if len(set(names)) != len(names):
        return None
    return implicit[0]


class _StructuredProjector:
    """
    Affine projection for programs with one large operator group.

    That group reads B x + Σ s_i y_i = b, so its normal block is B Bᵀ + c I with
    c = Σ s_i². With BᵀB available, (B Bᵀ + c I)⁻¹ follows from the Woodbury
    identity and the remaining explicit rows are handled by a Schur complement.
    """

    def __init__(self, program: ConicProgram, scale: np.ndarray, index: int):
        group = program.constraints[index]
        op_term = next(t for t in group.terms if t.kind == "operator")
        scalars = {t.block.name: t.value for t in group.terms if t.kind == "scalar"}
        self._c = sum(v * v for v in scalars.values())
        if self._c <= 0:
            raise ValidationError("Structured projection needs a scalar term next to the operator")
        self._operator = op_term.value
        normal = self._operator.normal_matrix
        normal = np.asarray(normal() if callable(normal) else normal, dtype=float)
        self._inner = _factor_spd(normal + self._c * np.eye(normal.shape[0]), "Operator normal matrix")

        offsets = np.cumsum([0] + [c.rows for c in program.constraints])
        self._rows0 = slice(offsets[index], offsets[index + 1])
        rest = [c for i, c in enumerate(program.constraints) if i != index]
        self._rest = np.concatenate(
            [np.arange(offsets[i], offsets[i + 1]) for i in range(len(program.constraints)) if i != index]
            or [np.zeros(0, dtype=int)]).astype(int)
        self._d0 = scale[self._rows0]
        d1 = scale[self._rest]
        if not rest:
            return

        # cross terms between the operator group and the explicit rows
        cross = np.zeros((group.rows, self._rest.size))
        col = 0
        for c in rest:
            for t in c.terms:
                if t.block is op_term.block:
                    cross[:, col:col + c.rows] += self._operator.matmat(t.dense().T)
                elif t.block.name in scalars:
                    cross[:, col:col + c.rows] += scalars[t.block.name] * t.dense().T
            col += c.rows
        h_cross = self._apply_h(cross)
        gram = ConicProgram(program.blocks, rest, program.objective).gram()
        schur = d1[:, None] * (gram - cross.T @ h_cross) * d1[None, :]
        self._schur = _factor_spd(schur, "Schur complement")
        self._cross = cross * d1[None, :]
        self._h_cross = h_cross * d1[None, :]
        logger.debug(f"Structured projection: {group.rows} operator rows, {self._rest.size} explicit rows")

    def _apply_h(self, y: np.ndarray) -> np.ndarray:
        """(B Bᵀ + c I)⁻¹ y for a vector or the columns of a matrix."""
        if y.ndim == 2:
            inner = self._inner(self._operator.rmatmat(y))
            return (y - self._operator.matmat(inner)) / self._c
        inner = self._inner(self._operator.rmatvec(y))
        return (y - self._operator.matvec(inner).ravel()) / self._c

    def solve(self, r: np.ndarray) -> np.ndarray:
        h0 = self._apply_h(r[self._rows0] / self._d0)
        out = np.empty_like(r)
        if self._rest.size == 0:
            out[self._rows0] = h0 / self._d0
            return out
        b = self._schur(r[self._rest] - self._cross.T @ h0)
        out[self._rest] = b
        out[self._rows0] = (h0 - self._h_cross @ b) / self._d0
        return out


class ConicSolver:
    """
    Over-relaxed ADMM between the affine set {Ax = b} and the cone K.

    Each iteration:
        x = Π_aff(z − u − c/ρ)
        x̂ = α x + (1 − α) z
        z = Π_K(x̂ + u)
        u = u + x̂ − z
    Rows of A are equilibrated to unit norm before factorization.
    """

    def __init__(self, program: ConicProgram, options: Optional[SolverOptions] = None):
        self.program = program
        self.options = options or SolverOptions()
        self._b = program.rhs()
        norms = np.sqrt(program.row_norms_sq())
        if self.options.precondition:
            self._scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
        else:
            self._scale = np.ones(program.m)
        self._projector = self._choose_projector()

    def _choose_projector(self):
        mode = self.options.linear_solver
        structured = _structured_group(self.program)
        if mode == "auto":
            if self.program.explicit and self.program.m <= self.options.direct_max_rows:
                mode = "direct"
            else:
                mode = "structured" if structured is not None else "indirect"
        if mode == "direct" and not self.program.explicit:
            raise ValidationError("Direct linear solver needs explicit constraint coefficients")
        if mode == "structured" and structured is None:
            raise ValidationError("Structured linear solver needs one operator group exposing its normal matrix")
        logger.info(f"Solving {self.program} with {mode} affine projection")
        self.mode = mode
        if self.program.m == 0:
            return None
        if mode == "direct":
            return _DirectProjector(self.program, self._scale)
        if mode == "structured":
            return _StructuredProjector(self.program, self._scale, structured)
        return _IterativeProjector(self.program, self._scale, self.options)

    def _project_affine(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self._projector is None:
            return y, np.zeros(0)
        residual = self._scale * (self.program.apply(y) - self._b)
        lam = self._projector.solve(residual)
        return y - self.program.apply_adjoint(self._scale * lam), lam

    def _project_cone(self, v: np.ndarray) -> np.ndarray:
        out = v.copy()
        for block in self.program.blocks:
            if block.kind is BlockKind.PSD:
                out[block.slice] = to_coords(psd_project(from_coords(v[block.slice], block.size)))
            elif block.kind is BlockKind.NONNEG:
                out[block.slice] = np.maximum(v[block.slice], 0.0)
        return out

    def solve(self) -> Solution:
        opts = self.options
        program = self.program
        n = program.n
        c = program.objective
        rho, alpha = opts.rho, opts.alpha
        x = np.zeros(n)
        z = np.zeros(n)
        u = np.zeros(n)
        lam = np.zeros(program.m)
        status = SolverStatus.MAX_ITER
        r_prim = r_dual = np.inf
        window = opts.infeasibility_window
        checkpoint_u = u.copy()
        checkpoint_step = None
        step_sum = 0.0
        iteration = 0

        for iteration in range(1, opts.max_iter + 1):
            x, lam = self._project_affine(z - u - c / rho)
            x_hat = alpha * x + (1 - alpha) * z
            z_prev = z
            z = self._project_cone(x_hat + u)
            step = x_hat - z
            u = u + step

            r_prim = float(np.linalg.norm(x - z))
            r_dual = float(rho * np.linalg.norm(z - z_prev))
            eps_prim = opts.eps_abs * np.sqrt(n) + opts.eps_rel * max(np.linalg.norm(x), np.linalg.norm(z))
            eps_dual = opts.eps_abs * np.sqrt(n) + opts.eps_rel * rho * np.linalg.norm(u)
            if opts.log_every and iteration % opts.log_every == 0:
                logger.debug(f"iter {iteration}: primal {r_prim:.3e} dual {r_dual:.3e} objective {c @ z:.8g}")
            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = SolverStatus.OPTIMAL
                break

            # Infeasibility: the dual iterate keeps moving in one direction by a
            # non-vanishing step while the primal residual stalls.
            step_norm = float(np.linalg.norm(step))
            step_sum += step_norm
            if window and iteration % window == 0:
                drift = float(np.linalg.norm(u - checkpoint_u))
                stalled = (checkpoint_step is not None and step_norm > opts.infeasibility_tol
                           and step_norm >= 0.95 * checkpoint_step)
                aligned = step_sum > 0 and drift >= 0.95 * step_sum
                if stalled and aligned:
                    status = SolverStatus.INFEASIBLE
                    logger.info(f"Infeasibility detected at iteration {iteration} (step {step_norm:.3e}, drift {drift:.3e})")
                    break
                checkpoint_u = u.copy()
                checkpoint_step = step_norm
                step_sum = 0.0

        objective = float(c @ z) + program.objective_constant
        equality = float(np.linalg.norm(program.apply(z) - self._b)) if program.m else 0.0
        multipliers = rho * self._scale * lam if program.m else np.zeros(0)
        solution = Solution(program, z, objective, r_prim, r_dual, iteration, status, equality, multipliers)
        if status is SolverStatus.MAX_ITER:
            logger.warning(f"Solver stopped at max_iter={opts.max_iter}: {solution}")
        else:
            logger.info(f"Solver finished: {solution}")
        return solution


def solve(program: ConicProgram, options: Optional[SolverOptions] = None) -> Solution:
    """Solve a conic program with the ADMM splitting."""
    return ConicSolver(program, options).solve()


def dual_cone_gap(g_coords: np.ndarray, complement: np.ndarray, dim: int,
                  options: Optional[SolverOptions] = None) -> float:
    """
    min Tr(G·W) over unit-trace PSD W inside the subspace orthogonal to ``complement``.

    Non-negative iff G lies in the dual cone; a negative value comes with a PSD
    certificate W from the subspace.
    """
    builder = ProgramBuilder()
    w = builder.add_psd("W", dim)
    complement = np.asarray(complement, dtype=float)
    if complement.shape[1]:
        builder.add_equality([(w, complement.T)], np.zeros(complement.shape[1]), name="subspace")
    builder.add_equality([(w, to_coords(np.eye(dim)))], [1.0], name="trace")
    builder.add_objective(w, g_coords)
    return solve(builder.build(), options).objective
