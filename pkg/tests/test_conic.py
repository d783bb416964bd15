"""
Unit tests for the conic program builder and the ADMM solver.
"""
import json
import pytest
import sys
import os

import numpy as np
from scipy.sparse.linalg import aslinearoperator

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.conic import (
    ConicSolver, L1Epigraph, ProgramBuilder, SolverOptions, dual_cone_gap, dual_cone_membership, solve,
)
from core.models import SolverStatus, ValidationError
from core.qsys import to_coords

TIGHT = SolverOptions(eps_abs=1e-9, eps_rel=1e-9, max_iter=50000)


def l1_fit_program(matrix, data, operator=False):
    """min Σ|Bx − data| subject to Σx = 1, with B dense or wrapped as an operator."""
    rows, cols = matrix.shape
    builder = ProgramBuilder()
    x = builder.add_free("x", cols)
    epigraph = L1Epigraph(builder, rows)
    coeff = matrix
    if operator:
        coeff = aslinearoperator(matrix)
        coeff.normal_matrix = matrix.T @ matrix
    builder.add_equality([(x, coeff)] + epigraph.residual_terms(), data, name="fit")
    builder.add_equality([(x, np.ones(cols))], [1.0], name="sum")
    return builder.build()


class TestProgramBuilder:
    """Tests for ProgramBuilder and ConicProgram."""

    def test_block_layout(self):
        """Test blocks are laid out consecutively."""
        builder = ProgramBuilder()
        w = builder.add_psd("W", 3)
        s = builder.add_nonneg("s", 2)
        program = builder.build()
        assert w.length == 9
        assert s.slice == slice(9, 11)
        assert program.n == 11

    def test_duplicate_name(self):
        """Test reusing a block name raises ValidationError."""
        builder = ProgramBuilder()
        builder.add_free("x", 2)
        with pytest.raises(ValidationError):
            builder.add_free("x", 3)

    def test_coefficient_shape_checked(self):
        """Test a coefficient of the wrong shape raises ValidationError."""
        builder = ProgramBuilder()
        x = builder.add_free("x", 3)
        with pytest.raises(ValidationError):
            builder.add_equality([(x, np.ones((2, 2)))], [0.0, 0.0])

    def test_gram_matches_dense(self, rng):
        """Test the assembled A Aᵀ equals the product of the explicit matrix."""
        program = l1_fit_program(rng.normal(size=(5, 3)), rng.normal(size=5))
        a = program.constraint_matrix().toarray()
        assert np.allclose(program.gram(), a @ a.T)

    def test_adjoint(self, rng):
        """Test apply_adjoint is the transpose of apply."""
        program = l1_fit_program(rng.normal(size=(5, 3)), rng.normal(size=5))
        x, y = rng.normal(size=program.n), rng.normal(size=program.m)
        assert y @ program.apply(x) == pytest.approx(program.apply_adjoint(y) @ x)

    def test_dump(self, tmp_path, rng):
        """Test the JSON dump carries A, b and c."""
        program = l1_fit_program(rng.normal(size=(4, 2)), rng.normal(size=4))
        path = tmp_path / "program.json"
        program.dump(path)
        payload = json.loads(path.read_text())
        assert payload["A"]["shape"] == [program.m, program.n]
        assert len(payload["b"]) == program.m
        assert len(payload["c"]) == program.n


class TestSolverOptions:
    """Tests for SolverOptions."""

    def test_unknown_linear_solver(self):
        """Test an unknown linear solver raises ValidationError."""
        with pytest.raises(ValidationError):
            SolverOptions(linear_solver="qr")

    def test_alpha_range(self):
        """Test alpha outside (0, 2) raises ValidationError."""
        with pytest.raises(ValidationError):
            SolverOptions(alpha=2.0)

    def test_from_mapping_rejects_unknown(self):
        """Test unknown keys raise ValidationError."""
        with pytest.raises(ValidationError):
            SolverOptions.from_mapping({"tolerance": 1e-6})

    def test_replace_ignores_none(self):
        """Test replace keeps values passed as None."""
        options = SolverOptions(max_iter=10).replace(max_iter=None, eps_abs=1e-4)
        assert options.max_iter == 10
        assert options.eps_abs == 1e-4


class TestSolver:
    """Tests for the ADMM solver on problems with known optima."""

    def test_linear_program(self):
        """Test min x₁ + 2x₂ over the simplex picks the cheap vertex."""
        builder = ProgramBuilder()
        x = builder.add_nonneg("x", 2)
        builder.add_equality([(x, np.ones(2))], [1.0])
        builder.add_objective(x, [1.0, 2.0])
        solution = solve(builder.build(), TIGHT)
        assert solution.status is SolverStatus.OPTIMAL
        assert solution.objective == pytest.approx(1.0, abs=1e-6)
        assert np.allclose(solution.values["x"], [1.0, 0.0], atol=1e-5)

    def test_minimum_eigenvalue(self, rng):
        """Test min Tr(CX) over density matrices is λ_min(C)."""
        m = rng.normal(size=(3, 3))
        c = (m + m.T) / 2
        builder = ProgramBuilder()
        x = builder.add_psd("X", 3)
        builder.add_equality([(x, to_coords(np.eye(3)))], [1.0], name="trace")
        builder.add_objective(x, to_coords(c))
        solution = solve(builder.build(), TIGHT)
        assert solution.objective == pytest.approx(np.linalg.eigvalsh(c)[0], abs=1e-5)
        assert solution.matrix("X").shape == (3, 3)

    def test_l1_median(self):
        """Test the L1 fit of a constant is the median."""
        builder = ProgramBuilder()
        c = builder.add_free("c", 1)
        epigraph = L1Epigraph(builder, 3)
        builder.add_equality([(c, np.ones(3))] + epigraph.residual_terms(), [0.0, 1.0, 5.0])
        solution = solve(builder.build(), TIGHT)
        assert solution.values["c"][0] == pytest.approx(1.0, abs=1e-4)
        assert solution.objective == pytest.approx(5.0, abs=1e-4)
        assert np.allclose(epigraph.residual(solution), [1.0, 0.0, -4.0], atol=1e-4)

    def test_infeasible(self):
        """Test a nonnegative vector with negative sum is reported infeasible."""
        builder = ProgramBuilder()
        x = builder.add_nonneg("x", 2)
        builder.add_equality([(x, np.ones(2))], [-1.0])
        solution = solve(builder.build(), SolverOptions(max_iter=5000))
        assert solution.status is SolverStatus.INFEASIBLE

    def test_matrix_of_vector_block(self):
        """Test asking for a matrix from a vector block raises ValidationError."""
        builder = ProgramBuilder()
        x = builder.add_nonneg("x", 2)
        builder.add_equality([(x, np.ones(2))], [1.0])
        solution = solve(builder.build(), SolverOptions(max_iter=10))
        with pytest.raises(ValidationError):
            solution.matrix("x")

    def test_indirect_matches_direct(self, rng):
        """Test the CG projection reaches the same optimum as the factorization."""
        program = l1_fit_program(rng.normal(size=(12, 4)), rng.normal(size=12))
        direct = solve(program, TIGHT.replace(linear_solver="direct"))
        indirect = solve(program, TIGHT.replace(linear_solver="indirect"))
        assert indirect.objective == pytest.approx(direct.objective, abs=1e-5)

    def test_structured_matches_direct(self, rng):
        """Test the Woodbury/Schur projection reaches the same optimum."""
        matrix, data = rng.normal(size=(30, 5)), rng.normal(size=30)
        direct = solve(l1_fit_program(matrix, data), TIGHT)
        solver = ConicSolver(l1_fit_program(matrix, data, operator=True), TIGHT)
        assert solver.mode == "structured"
        structured = solver.solve()
        assert structured.objective == pytest.approx(direct.objective, abs=1e-5)
        assert np.allclose(structured.values["x"], direct.values["x"], atol=1e-4)

    def test_direct_needs_explicit(self, rng):
        """Test direct mode on an operator program raises ValidationError."""
        program = l1_fit_program(rng.normal(size=(6, 2)), rng.normal(size=6), operator=True)
        with pytest.raises(ValidationError):
            ConicSolver(program, SolverOptions(linear_solver="direct"))

    def test_structured_needs_operator(self, rng):
        """Test structured mode on an explicit program raises ValidationError."""
        program = l1_fit_program(rng.normal(size=(6, 2)), rng.normal(size=6))
        with pytest.raises(ValidationError):
            ConicSolver(program, SolverOptions(linear_solver="structured"))


class TestDualCone:
    """Tests for dual-cone membership helpers."""

    def test_gap_without_subspace(self):
        """Test the gap of G is its minimum eigenvalue."""
        g = np.diag([1.0, -2.0])
        assert dual_cone_gap(to_coords(g), np.zeros((4, 0)), 2, TIGHT) == pytest.approx(-2.0, abs=1e-5)

    def test_gap_on_diagonal_subspace(self):
        """Test off-diagonal negativity is invisible inside the diagonal subspace."""
        g = np.array([[1.0, 3.0], [3.0, 1.0]])
        complement = np.eye(4)[:, 2:]
        assert dual_cone_gap(to_coords(g), complement, 2, TIGHT) == pytest.approx(1.0, abs=1e-5)

    def test_member_value(self):
        """Test G = P + C q is reassembled from the solution."""
        builder = ProgramBuilder()
        complement = np.eye(4)[:, 2:]
        member = dual_cone_membership(builder, complement, 2, name="G")
        target = to_coords(np.array([[1.0, 3.0], [3.0, 1.0]]))
        builder.add_equality(member.terms(), target, name="fix")
        solution = solve(builder.build(), TIGHT)
        assert solution.status is SolverStatus.OPTIMAL
        assert np.allclose(member.value(solution), target, atol=1e-5)
