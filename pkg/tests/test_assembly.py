import numpy as np
import pytest
import scipy.sparse as sp

from src.assembly import (
    OperatorSet,
    apply_dirichlet,
    apply_dirichlet_rhs,
    assemble_bilinear,
    assemble_operators,
    assemble_traction,
    macro_divergence_integrals,
)
from src.common import AssemblyError
from src.krylov import pcg
from src.linalg import dense_factorize, dense_solve, is_symmetric, same_structure
from src.mesh import alfeld_split, structured_unit_square
from src.space import build_space, interpolate
from tests.oracles import inverse_power_min_eig, polygon_flux


def test_operators_symmetric(fine_level):
    ops = fine_level.operators
    assert is_symmetric(ops.A, 1e-12)
    assert is_symmetric(ops.C, 1e-12)
    assert same_structure(ops.A, ops.C)


@pytest.mark.parametrize(
    "field",
    [
        lambda x, y: (np.ones_like(x), np.zeros_like(y)),
        lambda x, y: (np.zeros_like(x), np.ones_like(y)),
        lambda x, y: (-y, x),
    ],
    ids=["translate-x", "translate-y", "rotation"],
)
def test_rigid_motions_in_kernel(fine_level, field):
    ops = fine_level.operators
    u = interpolate(fine_level.space, field)
    assert np.abs(ops.A @ u).max() <= 1e-11 * abs(ops.A).max()


def test_translations_are_divergence_free(fine_level):
    ops = fine_level.operators
    u = interpolate(fine_level.space, lambda x, y: (np.ones_like(x), np.zeros_like(y)))
    assert np.abs(ops.C @ u).max() <= 1e-12 * abs(ops.C).max()


def test_divdiv_of_unit_divergence(fine_level):
    u = interpolate(fine_level.space, lambda x, y: (x, np.zeros_like(y)))
    assert u @ (fine_level.operators.C @ u) == pytest.approx(1.0, abs=1e-12)


def test_divdiv_is_positive_semidefinite(coarse_level):
    eigenvalues = np.linalg.eigvalsh(coarse_level.operators.C.toarray())
    assert eigenvalues.min() > -1e-10 * eigenvalues.max()


def test_traction_load(fine_level):
    space = fine_level.space
    b = assemble_traction(space, 0.5)
    assert b[1::2].sum() == pytest.approx(-0.5, abs=1e-14)
    assert np.all(b[0::2] == 0.0)
    away = np.abs(space.node_coords[:, 0] - 1.0) > 1e-12
    assert np.all(b[1::2][away] == 0.0)


def test_combined_is_affine_in_gamma(coarse_level):
    ops = coarse_level.operators
    low, high = ops.combined(1.0), ops.combined(1e4)
    assert same_structure(low, high)
    assert np.allclose(high.data - low.data, (1e4 - 1.0) * ops.C.data, rtol=1e-14, atol=0)


def test_apply_dirichlet(coarse_level):
    ops = coarse_level.operators
    M = apply_dirichlet(ops, 10.0)
    assert same_structure(M, ops.A)
    assert is_symmetric(M, 1e-13)
    dense = M.toarray()
    d = ops.dirichlet_dofs
    expected = np.eye(ops.dim)[d]
    assert np.array_equal(dense[d], expected)
    assert np.array_equal(dense[:, d], expected.T)


def test_apply_dirichlet_rhs(coarse_level):
    b = np.ones(coarse_level.dim)
    out = apply_dirichlet_rhs(b, coarse_level.operators.dirichlet_dofs)
    assert np.all(out[coarse_level.operators.dirichlet_dofs] == 0.0)
    assert out.sum() == coarse_level.operators.free_dofs.size
    assert b.sum() == coarse_level.dim


def test_zero_load_gives_zero_solution(coarse_level):
    M = apply_dirichlet(coarse_level.operators, 0.0)
    x = dense_solve(dense_factorize(M.toarray()), np.zeros(coarse_level.dim))
    assert np.all(x == 0.0)


def test_combined_positive_definite_for_large_gamma(coarse_level):
    M = apply_dirichlet(coarse_level.operators, 1e8).toarray()
    assert inverse_power_min_eig(M, iters=50) > 0.0


def test_direct_preconditioner_recovers_solution(fine_level, rng):
    M = apply_dirichlet(fine_level.operators, 1e2)
    factor = dense_factorize(M.toarray())
    x_star = np.zeros(fine_level.dim)
    x_star[fine_level.space.free_dofs] = rng.standard_normal(fine_level.space.free_dofs.size)
    x, report = pcg(M, lambda r: dense_solve(factor, r), M @ x_star, rtol=1e-10)
    assert report.iterations == 1
    assert np.linalg.norm(x - x_star) <= 1e-8 * np.linalg.norm(x_star)


def test_macro_divergence_matches_boundary_flux(coarse_level, rng):
    space = coarse_level.space
    u = rng.standard_normal(space.dim)
    integrals = macro_divergence_integrals(space, u)
    macro = space.split.macro
    for cell in range(0, macro.num_cells, 5):
        corners = macro.vertices[macro.cells[cell]]
        assert integrals[cell] == pytest.approx(polygon_flux(space, u, corners), abs=1e-12)


def test_degenerate_cell_rejected():
    space = build_space(alfeld_split(structured_unit_square(1)))
    object.__setattr__(space.mesh, "vertices", space.mesh.vertices * np.array([1.0, 0.0]))
    with pytest.raises(AssemblyError):
        assemble_bilinear(space)


def test_operator_set_requires_shared_structure():
    A = sp.csr_matrix(np.eye(2))
    C = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(AssemblyError):
        OperatorSet(A=A, C=C, dirichlet_dofs=np.array([], dtype=int), free_dofs=np.arange(2))


def test_assemble_operators_carries_dofs(tiny_space):
    ops = assemble_operators(tiny_space)
    assert np.array_equal(ops.dirichlet_dofs, tiny_space.dirichlet_dofs)
    assert ops.dim == tiny_space.dim
