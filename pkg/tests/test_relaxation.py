import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from src.assembly import apply_dirichlet
from src.common import RelaxationError
from src.linalg import dense_factorize, dense_solve
from src.mesh import EdgeTag
from src.relaxation import (
    ASM,
    JACOBI,
    RICHARDSON,
    Smoother,
    asm_apply,
    build_patches,
    chebyshev_smooth,
    estimate_lambda_max,
    jacobi_apply,
    make_patch,
    patch_dof_sets,
    patch_overlap,
    richardson_smooth,
    schwarz_operator,
)
from tests.oracles import dense_schwarz, patch_dofs, star_cells


@pytest.fixture(scope="module")
def fine_operator(fine_level):
    return apply_dirichlet(fine_level.operators, 1e3)


@pytest.fixture(scope="module")
def patches(fine_level, fine_operator):
    return build_patches(fine_level.space, fine_operator)


def boundary_vertices(macro):
    mask = np.zeros(macro.num_vertices, dtype=bool)
    mask[macro.edges[macro.edge_tags != EdgeTag.INTERIOR].ravel()] = True
    return mask


def test_patches_match_support_inclusion_oracle(fine_level, patches):
    macro = fine_level.space.split.macro
    for patch in patches[::7]:
        expected = patch_dofs(fine_level.space, star_cells(macro, patch.owner))
        assert np.array_equal(patch.dofs, expected)


def touches_boundary(macro, cells, tags=(EdgeTag.DIRICHLET_X0, EdgeTag.NEUMANN_X1, EdgeTag.NEUMANN_OTHER)) -> bool:
    return bool(np.any(np.isin(macro.edge_tags[macro.cell_edges[cells]], tags)))


def test_interior_patch_size_and_overlap(fine_level, patches):
    macro = fine_level.space.split.macro
    interior = [p for p in patches if not touches_boundary(macro, star_cells(macro, p.owner))]
    assert len(interior) == 25
    assert {p.size for p in interior} == {62}
    assert patch_overlap(patches, fine_level.dim) == 3


def test_patches_next_to_neumann_boundary_hold_boundary_nodes(fine_level, patches):
    macro = fine_level.space.split.macro
    on_boundary = boundary_vertices(macro)
    neumann = (EdgeTag.NEUMANN_X1, EdgeTag.NEUMANN_OTHER)
    near = [p for p in patches if not on_boundary[p.owner] and touches_boundary(macro, star_cells(macro, p.owner), neumann)]
    assert len(near) == 19
    assert all(p.size in (64, 66, 68) for p in near)


def test_patches_cover_free_dofs(fine_level, patches):
    covered = np.unique(np.concatenate([p.dofs for p in patches]))
    assert np.array_equal(covered, fine_level.space.free_dofs)


def test_dirichlet_vertex_patch_has_no_boundary_dofs(fine_level, patches):
    space = fine_level.space
    macro = space.split.macro
    on_x0 = np.flatnonzero(np.abs(macro.vertices[:, 0]) < 1e-12)
    for patch in patches:
        if patch.owner in on_x0:
            assert not np.any(np.abs(space.node_coords[patch.dofs // 2, 0]) < 1e-12)


def test_patch_locality(fine_level, patches):
    space = fine_level.space
    macro = space.split.macro
    for patch in patches[::5]:
        star = star_cells(macro, patch.owner)
        verts = macro.vertices[macro.cells[star]]
        jac = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]], axis=2)
        for node in np.unique(patch.dofs // 2):
            ref = np.linalg.solve(jac, (space.node_coords[node] - verts[:, 0])[..., None])[..., 0]
            bary = np.column_stack([1 - ref.sum(axis=1), ref])
            assert np.any(bary.min(axis=1) >= -1e-12)


def test_empty_patch_list_is_fatal(tiny_space, monkeypatch):
    monkeypatch.setattr("src.relaxation.patch_dof_sets", lambda space, macro=None: [])
    with pytest.raises(RelaxationError):
        build_patches(tiny_space, sp.identity(tiny_space.dim, format="csr"))


def test_asm_matches_dense_composition(fine_level, fine_operator, patches, rng):
    dense = fine_operator.toarray()
    M = dense_schwarz(dense, [p.dofs for p in patches])
    S = schwarz_operator(patches, fine_level.dim)
    for _ in range(3):
        r = np.zeros(fine_level.dim)
        r[fine_level.space.free_dofs] = rng.standard_normal(fine_level.space.free_dofs.size)
        expected = M @ r
        scale = np.linalg.norm(expected)
        assert np.linalg.norm(asm_apply(patches, r) - expected) <= 1e-10 * scale
        assert np.linalg.norm(S @ r - expected) <= 1e-10 * scale


def test_single_patch_is_a_direct_solve(coarse_level, rng):
    A = apply_dirichlet(coarse_level.operators, 10.0)
    free = coarse_level.space.free_dofs
    patch = make_patch(A, free)
    r = np.zeros(coarse_level.dim)
    r[free] = rng.standard_normal(free.size)
    z = asm_apply([patch], r)
    assert np.linalg.norm(A @ z - r) <= 1e-10 * np.linalg.norm(r)


def test_asm_ignores_residual_outside_patch(fine_operator, patches):
    patch = patches[0]
    r = np.zeros(fine_operator.shape[0])
    outside = np.setdiff1d(np.arange(r.size), patch.dofs)
    r[outside[-1]] = 1.0
    z = asm_apply([patch], r)
    assert np.all(z == 0.0)


def test_jacobi_apply():
    assert np.array_equal(jacobi_apply(np.ones(3), np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])
    assert np.array_equal(jacobi_apply(np.array([2.0, 2.0]), np.array([2.0, 4.0])), [1.0, 2.0])


def test_jacobi_equals_singleton_patches(coarse_level, rng):
    A = apply_dirichlet(coarse_level.operators, 1.0)
    free = coarse_level.space.free_dofs
    singletons = [make_patch(A, [d], owner=int(d)) for d in free]
    r = np.zeros(coarse_level.dim)
    r[free] = rng.standard_normal(free.size)
    assert np.allclose(asm_apply(singletons, r), jacobi_apply(A.diagonal(), r), rtol=1e-14, atol=0)


def test_lambda_max_exact_inverse(coarse_level):
    A = apply_dirichlet(coarse_level.operators, 1.0)
    factor = dense_factorize(A.toarray())
    inverse = lambda r: dense_solve(factor, r)
    assert estimate_lambda_max(A, inverse) == pytest.approx(1.0, abs=1e-8)
    assert estimate_lambda_max(2.0 * A, inverse) == pytest.approx(2.0, abs=1e-8)


def test_lambda_max_two_by_two_jacobi():
    A = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    estimate = estimate_lambda_max(A, lambda r: jacobi_apply(A.diagonal(), r), iters=50)
    assert estimate == pytest.approx(1.5, abs=1e-6)


def test_lambda_max_zero_start_vector():
    A = sp.identity(2, format="csr")
    with pytest.raises(RelaxationError):
        estimate_lambda_max(A, lambda r: r, fixed_dofs=np.array([0, 1]))


def test_chebyshev_fixed_point(coarse_level, rng):
    A = apply_dirichlet(coarse_level.operators, 10.0)
    smoother = Smoother.build(ASM, coarse_level.space, A)
    x = np.zeros(coarse_level.dim)
    x[coarse_level.space.free_dofs] = rng.standard_normal(coarse_level.space.free_dofs.size)
    b = A @ x
    lo, hi = smoother.interval
    out = chebyshev_smooth(A, smoother.apply, x, b, 2, lo, hi)
    assert np.abs(out - x).max() <= 1e-13 * np.abs(x).max()


def test_chebyshev_one_step_is_damped_richardson(coarse_level, rng):
    A = apply_dirichlet(coarse_level.operators, 1.0)
    diag = A.diagonal()
    x, b = rng.standard_normal(coarse_level.dim), rng.standard_normal(coarse_level.dim)
    cheb = chebyshev_smooth(A, lambda r: jacobi_apply(diag, r), x, b, 1, 0.2, 2.2)
    rich = x + 2.0 / (0.2 + 2.2) * (b - A @ x) / diag
    assert np.allclose(cheb, rich, rtol=1e-14, atol=1e-14)
    assert np.allclose(richardson_smooth(A, lambda r: jacobi_apply(diag, r), x, b, 1, 2.0 / 2.4), rich, rtol=1e-14, atol=1e-14)


def test_chebyshev_rejects_bad_interval():
    A = sp.identity(3, format="csr")
    with pytest.raises(RelaxationError):
        chebyshev_smooth(A, lambda r: r, np.zeros(3), np.ones(3), 2, 1.0, 0.5)


@pytest.mark.parametrize("kind", [ASM, JACOBI])
def test_smoothing_reduces_energy_error(fine_level, kind, rng):
    A = apply_dirichlet(fine_level.operators, 0.0)
    smoother = Smoother.build(kind, fine_level.space, A)
    free = fine_level.space.free_dofs
    x_exact, x0 = np.zeros(fine_level.dim), np.zeros(fine_level.dim)
    x_exact[free] = rng.standard_normal(free.size)
    x0[free] = rng.standard_normal(free.size)
    x2 = smoother.smooth(x0, A @ x_exact)
    energy = lambda e: e @ (A @ e)
    assert energy(x_exact - x2) < energy(x_exact - x0)


@pytest.mark.parametrize("kind", [ASM, JACOBI])
def test_smoother_is_symmetric(fine_level, fine_operator, kind, rng):
    smoother = Smoother.build(kind, fine_level.space, fine_operator)
    for _ in range(20):
        x, y = rng.standard_normal(fine_level.dim), rng.standard_normal(fine_level.dim)
        Sx, Sy = smoother.apply(x), smoother.apply(y)
        assert abs(Sx @ y - x @ Sy) <= 1e-10 * np.linalg.norm(Sx) * np.linalg.norm(y)


def test_richardson_with_exact_smoother(coarse_level, rng):
    A = apply_dirichlet(coarse_level.operators, 1.0)
    free = coarse_level.space.free_dofs
    smoother = Smoother.build(ASM, coarse_level.space, A, smoothing=RICHARDSON, steps=1, damping=1.0,
                              patches=[make_patch(A, free)])
    x_exact = np.zeros(coarse_level.dim)
    x_exact[free] = rng.standard_normal(free.size)
    x = smoother.smooth(np.zeros(coarse_level.dim), A @ x_exact)
    assert np.linalg.norm(x - x_exact) <= 1e-10 * np.linalg.norm(x_exact)


def smoothed_condition(A, free, apply):
    """Extreme eigenvalues of M A restricted to the free DOFs."""
    dense = A.toarray()[np.ix_(free, free)]
    M = np.column_stack([apply(e)[free] for e in np.eye(A.shape[0])[free]])
    M = 0.5 * (M + M.T)
    L = scipy.linalg.cholesky(M, lower=True)
    eigs = scipy.linalg.eigvalsh(L.T @ dense @ L)
    return eigs.max() / eigs.min()


@pytest.mark.slow
def test_asm_is_gamma_robust_and_jacobi_is_not(fine_level):
    free = fine_level.space.free_dofs
    growth = {}
    for kind in (ASM, JACOBI):
        cond = []
        for gamma in (1.0, 1e8):
            A = apply_dirichlet(fine_level.operators, gamma)
            smoother = Smoother.build(kind, fine_level.space, A)
            cond.append(smoothed_condition(A, free, smoother.apply))
        growth[kind] = cond[1] / cond[0]
    assert growth[ASM] < 10.0
    assert growth[JACOBI] > 100.0


def test_patch_dof_sets_sorted_and_free(fine_level):
    free = set(fine_level.space.free_dofs.tolist())
    for owner, dofs in patch_dof_sets(fine_level.space):
        assert np.all(np.diff(dofs) > 0)
        assert set(dofs.tolist()) <= free
