"""Assembly of the elasticity operator A + gamma * C and the traction load."""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .common import AssemblyError, setup_logger
from .linalg import assemble_csr, same_structure
from .mesh import EdgeTag
from .space import FunctionSpace, p2_basis, p2_edge_basis, quadrature

logger = setup_logger("SVMG")

MIN_CELL_AREA = 1e-14
TRACTION_MAGNITUDE = 0.5


def _physical_gradients(space: FunctionSpace) -> Tuple[np.ndarray, np.ndarray]:
    """Scalar basis gradients (T, Q, 6, 2) and weights times |det J| (T, Q)."""
    _, jac, det = space.cell_geometry()
    if np.any(0.5 * np.abs(det) < MIN_CELL_AREA):
        bad = int(np.argmin(np.abs(det)))
        raise AssemblyError(detail=f"degenerate cell {bad} with area {0.5 * abs(det[bad]):.3e}")
    rule = quadrature("cell", 4)
    _, ref_grads = p2_basis(rule.reference_points())
    inv_t = np.linalg.inv(jac).transpose(0, 2, 1)  # J^{-T}
    grads = np.einsum("tab,qib->tqia", inv_t, ref_grads)
    weights = np.abs(det)[:, None] * rule.weights[None, :]
    return grads, weights


def local_matrices(space: FunctionSpace) -> Tuple[np.ndarray, np.ndarray]:
    """Cell matrices (T, 12, 12) of (eps(u), eps(v)) and (div u, div v)."""
    grads, weights = _physical_gradients(space)
    eye = np.eye(2)
    # Vector basis (node i, component c): grad = e_c (x) g_i, local index 2*i + c
    full = np.einsum("cr,tqis->tqicrs", eye, grads).reshape(grads.shape[0], grads.shape[1], 12, 2, 2)
    strain = 0.5 * (full + full.transpose(0, 1, 2, 4, 3))
    div = np.einsum("tqarr->tqa", full)
    stiffness = np.einsum("tq,tqars,tqbrs->tab", weights, strain, strain)
    divdiv = np.einsum("tq,tqa,tqb->tab", weights, div, div)
    return 0.5 * (stiffness + stiffness.transpose(0, 2, 1)), 0.5 * (divdiv + divdiv.transpose(0, 2, 1))


def _scatter(space: FunctionSpace, local: np.ndarray) -> sp.csr_matrix:
    dofs = space.cell_dofs
    rows = np.broadcast_to(dofs[:, :, None], local.shape)
    cols = np.broadcast_to(dofs[:, None, :], local.shape)
    return assemble_csr(rows, cols, local, space.dim, space.dim)


def assemble_bilinear(space: FunctionSpace) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    stiffness, divdiv = local_matrices(space)
    A = _scatter(space, stiffness)
    C = _scatter(space, divdiv)
    logger.debug(f"Assembled operators: {space.dim} dofs, nnz {A.nnz}")
    return A, C


def assemble_traction(space: FunctionSpace, magnitude: float = TRACTION_MAGNITUDE) -> np.ndarray:
    """Load vector of the traction (0, -magnitude) on the boundary x = 1."""
    mesh = space.mesh
    edges = np.flatnonzero(mesh.edge_tags == EdgeTag.NEUMANN_X1)
    b = np.zeros(space.dim)
    if edges.size == 0:
        return b
    rule = quadrature("edge", 4)
    basis = p2_edge_basis(rule.points[:, 1])  # (Q, 3)
    integrals = rule.weights @ basis  # (3,)
    lengths = np.linalg.norm(mesh.vertices[mesh.edges[edges, 1]] - mesh.vertices[mesh.edges[edges, 0]], axis=1)
    nodes = np.column_stack([mesh.edges[edges, 0], mesh.edges[edges, 1], mesh.num_vertices + edges])
    np.add.at(b, 2 * nodes + 1, -magnitude * lengths[:, None] * integrals[None, :])
    return b


@dataclass
class OperatorSet:
    A: sp.csr_matrix
    C: sp.csr_matrix
    dirichlet_dofs: np.ndarray
    free_dofs: np.ndarray

    def __post_init__(self):
        if not same_structure(self.A, self.C):
            raise AssemblyError(detail="stiffness and div-div operators differ in sparsity")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def combined(self, gamma: float) -> sp.csr_matrix:
        """A + gamma * C with the same sparsity, before boundary conditions."""
        return sp.csr_matrix((self.A.data + gamma * self.C.data, self.A.indices, self.A.indptr), shape=self.A.shape)


def assemble_operators(space: FunctionSpace) -> OperatorSet:
    A, C = assemble_bilinear(space)
    return OperatorSet(A=A, C=C, dirichlet_dofs=space.dirichlet_dofs, free_dofs=space.free_dofs)


def apply_dirichlet(operators: OperatorSet, gamma: float) -> sp.csr_matrix:
    """Symmetric elimination: Dirichlet rows and columns zeroed, unit diagonal."""
    M = operators.combined(gamma)
    mask = np.zeros(M.shape[0], dtype=bool)
    mask[operators.dirichlet_dofs] = True
    rows = np.repeat(np.arange(M.shape[0]), np.diff(M.indptr))
    hit = mask[rows] | mask[M.indices]
    M.data[hit] = 0.0
    M.data[hit & (rows == M.indices)] = 1.0
    return M


def apply_dirichlet_rhs(b: np.ndarray, dirichlet_dofs: np.ndarray) -> np.ndarray:
    out = np.array(b, dtype=np.float64)
    out[dirichlet_dofs] = 0.0
    return out


def divergence_at_quadrature(space: FunctionSpace, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """div u (T, Q) at the cell quadrature points and the matching weights (T, Q)."""
    grads, weights = _physical_gradients(space)
    local = u[space.cell_dofs].reshape(-1, 6, 2)  # (T, node, component)
    div = np.einsum("tqic,tic->tq", grads, local)
    return div, weights


def macro_divergence_integrals(space: FunctionSpace, u: np.ndarray, macro_of_cell: Optional[np.ndarray] = None) -> np.ndarray:
    """Integral of div u over each macro cell (or over any grouping of split cells)."""
    div, weights = divergence_at_quadrature(space, u)
    groups = space.split.macro_cell_of_cell if macro_of_cell is None else macro_of_cell
    return np.bincount(groups, weights=(div * weights).sum(axis=1), minlength=int(groups.max()) + 1)
