"""Prolongation between non-nested Alfeld-split levels.

The standard operator interpolates coarse functions at fine nodes. The
robust operator subtracts, on every coarse macro cell K, the solution of a
local problem posed on the fine DOFs supported inside K:

    (A + gamma C)[S_K, S_K] u_K = gamma C[S_K, :] P u_H

which restores the divergence control that interpolation loses. The local
problems decouple, so each one is a small dense solve.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import scipy.sparse as sp

from .common import PointLocationError, setup_logger
from .linalg import assemble_csr, dense_factorize, dense_solve, spmv, spmv_transpose
from .mesh import RefinementMaps
from .space import FunctionSpace, nodes_supported_in, p2_basis

logger = setup_logger("SVMG")

STANDARD = "standard"
ROBUST = "robust"
TRANSFER_KINDS = (STANDARD, ROBUST)

BARYCENTRIC_TOLERANCE = 1e-10


def _node_cells(space: FunctionSpace) -> np.ndarray:
    """Lowest split cell id containing each scalar node."""
    owner = np.full(space.num_nodes, space.mesh.num_cells, dtype=np.int64)
    np.minimum.at(owner, space.cell_nodes.ravel(), np.repeat(np.arange(space.mesh.num_cells), 6))
    return owner


def locate_in_coarse(coarse: FunctionSpace, fine: FunctionSpace, maps: RefinementMaps) -> Tuple[np.ndarray, np.ndarray]:
    """Coarse split cell and reference coordinates (N, 2) for every fine node.

    Candidates are the three split cells of the parent macro cell; the one
    maximizing the smallest barycentric coordinate wins.
    """
    fine_macro = fine.split.macro_cell_of_cell[_node_cells(fine)]
    parent = maps.parent_cell[fine_macro]
    candidates = 3 * parent[:, None] + np.arange(3)[None, :]  # (N, 3)

    verts = coarse.mesh.vertices[coarse.mesh.cells[candidates]]  # (N, 3, 3, 2)
    origin = verts[:, :, 0]
    jac = np.stack([verts[:, :, 1] - origin, verts[:, :, 2] - origin], axis=3)  # (N, 3, 2, 2)
    rhs = fine.node_coords[:, None, :] - origin
    ref = np.linalg.solve(jac, rhs[..., None])[..., 0]  # (N, 3, 2)
    bary = np.concatenate([1.0 - ref.sum(axis=2, keepdims=True), ref], axis=2)

    score = bary.min(axis=2)
    best = np.argmax(score, axis=1)
    rows = np.arange(len(best))
    outside = score[rows, best] < -BARYCENTRIC_TOLERANCE
    if np.any(outside):
        node = int(np.flatnonzero(outside)[0])
        raise PointLocationError(fine.node_coords[node])
    return candidates[rows, best], ref[rows, best]


def build_standard_prolongation(
    coarse: FunctionSpace,
    fine: FunctionSpace,
    maps: RefinementMaps,
    apply_bcs: bool = True,
) -> sp.csr_matrix:
    cells, ref = locate_in_coarse(coarse, fine, maps)
    values, _ = p2_basis(ref)  # (N, 6)
    coarse_nodes = coarse.cell_nodes[cells]  # (N, 6)
    fine_nodes = np.broadcast_to(np.arange(fine.num_nodes)[:, None], values.shape)

    rows = np.concatenate([2 * fine_nodes.ravel(), 2 * fine_nodes.ravel() + 1])
    cols = np.concatenate([2 * coarse_nodes.ravel(), 2 * coarse_nodes.ravel() + 1])
    vals = np.concatenate([values.ravel(), values.ravel()])

    keep = vals != 0.0
    if apply_bcs:
        keep &= ~fine.dirichlet_mask()[rows]
        keep &= ~coarse.dirichlet_mask()[cols]
    return assemble_csr(rows[keep], cols[keep], vals[keep], fine.dim, coarse.dim)


def coarse_skeleton_nodes(fine: FunctionSpace, maps: RefinementMaps) -> np.ndarray:
    """Mask of fine nodes lying on a coarse macro edge.

    Every fine macro vertex is a coarse vertex or a coarse edge midpoint. A
    fine macro edge is half of a coarse edge iff exactly one of its ends is a
    coarse vertex; edges joining two midpoints cross the coarse cell.
    """
    split = fine.split
    mask = np.zeros(fine.num_nodes, dtype=bool)
    mask[: split.macro_vertex_count] = True
    halves = maps.vertex_origin_is_edge[split.macro.edges].sum(axis=1) == 1
    mask[split.mesh.num_vertices + np.flatnonzero(halves)] = True
    return mask


def interior_dof_sets(fine: FunctionSpace, maps: RefinementMaps, num_coarse_cells: int) -> List[Tuple[int, np.ndarray]]:
    """Free fine DOFs on entities strictly inside each coarse macro cell."""
    nfine = fine.split.macro.num_cells
    regions = sp.csr_matrix(
        (np.ones(nfine, dtype=np.int64), (np.arange(nfine), maps.parent_cell)),
        shape=(nfine, num_coarse_cells),
    )
    nodes, cells = nodes_supported_in(fine, regions)
    inside = ~coarse_skeleton_nodes(fine, maps)[nodes]
    nodes, cells = nodes[inside], cells[inside]
    free = np.zeros(fine.dim, dtype=bool)
    free[fine.free_dofs] = True

    sets = []
    bounds = np.flatnonzero(np.r_[True, cells[1:] != cells[:-1], True])
    for start, stop in zip(bounds[:-1], bounds[1:]):
        node_ids = nodes[start:stop]
        dofs = np.sort(np.r_[2 * node_ids, 2 * node_ids + 1])
        sets.append((int(cells[start]), dofs[free[dofs]]))
    return sets


def interior_dofs_of_macro_cell(fine: FunctionSpace, maps: RefinementMaps, cell: int) -> np.ndarray:
    num_coarse = int(maps.parent_cell.max()) + 1
    for owner, dofs in interior_dof_sets(fine, maps, num_coarse):
        if owner == cell:
            return dofs
    return np.zeros(0, dtype=np.int64)


def build_robust_prolongation(
    P: sp.csr_matrix,
    interior_sets: List[Tuple[int, np.ndarray]],
    A: sp.csr_matrix,
    C: sp.csr_matrix,
    gamma: float,
) -> sp.csr_matrix:
    """P - sum_K E_K L_K^{-1} gamma C[S_K, :] P with L_K = A[S_K, S_K].

    ``A`` is the fine operator A + gamma C (boundary conditions applied),
    ``C`` the fine div-div operator.
    """
    if gamma == 0.0:
        return P.copy()

    CP = (C @ P).tocsr()
    CP.sort_indices()
    base = P.tocoo()
    rows, cols, vals = [base.row], [base.col], [base.data]
    for cell, dofs in interior_sets:
        if dofs.size == 0:
            continue
        coupling = CP[dofs]
        targets = np.unique(coupling.indices)
        if targets.size == 0:
            continue
        local = dense_factorize(A[dofs][:, dofs].toarray(), block_id=f"macro cell {cell}")
        correction = dense_solve(local, gamma * coupling[:, targets].toarray())
        rows.append(np.repeat(dofs, targets.size))
        cols.append(np.tile(targets, dofs.size))
        vals.append(-correction.ravel())
    return assemble_csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), *P.shape)


@dataclass
class TransferOperator:
    P: sp.csr_matrix
    kind: str = STANDARD
    gamma: float = 0.0

    def prolong(self, coarse_vector: np.ndarray) -> np.ndarray:
        return spmv(self.P, coarse_vector)

    def restrict(self, fine_vector: np.ndarray) -> np.ndarray:
        return spmv_transpose(self.P, fine_vector)
