"""The continuous [P2]^2 Lagrange space on an Alfeld split mesh.

Scalar nodes are the split mesh vertices followed by its edge midpoints;
vector DOF ``2 * node + component``. Local node order on a cell is
(v0, v1, v2, m01, m12, m20).
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
import scipy.sparse as sp

from .mesh import EdgeTag, SplitMesh

# Degree-4 symmetric rule on the reference triangle (6 points)
_A1, _W1 = 0.44594849091596488632, 0.22338158967801146570
_A2, _W2 = 0.091576213509770743460, 0.10995174365532186764


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # barycentric coordinates (Q, 3) or (Q, 2) on edges
    weights: np.ndarray
    degree: int

    def reference_points(self) -> np.ndarray:
        """Cartesian reference coordinates (x, y) = (lambda1, lambda2)."""
        return self.points[:, 1:3]


@lru_cache(maxsize=None)
def quadrature(kind: str = "cell", degree: int = 4) -> QuadratureRule:
    if degree > 4:
        raise ValueError(f"no rule of degree {degree}")
    if kind == "cell":
        b1 = np.array([[1 - 2 * _A1, _A1, _A1], [_A1, 1 - 2 * _A1, _A1], [_A1, _A1, 1 - 2 * _A1]])
        b2 = np.array([[1 - 2 * _A2, _A2, _A2], [_A2, 1 - 2 * _A2, _A2], [_A2, _A2, 1 - 2 * _A2]])
        points = np.vstack([b1, b2])
        weights = 0.5 * np.r_[np.full(3, _W1), np.full(3, _W2)]
        return QuadratureRule(points=points, weights=weights, degree=4)
    if kind == "edge":
        nodes, w = np.polynomial.legendre.leggauss(3)
        t = 0.5 * (nodes + 1.0)
        return QuadratureRule(points=np.column_stack([1.0 - t, t]), weights=0.5 * w, degree=5)
    raise ValueError(f"unknown quadrature kind {kind!r}")


def p2_basis(points) -> Tuple[np.ndarray, np.ndarray]:
    """Values (Q, 6) and reference gradients (Q, 6, 2) at reference points (Q, 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x, y = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - x - y, x, y], axis=1)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

    values = np.empty((len(pts), 6))
    grads = np.empty((len(pts), 6, 2))
    for i in range(3):
        values[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * dlam[i]
    for k, (i, j) in enumerate([(0, 1), (1, 2), (2, 0)]):
        values[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
        grads[:, 3 + k] = 4.0 * (lam[:, i][:, None] * dlam[j] + lam[:, j][:, None] * dlam[i])
    return values, grads


def p2_edge_basis(t: np.ndarray) -> np.ndarray:
    """Values (Q, 3) of the 1D quadratic basis (start, end, midpoint) at t in [0, 1]."""
    t = np.asarray(t, dtype=np.float64)
    return np.column_stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)])


@dataclass(frozen=True)
class FunctionSpace:
    split: SplitMesh
    node_coords: np.ndarray  # (N, 2)
    cell_nodes: np.ndarray  # (T, 6)
    cell_dofs: np.ndarray  # (T, 12), local vector dof 2*i + c
    dirichlet_dofs: np.ndarray  # sorted
    free_dofs: np.ndarray  # sorted

    @property
    def mesh(self):
        return self.split.mesh

    @property
    def num_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def dim(self) -> int:
        return 2 * self.num_nodes

    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.dim, dtype=bool)
        mask[self.dirichlet_dofs] = True
        return mask

    def cell_geometry(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Origins (T, 2), Jacobians (T, 2, 2) with columns v1-v0, v2-v0, and determinants."""
        v = self.mesh.vertices[self.mesh.cells]
        jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        return v[:, 0], jac, det


def build_space(split: SplitMesh) -> FunctionSpace:
    mesh = split.mesh
    nv = mesh.num_vertices
    node_coords = np.vstack([mesh.vertices, mesh.vertices[mesh.edges].mean(axis=1)])
    cell_nodes = np.hstack([mesh.cells, nv + mesh.cell_edges])
    cell_dofs = np.stack([2 * cell_nodes, 2 * cell_nodes + 1], axis=2).reshape(-1, 12)

    dirichlet_edges = np.flatnonzero(mesh.edge_tags == EdgeTag.DIRICHLET_X0)
    nodes = np.unique(np.r_[mesh.edges[dirichlet_edges].ravel(), nv + dirichlet_edges])
    dirichlet = np.sort(np.r_[2 * nodes, 2 * nodes + 1])
    free = np.setdiff1d(np.arange(2 * len(node_coords)), dirichlet)
    return FunctionSpace(
        split=split,
        node_coords=node_coords,
        cell_nodes=cell_nodes,
        cell_dofs=cell_dofs,
        dirichlet_dofs=dirichlet,
        free_dofs=free,
    )


def node_macro_incidence(space: FunctionSpace) -> sp.csr_matrix:
    """Integer (nodes, macro cells) incidence: 1 where a split cell of the macro cell holds the node."""
    split = space.split
    rows = space.cell_nodes.ravel()
    cols = np.repeat(split.macro_cell_of_cell, 6)
    incidence = sp.csr_matrix(
        (np.ones(rows.size, dtype=np.int64), (rows, cols)),
        shape=(space.num_nodes, split.macro.num_cells),
    )
    incidence.data[:] = 1
    return incidence


def nodes_supported_in(space: FunctionSpace, regions: sp.csr_matrix) -> Tuple[np.ndarray, np.ndarray]:
    """(node, region) pairs such that every macro cell around the node lies in the region.

    ``regions`` is a (macro cells, R) 0/1 matrix describing R unions of macro
    cells. A node qualifies iff the support of its basis functions is
    contained in the closure of the region.
    """
    incidence = node_macro_incidence(space)
    degree = np.asarray(incidence.sum(axis=1)).ravel()
    counts = (incidence @ regions.astype(np.int64)).tocoo()
    keep = counts.data == degree[counts.row]
    nodes, region = counts.row[keep], counts.col[keep]
    order = np.lexsort((nodes, region))
    return nodes[order].astype(np.int64), region[order].astype(np.int64)


def interpolate(space: FunctionSpace, field: Callable) -> np.ndarray:
    """Nodal interpolant of a vector field (x, y) -> (f1, f2)."""
    x, y = space.node_coords[:, 0], space.node_coords[:, 1]
    f1, f2 = field(x, y)
    coeffs = np.empty(space.dim)
    coeffs[0::2] = np.broadcast_to(f1, x.shape)
    coeffs[1::2] = np.broadcast_to(f2, x.shape)
    return coeffs


def evaluate(space: FunctionSpace, coefficients: np.ndarray, cell: int, ref_point) -> np.ndarray:
    values, _ = p2_basis(ref_point)
    local = coefficients[space.cell_dofs[cell]].reshape(6, 2)
    return values[0] @ local


def reference_to_physical(space: FunctionSpace, cell: int, ref_point) -> np.ndarray:
    v = space.mesh.vertices[space.mesh.cells[cell]]
    x, y = ref_point
    return v[0] + x * (v[1] - v[0]) + y * (v[2] - v[0])
