"""Triangulations of the unit square, red refinement and Alfeld splits."""
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .common import MeshError, OutputError, setup_logger

logger = setup_logger("SVMG")

COORD_TOLERANCE = 1e-12


class EdgeTag(IntEnum):
    INTERIOR = 0
    DIRICHLET_X0 = 1
    NEUMANN_X1 = 2
    NEUMANN_OTHER = 3


def _signed_areas(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[cells[:, k]] for k in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _local_edges(cells: np.ndarray) -> np.ndarray:
    """(T, 3, 2) sorted vertex pairs in local order (v0v1, v1v2, v2v0)."""
    pairs = np.stack([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]], axis=1)
    return np.sort(pairs, axis=2)


def _edge_lookup(edges: np.ndarray, pairs: np.ndarray, nverts: int) -> np.ndarray:
    """Global ids of sorted vertex pairs inside the edge list."""
    keys = edges[:, 0] * nverts + edges[:, 1]
    order = np.argsort(keys)
    query = pairs[..., 0] * nverts + pairs[..., 1]
    pos = np.searchsorted(keys[order], query)
    ids = order[np.clip(pos, 0, len(order) - 1)]
    if not np.array_equal(keys[ids], query):
        raise MeshError(detail="cell edge missing from edge list")
    return ids


def classify_boundary_edges(vertices: np.ndarray, edges: np.ndarray, boundary: np.ndarray) -> np.ndarray:
    tags = np.full(len(edges), EdgeTag.INTERIOR, dtype=np.int8)
    x = vertices[edges, 0]  # (E, 2)
    on_x0 = np.all(np.abs(x) < COORD_TOLERANCE, axis=1)
    on_x1 = np.all(np.abs(x - 1.0) < COORD_TOLERANCE, axis=1)
    tags[boundary] = EdgeTag.NEUMANN_OTHER
    tags[boundary & on_x0] = EdgeTag.DIRICHLET_X0
    tags[boundary & on_x1] = EdgeTag.NEUMANN_X1
    return tags


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray  # (V, 2)
    cells: np.ndarray  # (T, 3), counterclockwise
    edges: np.ndarray  # (E, 2), sorted pairs
    cell_edges: np.ndarray  # (T, 3)
    edge_tags: np.ndarray  # (E,)

    @classmethod
    def from_cells(cls, vertices, cells, edges: Optional[np.ndarray] = None) -> "TriMesh":
        """Derive edges, adjacency and boundary tags; edges default to lexicographic order."""
        vertices = np.asarray(vertices, dtype=np.float64)
        cells = np.asarray(cells, dtype=np.int64)
        pairs = _local_edges(cells)
        if edges is None:
            edges = np.unique(pairs.reshape(-1, 2), axis=0)
        cell_edges = _edge_lookup(edges, pairs, len(vertices))
        incidence = np.bincount(cell_edges.ravel(), minlength=len(edges))
        if incidence.max() > 2:
            raise MeshError(detail="edge shared by more than two cells")
        tags = classify_boundary_edges(vertices, edges, incidence == 1)
        mesh = cls(vertices=vertices, cells=cells, edges=edges, cell_edges=cell_edges, edge_tags=tags)
        mesh.validate()
        return mesh

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.cells)

    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tags != EdgeTag.INTERIOR)

    def validate(self):
        if np.any(self.areas() <= 0.0):
            raise MeshError(detail="cell with non-positive signed area")
        if self.num_vertices - self.num_edges + self.num_cells != 1:
            raise MeshError(detail=f"Euler characteristic violated: V={self.num_vertices} E={self.num_edges} T={self.num_cells}")

    def cell_vertex_incidence(self) -> sp.csr_matrix:
        """Boolean (T, V) incidence."""
        rows = np.repeat(np.arange(self.num_cells), 3)
        data = np.ones(rows.size, dtype=bool)
        return sp.csr_matrix((data, (rows, self.cells.ravel())), shape=(self.num_cells, self.num_vertices))

    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)


def structured_unit_square(n: int) -> TriMesh:
    """n x n squares, each cut by its lower-left to upper-right diagonal."""
    if n < 1:
        raise MeshError(detail=f"grid size must be positive, got {n}")
    ticks = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (i + (n + 1) * j).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return TriMesh.from_cells(vertices, cells)


@dataclass(frozen=True)
class RefinementMaps:
    """Parent data of a red refinement."""

    parent_cell: np.ndarray  # fine cell -> coarse cell
    vertex_origin_is_edge: np.ndarray  # fine vertex came from a coarse edge midpoint
    vertex_origin: np.ndarray  # coarse vertex or coarse edge id


def uniform_refine(mesh: TriMesh) -> Tuple[TriMesh, RefinementMaps]:
    nv = mesh.num_vertices
    midpoints = mesh.vertices[mesh.edges].mean(axis=1)
    vertices = np.vstack([mesh.vertices, midpoints])

    a, b, c = mesh.cells.T
    m01, m12, m20 = (nv + mesh.cell_edges[:, k] for k in range(3))
    children = np.stack([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)

    fine = TriMesh.from_cells(vertices, children)
    maps = RefinementMaps(
        parent_cell=np.repeat(np.arange(mesh.num_cells), 4),
        vertex_origin_is_edge=np.r_[np.zeros(nv, dtype=bool), np.ones(mesh.num_edges, dtype=bool)],
        vertex_origin=np.r_[np.arange(nv), np.arange(mesh.num_edges)],
    )
    return fine, maps


@dataclass(frozen=True)
class SplitMesh:
    mesh: TriMesh
    macro: TriMesh
    macro_cell_of_cell: np.ndarray
    macro_vertex_count: int
    macro_edge_count: int


def alfeld_split(macro: TriMesh) -> SplitMesh:
    """Connect every macro cell (a, b, c) to its barycenter g: (a,b,g), (b,c,g), (c,a,g)."""
    nv, nt = macro.num_vertices, macro.num_cells
    barycenters = macro.vertices[macro.cells].mean(axis=1)
    vertices = np.vstack([macro.vertices, barycenters])

    g = nv + np.arange(nt)
    a, b, c = macro.cells.T
    cells = np.stack([
        np.column_stack([a, b, g]),
        np.column_stack([b, c, g]),
        np.column_stack([c, a, g]),
    ], axis=1).reshape(-1, 3)

    # macro edges keep their ids, the Alfeld edges follow in lexicographic order
    alfeld_edges = np.unique(np.column_stack([macro.cells.ravel(), np.repeat(g, 3)]), axis=0)
    edges = np.vstack([macro.edges, alfeld_edges])

    mesh = TriMesh.from_cells(vertices, cells, edges=edges)
    return SplitMesh(
        mesh=mesh,
        macro=macro,
        macro_cell_of_cell=np.repeat(np.arange(nt), 3),
        macro_vertex_count=nv,
        macro_edge_count=macro.num_edges,
    )


@dataclass
class MeshHierarchy:
    levels: List[SplitMesh]
    refinements: List[RefinementMaps] = field(default_factory=list)  # refinements[l-1]: level l -> level l-1

    def __len__(self) -> int:
        return len(self.levels)

    def macro(self, level: int) -> TriMesh:
        return self.levels[level].macro

    def split(self, level: int) -> SplitMesh:
        return self.levels[level]


def build_hierarchy(coarse_n: int, levels: int) -> MeshHierarchy:
    if levels < 1:
        raise MeshError(detail=f"need at least one level, got {levels}")
    macro = structured_unit_square(coarse_n)
    hierarchy = MeshHierarchy(levels=[alfeld_split(macro)])
    for _ in range(1, levels):
        macro, maps = uniform_refine(macro)
        hierarchy.levels.append(alfeld_split(macro))
        hierarchy.refinements.append(maps)
    logger.debug(f"Mesh hierarchy: {levels} levels, finest macro cells {macro.num_cells}")
    return hierarchy


def macro_star(mesh: TriMesh, vertex: int) -> np.ndarray:
    """Macro cells incident to a vertex."""
    return np.flatnonzero(np.any(mesh.cells == vertex, axis=1))


def dump_mesh(mesh: TriMesh, path) -> Path:
    path = Path(path)
    try:
        with open(path, "w") as f:
            for x, y in mesh.vertices:
                f.write(f"v {float(x)!r} {float(y)!r}\n")
            for a, b, c in mesh.cells:
                f.write(f"t {a} {b} {c}\n")
    except OSError as e:
        raise OutputError(detail=f"cannot write mesh dump {path}: {e}")
    logger.info(f"Mesh dumped to {path} ({mesh.num_vertices} vertices, {mesh.num_cells} cells)")
    return path
