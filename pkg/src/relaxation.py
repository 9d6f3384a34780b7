"""Relaxation: additive Schwarz over macro stars, Jacobi, and their polynomial acceleration.

A macro-star patch collects the free DOFs whose basis functions are
supported in the union of the macro cells around one macro vertex. Exact
solves on these patches give a smoother whose space decomposition splits
divergence-free fields into local divergence-free pieces.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .common import RelaxationError, setup_logger
from .linalg import DenseFactorization, assemble_csr, dense_factorize, dense_inverse, dense_solve
from .mesh import TriMesh
from .space import FunctionSpace, nodes_supported_in

logger = setup_logger("SVMG")

ASM = "asm"
JACOBI = "jacobi"
RELAXATION_KINDS = (ASM, JACOBI)

CHEBYSHEV = "chebyshev"
RICHARDSON = "richardson"
SMOOTHING_KINDS = (CHEBYSHEV, RICHARDSON)

# Chebyshev interval as fractions of the estimated largest eigenvalue
CHEBYSHEV_LOWER = 0.1
CHEBYSHEV_UPPER = 1.1
POWER_ITERATIONS = 10


@dataclass
class Patch:
    owner: int  # macro vertex, -1 for hand-built patches
    dofs: np.ndarray
    factorization: DenseFactorization

    @property
    def size(self) -> int:
        return len(self.dofs)


def make_patch(A: sp.csr_matrix, dofs: np.ndarray, owner: int = -1) -> Patch:
    dofs = np.asarray(dofs, dtype=np.int64)
    block = A[dofs][:, dofs].toarray()
    return Patch(owner=owner, dofs=dofs, factorization=dense_factorize(block, block_id=f"patch {owner}"))


def patch_dof_sets(space: FunctionSpace, macro: Optional[TriMesh] = None) -> List[Tuple[int, np.ndarray]]:
    """Free vector DOFs supported in each macro star, keyed by macro vertex."""
    macro = macro or space.split.macro
    nodes, owners = nodes_supported_in(space, macro.cell_vertex_incidence())
    free = np.zeros(space.dim, dtype=bool)
    free[space.free_dofs] = True

    sets = []
    bounds = np.flatnonzero(np.r_[True, owners[1:] != owners[:-1], True])
    for start, stop in zip(bounds[:-1], bounds[1:]):
        node_ids = nodes[start:stop]
        dofs = np.sort(np.r_[2 * node_ids, 2 * node_ids + 1])
        dofs = dofs[free[dofs]]
        if dofs.size:
            sets.append((int(owners[start]), dofs))
    return sets


def build_patches(space: FunctionSpace, A: sp.csr_matrix, macro: Optional[TriMesh] = None) -> List[Patch]:
    patches = [make_patch(A, dofs, owner) for owner, dofs in patch_dof_sets(space, macro)]
    if not patches:
        logger.error("No relaxation patch holds a free DOF")
        raise RelaxationError(detail="empty patch list; check boundary tagging")
    return patches


def patch_overlap(patches: List[Patch], ndofs: int) -> int:
    """N_O: the largest number of patches sharing a DOF."""
    if not patches:
        return 0
    counts = np.bincount(np.concatenate([p.dofs for p in patches]), minlength=ndofs)
    return int(counts.max())


def asm_apply(patches: List[Patch], r: np.ndarray) -> np.ndarray:
    """z = sum_i E_i A_i^{-1} E_i^T r, one dense solve per patch."""
    z = np.zeros_like(r, dtype=np.float64)
    for patch in patches:
        z[patch.dofs] += dense_solve(patch.factorization, r[patch.dofs])
    return z


def schwarz_operator(patches: List[Patch], ndofs: int) -> sp.csr_matrix:
    """The additive Schwarz preconditioner as one sparse matrix."""
    rows, cols, vals = [], [], []
    for patch in patches:
        inverse = dense_inverse(patch.factorization)
        rows.append(np.repeat(patch.dofs, patch.size))
        cols.append(np.tile(patch.dofs, patch.size))
        vals.append(inverse.ravel())
    if not rows:
        return assemble_csr([], [], [], ndofs, ndofs)
    return assemble_csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), ndofs, ndofs)


def jacobi_apply(diag: np.ndarray, r: np.ndarray) -> np.ndarray:
    return r / diag


def estimate_lambda_max(
    A: sp.csr_matrix,
    smoother_apply: Callable[[np.ndarray], np.ndarray],
    iters: int = POWER_ITERATIONS,
    seed: int = 0,
    fixed_dofs: Optional[np.ndarray] = None,
) -> float:
    """Largest eigenvalue of M A by power iteration, Rayleigh quotient in the A inner product."""
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1.0, 1.0, A.shape[0])
    if fixed_dofs is not None:
        v[fixed_dofs] = 0.0
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise RelaxationError(detail="power iteration started from the zero vector")
    v /= norm
    for _ in range(iters):
        v = smoother_apply(A @ v)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise RelaxationError(detail="power iteration collapsed to zero")
        v /= norm
    Av = A @ v
    return float(Av @ smoother_apply(Av)) / float(v @ Av)


def chebyshev_smooth(A, smoother_apply, x, b, steps: int, lam_lo: float, lam_hi: float) -> np.ndarray:
    """Chebyshev iteration of degree ``steps`` for M A x = M b on [lam_lo, lam_hi]."""
    if not lam_hi > lam_lo > 0.0:
        raise RelaxationError(detail=f"invalid Chebyshev interval [{lam_lo}, {lam_hi}]")
    theta = 0.5 * (lam_hi + lam_lo)
    delta = 0.5 * (lam_hi - lam_lo)
    sigma = theta / delta
    rho = 1.0 / sigma

    x = np.array(x, dtype=np.float64)
    r = b - A @ x
    d = smoother_apply(r) / theta
    for k in range(steps):
        x += d
        if k == steps - 1:
            break
        r -= A @ d
        rho_next = 1.0 / (2.0 * sigma - rho)
        d = rho_next * rho * d + (2.0 * rho_next / delta) * smoother_apply(r)
        rho = rho_next
    return x


def richardson_smooth(A, smoother_apply, x, b, steps: int, damping: float) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    for _ in range(steps):
        x += damping * smoother_apply(b - A @ x)
    return x


@dataclass
class Smoother:
    """A symmetric relaxation M together with its acceleration on one level."""

    kind: str
    A: sp.csr_matrix
    operator: Optional[sp.csr_matrix] = None  # assembled Schwarz operator
    diag: Optional[np.ndarray] = None
    patches: List[Patch] = field(default_factory=list)
    smoothing: str = CHEBYSHEV
    steps: int = 2
    lam_max: float = 1.0
    damping: Optional[float] = None

    @classmethod
    def build(
        cls,
        kind: str,
        space: FunctionSpace,
        A: sp.csr_matrix,
        smoothing: str = CHEBYSHEV,
        steps: int = 2,
        seed: int = 0,
        damping: Optional[float] = None,
        patches: Optional[List[Patch]] = None,
    ) -> "Smoother":
        if kind not in RELAXATION_KINDS:
            raise RelaxationError(detail=f"unknown relaxation {kind!r}")
        if smoothing not in SMOOTHING_KINDS:
            raise RelaxationError(detail=f"unknown smoothing {smoothing!r}")

        smoother = cls(kind=kind, A=A, smoothing=smoothing, steps=steps, damping=damping)
        if kind == ASM:
            smoother.patches = patches if patches is not None else build_patches(space, A)
            smoother.operator = schwarz_operator(smoother.patches, A.shape[0])
            sizes = [p.size for p in smoother.patches]
            logger.debug(
                f"ASM: {len(sizes)} patches, size {min(sizes)}-{max(sizes)}, "
                f"overlap N_O={patch_overlap(smoother.patches, A.shape[0])}"
            )
        else:
            smoother.diag = A.diagonal()
        smoother.lam_max = estimate_lambda_max(A, smoother.apply, seed=seed, fixed_dofs=space.dirichlet_dofs)
        return smoother

    @property
    def interval(self) -> Tuple[float, float]:
        return CHEBYSHEV_LOWER * self.lam_max, CHEBYSHEV_UPPER * self.lam_max

    def apply(self, r: np.ndarray) -> np.ndarray:
        if self.kind == ASM:
            return self.operator @ r
        return jacobi_apply(self.diag, r)

    def smooth(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.smoothing == RICHARDSON:
            damping = self.damping if self.damping is not None else 1.0 / self.lam_max
            return richardson_smooth(self.A, self.apply, x, b, self.steps, damping)
        lo, hi = self.interval
        return chebyshev_smooth(self.A, self.apply, x, b, self.steps, lo, hi)
