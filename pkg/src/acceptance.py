"""Acceptance runner: DOF counts, iteration-count bands and the property suite."""
import time
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .assembly import apply_dirichlet, divergence_at_quadrature, macro_divergence_integrals
from .common import setup_logger
from .experiment import DEFAULT_GAMMAS, ExperimentConfig, ResultRow, run
from .linalg import same_structure
from .mesh import EdgeTag, alfeld_split, structured_unit_square
from .multigrid import Discretization, MultigridConfig, discretize, setup
from .relaxation import build_patches, patch_overlap
from .space import build_space, interpolate, p2_basis
from .transfer import build_robust_prolongation, build_standard_prolongation

logger = setup_logger("SVMG")

EXPECTED_DOFS = {1: 1602, 2: 6274, 3: 24834}
ROBUST_MAX_ITERATIONS = 25
ROBUST_MAX_SPREAD = 3.0
JACOBI_MAX_ITERATIONS = 40
FULL_GRID_BUDGET = 1800.0
SINGLE_SOLVE_BUDGET = 60.0


class AcceptanceCriterion(BaseModel):
    id: int
    description: str
    expected: str
    measured: str
    passed: bool


class AcceptanceReport(BaseModel):
    quick: bool
    seconds: float = 0.0
    criteria: List[AcceptanceCriterion] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)


def _lookup(rows: List[ResultRow]) -> Dict[Tuple[str, int, float], ResultRow]:
    return {(row.variant, row.refinement, row.gamma): row for row in rows}


def _iterations(row: ResultRow) -> float:
    return float(row.iterations) if row.converged else float("inf")


def check_dof_counts() -> AcceptanceCriterion:
    measured = {r: build_space(alfeld_split(structured_unit_square(4 * 2**r))).dim for r in EXPECTED_DOFS}
    return AcceptanceCriterion(
        id=1,
        description="vector DOF counts for refinements 1-3 on a 4x4 coarse grid",
        expected=str(EXPECTED_DOFS),
        measured=str(measured),
        passed=measured == EXPECTED_DOFS,
    )


def check_parameter_robustness(rows: List[ResultRow], refinements: List[int], gammas: List[float]) -> AcceptanceCriterion:
    table = _lookup(rows)
    worst, spreads = 0.0, {}
    for r in refinements:
        its = [_iterations(table[("robust-robust", r, g)]) for g in gammas]
        worst = max(worst, max(its))
        spreads[r] = max(its) / max(min(its), 1.0)
    return AcceptanceCriterion(
        id=2,
        description="robust-robust converges for every gamma with a gamma independent count",
        expected=f"iterations <= {ROBUST_MAX_ITERATIONS}, max/min <= {ROBUST_MAX_SPREAD:g} per refinement",
        measured=f"max iterations {worst:g}, max/min {({r: round(s, 2) for r, s in spreads.items()})}",
        passed=worst <= ROBUST_MAX_ITERATIONS and all(s <= ROBUST_MAX_SPREAD for s in spreads.values()),
    )


def check_transfer_necessity(rows: List[ResultRow]) -> AcceptanceCriterion:
    table = _lookup(rows)
    high = table[("robust-standard", 2, 1e4)]
    mid = table[("robust-standard", 2, 1e2)]
    return AcceptanceCriterion(
        id=3,
        description="robust-standard degrades on refinement 2",
        expected=f"gamma=1e4 not converged, gamma=1e2 <= {JACOBI_MAX_ITERATIONS}",
        measured=f"gamma=1e4: {high.iterations}, gamma=1e2: {mid.iterations}",
        passed=not high.converged and _iterations(mid) <= JACOBI_MAX_ITERATIONS,
    )


def check_relaxation_necessity(rows: List[ResultRow], refinements: List[int]) -> AcceptanceCriterion:
    table = _lookup(rows)
    stalled = [table[("jacobi-standard", r, 1e2)] for r in refinements]
    passed = not any(row.converged for row in stalled)
    measured = [f"jacobi-standard gamma=1e2: {[row.iterations for row in stalled]}"]
    for variant in ("jacobi-standard", "jacobi-robust"):
        its = [_iterations(table[(variant, r, 0.0)]) for r in refinements]
        passed &= max(its) <= JACOBI_MAX_ITERATIONS and max(its) - min(its) <= 3
        measured.append(f"{variant} gamma=0: {its}")
    return AcceptanceCriterion(
        id=4,
        description="Jacobi relaxation fails for gamma=1e2 and is mesh independent at gamma=0",
        expected=f"no convergence at gamma=1e2; gamma=0 counts <= {JACOBI_MAX_ITERATIONS}, spread <= 3",
        measured="; ".join(measured),
        passed=passed,
    )


def check_relaxation_isolation(rows: List[ResultRow], refinements: List[int]) -> AcceptanceCriterion:
    table = _lookup(rows)
    jacobi = [table[("jacobi-robust", r, 1e3)] for r in refinements]
    robust = [table[("robust-robust", r, 1e3)] for r in refinements]
    return AcceptanceCriterion(
        id=5,
        description="robust transfer alone does not fix Jacobi relaxation at gamma=1e3",
        expected=f"jacobi-robust not converged, robust-robust <= {ROBUST_MAX_ITERATIONS}",
        measured=f"jacobi-robust {[row.iterations for row in jacobi]}, robust-robust {[row.iterations for row in robust]}",
        passed=not any(row.converged for row in jacobi) and all(_iterations(row) <= ROBUST_MAX_ITERATIONS for row in robust),
    )


def _symmetry_defect(apply: Callable[[np.ndarray], np.ndarray], free: np.ndarray, n: int, rng, pairs: int) -> float:
    worst = 0.0
    for _ in range(pairs):
        x, y = np.zeros(n), np.zeros(n)
        x[free] = rng.standard_normal(free.size)
        y[free] = rng.standard_normal(free.size)
        Sx, Sy = apply(x), apply(y)
        worst = max(worst, abs(Sx @ y - x @ Sy) / (np.linalg.norm(Sx) * np.linalg.norm(y)))
    return worst


def _mean_free_divergence_norm(space, u, groups) -> float:
    """L2 norm of div u minus its mean over each group of split cells."""
    div, weights = divergence_at_quadrature(space, u)
    area = np.bincount(groups, weights=weights.sum(axis=1))
    mean = np.bincount(groups, weights=(div * weights).sum(axis=1)) / area
    return float(np.sqrt(np.sum(weights * (div - mean[groups, None]) ** 2)))


def property_checks(discretization: Discretization, seed: int = 0) -> Dict[str, Tuple[float, float, bool]]:
    """name -> (measured, tolerance, passed) on the first two levels of ``discretization``."""
    rng = np.random.default_rng(seed)
    coarse, fine = discretization.levels[0], discretization.levels[1]
    maps = discretization.mesh.refinements[0]
    results: Dict[str, Tuple[float, float, bool]] = {}

    def record(name: str, measured: float, tolerance: float, passed: Optional[bool] = None):
        results[name] = (float(measured), tolerance, measured <= tolerance if passed is None else passed)

    # operators
    ops = fine.operators
    A, C = ops.A, ops.C
    record("A symmetric", abs(A - A.T).max() / abs(A).max(), 1e-12)
    record("C symmetric", abs(C - C.T).max() / abs(C).max(), 1e-12)
    scale = abs(A).max()
    rigid = [lambda x, y: (1.0 + 0 * x, 0 * y), lambda x, y: (0 * x, 1.0 + 0 * y), lambda x, y: (-y, x)]
    defect = max(np.abs(A @ interpolate(fine.space, f)).max() / scale for f in rigid)
    record("rigid motions annihilated", defect, 1e-11)

    values, _ = p2_basis(rng.uniform(0.0, 0.5, (20, 2)))
    record("partition of unity", np.abs(values.sum(axis=1) - 1.0).max(), 1e-14)

    quadratic = lambda x, y: (x**2, x * y)
    P_free = build_standard_prolongation(coarse.space, fine.space, maps, apply_bcs=False)
    reproduced = P_free @ interpolate(coarse.space, quadratic)
    record("quadratic reproduction", np.abs(reproduced - interpolate(fine.space, quadratic)).max(), 1e-12)

    # relaxation and cycle symmetry at gamma = 1e3
    config = MultigridConfig(coarse_n=4, levels=2, gamma=1e3, seed=seed)
    hierarchy = setup(config, discretization)
    smoother = hierarchy.smoothers[1]
    free, n = fine.space.free_dofs, fine.dim
    record("smoother symmetry", _symmetry_defect(smoother.apply, free, n, rng, 20), 1e-10)
    record("W-cycle symmetry", _symmetry_defect(hierarchy.apply, free, n, rng, 10), 1e-9)

    # transfers
    P = fine.prolongation
    groups = maps.parent_cell[fine.space.split.macro_cell_of_cell]
    coarse_free = coarse.space.free_dofs
    worst_flux = 0.0
    for gamma in (0.0, 1.0, 1e4, 1e8):
        A_gamma = apply_dirichlet(ops, gamma)
        P_robust = discretization.robust_prolongation(1, gamma, A_gamma)
        for _ in range(10):
            u = np.zeros(coarse.dim)
            u[coarse_free] = rng.standard_normal(coarse_free.size)
            expected = macro_divergence_integrals(coarse.space, u)
            got = macro_divergence_integrals(fine.space, P_robust @ u, groups)
            worst_flux = max(worst_flux, np.abs(got - expected).max() / max(np.abs(expected).max(), 1.0))
    record("macro-cell flux preservation", worst_flux, 1e-10)

    P_zero = build_robust_prolongation(P, fine.interior_sets, apply_dirichlet(ops, 0.0), C, 0.0)
    record("robust transfer at gamma=0", abs(P_zero - P).max() if P.nnz else 0.0, 1e-14, same_structure(P, P_zero))

    A_high = apply_dirichlet(ops, 1e4)
    P_high = discretization.robust_prolongation(1, 1e4, A_high)
    violations = 0
    for _ in range(10):
        u = np.zeros(coarse.dim)
        u[coarse_free] = rng.standard_normal(coarse_free.size)
        robust_norm = _mean_free_divergence_norm(fine.space, P_high @ u, groups)
        standard_norm = _mean_free_divergence_norm(fine.space, P @ u, groups)
        violations += robust_norm > standard_norm * (1.0 + 1e-12)
    record("variational optimality", violations, 0)

    # patch structure
    sizes = np.array([dofs.size for _, dofs in fine.interior_sets])
    record("interior DOFs per coarse macro cell", np.abs(sizes - 38).max(), 0)
    patches = build_patches(fine.space, hierarchy.fine_operator)
    macro = fine.space.split.macro
    # stars free of boundary edges
    boundary_cell = np.any(macro.edge_tags[macro.cell_edges] != EdgeTag.INTERIOR, axis=1)
    near_boundary = (macro.cell_vertex_incidence().T.astype(np.int64) @ boundary_cell.astype(np.int64)) > 0
    interior_sizes = np.array([p.size for p in patches if not near_boundary[p.owner]])
    record("interior patch size", np.abs(interior_sizes - 62).max(), 0)
    overlap = patch_overlap(patches, fine.dim)
    record("patch overlap N_O", abs(overlap - 3), 0)
    return results


def check_properties(seed: int = 0) -> AcceptanceCriterion:
    results = property_checks(discretize(4, 2), seed=seed)
    failed = [name for name, (_, _, ok) in results.items() if not ok]
    return AcceptanceCriterion(
        id=6,
        description="property suite on refinement 1",
        expected="all properties within tolerance",
        measured="; ".join(f"{name}={value:.3g} (tol {tol:g})" for name, (value, tol, _) in results.items()),
        passed=not failed,
    )


def check_runtime(rows: List[ResultRow], grid_seconds: float, quick: bool) -> AcceptanceCriterion:
    finest = max(row.refinement for row in rows)
    single = max(row.seconds for row in rows if row.variant == "robust-robust" and row.refinement == finest)
    scope = "quick grid" if quick else "full grid"
    return AcceptanceCriterion(
        id=7,
        description=f"runtime budget ({scope})",
        expected=f"grid < {FULL_GRID_BUDGET:g}s, robust-robust refinement {finest} solve < {SINGLE_SOLVE_BUDGET:g}s",
        measured=f"grid {grid_seconds:.1f}s, slowest solve {single:.1f}s",
        passed=grid_seconds < FULL_GRID_BUDGET and single < SINGLE_SOLVE_BUDGET,
    )


def run_acceptance(quick: bool = False, seed: int = 0) -> AcceptanceReport:
    """Evaluate every criterion; failures are reported, never raised."""
    start = time.perf_counter()
    report = AcceptanceReport(quick=quick)
    refinements = [1, 2] if quick else [1, 2, 3]
    gammas = [float(g) for g in DEFAULT_GAMMAS.split(",")]

    report.criteria.append(check_dof_counts())

    grid_start = time.perf_counter()
    rows = run(ExperimentConfig(refinements=refinements, gammas=gammas, seed=seed, out=None))
    grid_seconds = time.perf_counter() - grid_start

    report.criteria.append(check_parameter_robustness(rows, refinements, gammas))
    report.criteria.append(check_transfer_necessity(rows))
    report.criteria.append(check_relaxation_necessity(rows, refinements))
    report.criteria.append(check_relaxation_isolation(rows, refinements))
    report.criteria.append(check_properties(seed))
    report.criteria.append(check_runtime(rows, grid_seconds, quick))

    report.seconds = time.perf_counter() - start
    for criterion in report.criteria:
        status = "PASS" if criterion.passed else "FAIL"
        logger.info(f"[{status}] {criterion.id}. {criterion.description}: {criterion.measured}")
    return report
