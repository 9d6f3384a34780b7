"""Geometric multigrid on a hierarchy of Alfeld-split meshes.

Every level rediscretizes the operator on its own split mesh; levels are
connected by standard or robust prolongation, with the transpose as
restriction. The cycle is used as a fixed symmetric preconditioner: it is
always applied from a zero initial guess.
"""
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, Field, field_validator

from .assembly import OperatorSet, apply_dirichlet, apply_dirichlet_rhs, assemble_operators, assemble_traction
from .common import ConfigError, setup_logger
from .linalg import DenseFactorization, dense_factorize, dense_solve
from .mesh import MeshHierarchy, build_hierarchy
from .relaxation import CHEBYSHEV, RELAXATION_KINDS, SMOOTHING_KINDS, Smoother
from .space import FunctionSpace, build_space
from .transfer import (
    ROBUST,
    STANDARD,
    TRANSFER_KINDS,
    TransferOperator,
    build_robust_prolongation,
    build_standard_prolongation,
    interior_dof_sets,
)

logger = setup_logger("SVMG")


class MultigridConfig(BaseModel):
    coarse_n: int = Field(4, ge=1)
    levels: int = Field(2, ge=1)
    gamma: float = Field(0.0, ge=0.0)
    relaxation: str = "asm"
    transfer: str = ROBUST
    smoothing: str = CHEBYSHEV
    smoothing_steps: int = Field(2, ge=1)
    cycle_index: int = Field(2, ge=1, le=2)
    seed: int = 0

    @field_validator("relaxation")
    @classmethod
    def check_relaxation(cls, value: str) -> str:
        if value not in RELAXATION_KINDS:
            raise ValueError(f"relaxation must be one of {RELAXATION_KINDS}")
        return value

    @field_validator("transfer")
    @classmethod
    def check_transfer(cls, value: str) -> str:
        if value not in TRANSFER_KINDS:
            raise ValueError(f"transfer must be one of {TRANSFER_KINDS}")
        return value

    @field_validator("smoothing")
    @classmethod
    def check_smoothing(cls, value: str) -> str:
        if value not in SMOOTHING_KINDS:
            raise ValueError(f"smoothing must be one of {SMOOTHING_KINDS}")
        return value


class TimingBreakdown(BaseModel):
    relaxation_setup: float = 0.0
    relaxation_apply: float = 0.0
    transfer_setup: float = 0.0
    transfer_apply: float = 0.0
    other: float = 0.0

    def summary(self) -> str:
        return ", ".join(f"{name}={value:.3f}s" for name, value in self.model_dump().items())


@dataclass
class Level:
    """Parameter-independent data of one level."""

    space: FunctionSpace
    operators: OperatorSet
    prolongation: Optional[sp.csr_matrix] = None  # from the next coarser level
    interior_sets: List[Tuple[int, np.ndarray]] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.space.dim


@dataclass
class Discretization:
    """Meshes, spaces, assembled A and C and standard transfers for all levels.

    Reused across gamma values and solver variants; robust prolongations are
    cached per (level, gamma).
    """

    mesh: MeshHierarchy
    levels: List[Level]
    transfer_cache: Dict[Tuple[int, float], sp.csr_matrix] = field(default_factory=dict)

    @property
    def finest(self) -> Level:
        return self.levels[-1]

    def load_vector(self) -> np.ndarray:
        space = self.finest.space
        return apply_dirichlet_rhs(assemble_traction(space), space.dirichlet_dofs)

    def robust_prolongation(self, level: int, gamma: float, A_fine: sp.csr_matrix) -> sp.csr_matrix:
        key = (level, float(gamma))
        if key not in self.transfer_cache:
            lvl = self.levels[level]
            self.transfer_cache[key] = build_robust_prolongation(
                lvl.prolongation, lvl.interior_sets, A_fine, lvl.operators.C, gamma
            )
            logger.debug(f"Cached robust prolongation for level {level}, gamma={gamma:g}")
        return self.transfer_cache[key]


def discretize(coarse_n: int, levels: int) -> Discretization:
    mesh = build_hierarchy(coarse_n, levels)
    built: List[Level] = []
    for index, split in enumerate(mesh.levels):
        space = build_space(split)
        level = Level(space=space, operators=assemble_operators(space))
        if index > 0:
            maps = mesh.refinements[index - 1]
            coarse = built[index - 1]
            level.prolongation = build_standard_prolongation(coarse.space, space, maps)
            level.interior_sets = interior_dof_sets(space, maps, coarse.space.split.macro.num_cells)
        built.append(level)
        logger.debug(f"Level {index}: {space.dim} dofs, {split.macro.num_cells} macro cells")
    return Discretization(mesh=mesh, levels=built)


@dataclass
class MGHierarchy:
    discretization: Discretization
    config: MultigridConfig
    operators: List[sp.csr_matrix]
    smoothers: List[Optional[Smoother]]
    transfers: List[Optional[TransferOperator]]
    coarse_factorization: DenseFactorization
    timings: TimingBreakdown = field(default_factory=TimingBreakdown)

    @property
    def num_levels(self) -> int:
        return len(self.operators)

    @property
    def fine_operator(self) -> sp.csr_matrix:
        return self.operators[-1]

    def coarse_solve(self, b: np.ndarray) -> np.ndarray:
        return dense_solve(self.coarse_factorization, b)

    def wcycle(self, level: int, b: np.ndarray, x: Optional[np.ndarray] = None) -> np.ndarray:
        """One multigrid cycle on ``level`` with cycle index config.cycle_index."""
        if level == 0:
            start = time.perf_counter()
            x = self.coarse_solve(b)
            self.timings.other += time.perf_counter() - start
            return x

        A = self.operators[level]
        smoother = self.smoothers[level]
        transfer = self.transfers[level]
        x = np.zeros_like(b) if x is None else x

        start = time.perf_counter()
        x = smoother.smooth(x, b)
        self.timings.relaxation_apply += time.perf_counter() - start

        start = time.perf_counter()
        coarse_b = transfer.restrict(b - A @ x)
        self.timings.transfer_apply += time.perf_counter() - start

        correction = np.zeros_like(coarse_b)
        for _ in range(self.config.cycle_index):
            correction = self.wcycle(level - 1, coarse_b, correction)
            if level - 1 == 0:
                break  # exact coarse solve, a repeat changes nothing

        start = time.perf_counter()
        x = x + transfer.prolong(correction)
        self.timings.transfer_apply += time.perf_counter() - start

        start = time.perf_counter()
        x = smoother.smooth(x, b)
        self.timings.relaxation_apply += time.perf_counter() - start
        return x

    def apply(self, r: np.ndarray) -> np.ndarray:
        """Preconditioner action: one cycle from a zero initial guess."""
        return self.wcycle(self.num_levels - 1, r)


def configure(discretization: Discretization, config: MultigridConfig) -> MGHierarchy:
    """Build the gamma dependent operators, smoothers and transfers."""
    timings = TimingBreakdown()
    operators, smoothers, transfers = [], [], []
    for index, level in enumerate(discretization.levels):
        start = time.perf_counter()
        A = apply_dirichlet(level.operators, config.gamma)
        operators.append(A)
        timings.other += time.perf_counter() - start
        if index == 0:
            smoothers.append(None)
            transfers.append(None)
            continue

        start = time.perf_counter()
        smoother = Smoother.build(
            config.relaxation,
            level.space,
            A,
            smoothing=config.smoothing,
            steps=config.smoothing_steps,
            seed=config.seed,
        )
        smoothers.append(smoother)
        timings.relaxation_setup += time.perf_counter() - start

        start = time.perf_counter()
        if config.transfer == ROBUST:
            P = discretization.robust_prolongation(index, config.gamma, A)
        else:
            P = level.prolongation
        transfers.append(TransferOperator(P=P, kind=config.transfer, gamma=config.gamma))
        timings.transfer_setup += time.perf_counter() - start
        lo, hi = smoother.interval
        logger.debug(f"Level {index}: {config.relaxation} smoother, interval [{lo:.4g}, {hi:.4g}]")

    start = time.perf_counter()
    coarse = dense_factorize(operators[0].toarray(), block_id="coarse level")
    timings.other += time.perf_counter() - start
    return MGHierarchy(
        discretization=discretization,
        config=config,
        operators=operators,
        smoothers=smoothers,
        transfers=transfers,
        coarse_factorization=coarse,
        timings=timings,
    )


def setup(config: MultigridConfig, discretization: Optional[Discretization] = None) -> MGHierarchy:
    if discretization is None:
        discretization = discretize(config.coarse_n, config.levels)
    elif len(discretization.levels) != config.levels:
        raise ConfigError(f"discretization has {len(discretization.levels)} levels, config asks for {config.levels}")
    return configure(discretization, config)
