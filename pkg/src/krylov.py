"""Preconditioned conjugate gradients with a Euclidean residual stopping rule."""
import time
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .common import IndefinitePreconditionerError, setup_logger

logger = setup_logger("SVMG")

DEFAULT_RTOL = 1e-8
DEFAULT_MAXIT = 200


class SolveReport(BaseModel):
    iterations: int
    converged: bool
    residuals: List[float] = Field(default_factory=list)
    relative_residual: float
    seconds: float
    maxit: int = DEFAULT_MAXIT

    @property
    def iterations_label(self) -> str:
        """Iteration count, or '>maxit' when the solve ran out of iterations."""
        return str(self.iterations) if self.converged else f">{self.maxit}"


def _as_operator(A) -> Callable[[np.ndarray], np.ndarray]:
    return A if callable(A) else (lambda v: A @ v)


def pcg(
    A,
    M,
    b: np.ndarray,
    rtol: float = DEFAULT_RTOL,
    maxit: int = DEFAULT_MAXIT,
    x0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """Solve A x = b; stop once ||r_k|| <= rtol ||r_0|| or after maxit iterations.

    ``A`` and ``M`` are matrices or callables. Iterations count applications
    of A.
    """
    apply_A = _as_operator(A)
    apply_M = _as_operator(M)
    start = time.perf_counter()

    x = np.zeros_like(b, dtype=np.float64) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - apply_A(x) if x0 is not None else np.array(b, dtype=np.float64)
    r0 = np.linalg.norm(r)
    residuals = [float(r0)]
    target = rtol * r0

    k = 0
    converged = r0 <= target
    if not converged:
        z = apply_M(r)
        rz = float(r @ z)
        p = z.copy()
        while k < maxit:
            if rz <= 0.0:
                logger.error(f"Preconditioner lost definiteness at iteration {k}: <z, r> = {rz:.3e}")
                raise IndefinitePreconditionerError(k, rz)
            q = apply_A(p)
            k += 1
            alpha = rz / float(p @ q)
            x += alpha * p
            r -= alpha * q
            norm = float(np.linalg.norm(r))
            residuals.append(norm)
            if norm <= target:
                converged = True
                break
            z = apply_M(r)
            rz_next = float(r @ z)
            p = z + (rz_next / rz) * p
            rz = rz_next

    report = SolveReport(
        iterations=k,
        converged=bool(converged),
        residuals=residuals,
        relative_residual=residuals[-1] / r0 if r0 > 0 else 0.0,
        seconds=time.perf_counter() - start,
        maxit=maxit,
    )
    return x, report
