import numpy as np
import pytest
import scipy.sparse as sp

from src.common import IndefinitePreconditionerError
from src.krylov import SolveReport, pcg


def test_identity_converges_in_one_iteration(rng):
    b = rng.standard_normal(10)
    x, report = pcg(sp.identity(10, format="csr"), lambda r: r, b)
    assert report.converged and report.iterations == 1
    assert np.allclose(x, b)


def test_exact_preconditioner(rng):
    G = rng.standard_normal((15, 15))
    A = G @ G.T + np.eye(15)
    inverse = np.linalg.inv(A)
    _, report = pcg(A, inverse, rng.standard_normal(15))
    assert report.iterations == 1


def test_two_by_two_finite_termination():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    x, report = pcg(A, np.eye(2), np.array([1.0, 1.0]), rtol=1e-12)
    assert report.converged and report.iterations <= 2
    assert np.allclose(x, [0.4, 0.2], atol=1e-14)


@pytest.mark.parametrize("n", [5, 17, 30])
def test_finite_termination(n, rng):
    G = rng.standard_normal((n, n))
    A = G @ G.T + n * np.eye(n)
    _, report = pcg(A, np.eye(n), rng.standard_normal(n), rtol=1e-10, maxit=n)
    assert report.converged


def test_energy_error_decreases_monotonically(rng):
    n = 25
    G = rng.standard_normal((n, n))
    A = G @ G.T + np.eye(n)
    b = rng.standard_normal(n)
    exact = np.linalg.solve(A, b)
    M = np.diag(1.0 / np.diag(A))
    errors = []
    for k in range(1, 12):
        x, _ = pcg(A, M, b, rtol=1e-30, maxit=k)
        e = exact - x
        errors.append(e @ A @ e)
    assert all(later < earlier for earlier, later in zip(errors, errors[1:]))


def test_report_invariants(rng):
    A = np.diag(np.linspace(1.0, 1e4, 50))
    _, report = pcg(A, np.eye(50), rng.standard_normal(50), rtol=1e-8, maxit=5)
    assert not report.converged
    assert len(report.residuals) == report.iterations + 1 == 6
    assert report.iterations_label == ">5"
    assert report.relative_residual > 1e-8


def test_converged_report_label(rng):
    _, report = pcg(np.eye(3), np.eye(3), rng.standard_normal(3))
    assert report.iterations_label == "1"
    assert report.relative_residual <= 1e-8
    assert isinstance(report, SolveReport)


def test_zero_rhs():
    x, report = pcg(np.eye(4), np.eye(4), np.zeros(4))
    assert report.converged and report.iterations == 0
    assert np.all(x == 0.0)


def test_indefinite_preconditioner_is_fatal(rng):
    with pytest.raises(IndefinitePreconditionerError) as info:
        pcg(np.eye(4), -np.eye(4), rng.standard_normal(4))
    assert info.value.iteration == 0


def test_initial_guess(rng):
    A = np.diag([1.0, 2.0, 3.0])
    b = np.array([1.0, 2.0, 3.0])
    x, report = pcg(A, np.eye(3), b, x0=np.ones(3))
    assert report.iterations == 0 and np.allclose(x, 1.0)
