import numpy as np
import pytest

from hdgprec.fe import FormParams
from hdgprec.krylov import MinresBreakdown, minres
from hdgprec.mesh import generate_unit_square
from hdgprec.precon import projector
from hdgprec.solver import manufactured_solution, solve_stokes


def _ident(v):
    return v


def test_zero_rhs():
    x, rep = minres(_ident, _ident, np.zeros(5))
    assert not x.any()
    assert rep.iterations == 0 and rep.converged
    assert rep.initial_guess == "zero"


def test_diagonal_two_by_two():
    S = np.diag([1.0, 2.0])
    b = np.array([1.0, 1.0])
    x, rep = minres(lambda v: S @ v, _ident, b, tol=1e-14)
    assert rep.converged and rep.iterations <= 2
    assert np.abs(x - [1.0, 0.5]).max() < 1e-14


def _indefinite(n, seed, kernel=False):
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    lam = rng.uniform(0.5, 5.0, n) * rng.choice([-1.0, 1.0], n)
    e = None
    if kernel:
        lam[0] = 0.0
        e = Q[:, 0]
    X = rng.standard_normal((n, n))
    P = X @ X.T + n * np.eye(n)
    return Q @ np.diag(lam) @ Q.T, np.linalg.inv(P), e


def _check_termination(S, Pinv, e, n):
    b = np.random.default_rng(1).standard_normal(n)
    x, rep = minres(lambda v: S @ v, lambda v: Pinv @ v, b, tol=1e-10, maxit=n, deflate=projector(e))
    assert rep.converged and rep.iterations <= n
    h = np.array(rep.residual_history)
    assert np.all(np.diff(h) <= 1e-12)
    bp = b - e * (e @ b)
    assert np.linalg.norm(S @ x - bp) <= 1e-8 * np.linalg.norm(bp)
    assert abs(e @ x) < 1e-12


_FP_DELAY = pytest.mark.xfail(strict=True, reason="loss of Lanczos orthogonality in floating point delays "
                                                  "termination past n; scipy.sparse.linalg.minres needs the same count")


@pytest.mark.parametrize("n", [5, 20, pytest.param(40, marks=_FP_DELAY), pytest.param(60, marks=_FP_DELAY)])
def test_finite_termination_spread_spectrum(n):
    _check_termination(*_indefinite(n, n, kernel=True), n)


@pytest.mark.parametrize("n", [5, 20, 40, 60])
def test_finite_termination_clustered_spectrum(n):
    # eigenvalues of both signs in [1, 2]; the preconditioner is a small SPD perturbation of identity
    rng = np.random.default_rng(n)
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    lam = rng.uniform(1.0, 2.0, n) * rng.choice([-1.0, 1.0], n)
    lam[0] = 0.0
    X = rng.standard_normal((n, n))
    Pinv = np.linalg.inv(np.eye(n) + 0.1 * X @ X.T / n)
    _check_termination(Q @ np.diag(lam) @ Q.T, Pinv, Q[:, 0], n)


def test_solution_invariant_under_deflation_mode():
    S, Pinv, e = _indefinite(30, 4, kernel=True)
    b = np.random.default_rng(2).standard_normal(30)
    args = dict(tol=1e-12, maxit=100, deflate=projector(e))
    x1, _ = minres(lambda v: S @ v, lambda v: Pinv @ v, b, **args)
    x2, _ = minres(lambda v: S @ v, lambda v: Pinv @ v, b + 3.7 * e, **args)
    assert np.abs(x1 - x2).max() <= 1e-12 * max(1.0, np.abs(x1).max())


def test_tolerance_validation():
    for tol in (0.0, 1.0, -1e-3):
        with pytest.raises(ValueError):
            minres(_ident, _ident, np.ones(3), tol=tol)


def test_indefinite_preconditioner_breakdown():
    P = np.diag([1.0, -1.0])
    with pytest.raises(MinresBreakdown) as exc:
        minres(_ident, lambda v: P @ v, np.array([0.0, 1.0]))
    assert exc.value.report is not None


def test_invariant_subspace_breakdown_distinct_from_nonconvergence():
    S = np.diag([1.0, 0.0])
    with pytest.raises(MinresBreakdown):
        minres(lambda v: S @ v, _ident, np.array([1.0, 1.0]), tol=1e-10)


def test_maxit_reports_nonconvergence():
    S, Pinv, _ = _indefinite(40, 7)
    x, rep = minres(lambda v: S @ v, _ident, np.ones(40), tol=1e-12, maxit=3)
    assert not rep.converged
    assert rep.iterations == 3
    assert "3 iterations" in rep.message
    assert rep.true_residual > 0


def test_callback_sees_every_iteration():
    S, Pinv, _ = _indefinite(10, 3)
    seen = []
    _, rep = minres(lambda v: S @ v, lambda v: Pinv @ v, np.ones(10), tol=1e-10, callback=lambda x, r: seen.append(r))
    assert len(seen) == rep.iterations
    assert seen == rep.residual_history[1:]


@pytest.mark.slow
def test_manufactured_512_cells_near_reference_count():
    m = generate_unit_square(4)
    p = FormParams(nu=1.0, tau=1.0, eta=16.0)
    _, _, f = manufactured_solution(p.nu, p.tau)
    sol = solve_stokes(m, p, source=f, kind="hat", tol=1e-8)
    assert sol.report.converged
    assert 0.8 * 82 <= sol.report.iterations <= 1.2 * 82
