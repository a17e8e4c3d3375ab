"""Preconditioned MINRES with projection against a known kernel vector."""
import time
from dataclasses import dataclass, field

import numpy as np

__all__ = ["SolveReport", "MinresBreakdown", "minres"]


@dataclass
class SolveReport:
    """Outcome of a MINRES solve.

    ``residual_history`` holds the relative preconditioned residual
    norms ``|r_j|_{P} / |r_0|_{P}`` from the Lanczos recurrence, starting
    with 1 (or empty when the right side vanishes).
    """

    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    seconds: float = 0.0
    true_residual: float = 0.0
    initial_guess: str = "zero"
    message: str = ""


class MinresBreakdown(RuntimeError):
    """Lanczos breakdown that is not convergence (e.g. indefinite preconditioner)."""

    def __init__(self, msg, report):
        super().__init__(msg)
        self.report = report


def minres(apply_S, apply_P, b, tol=1e-8, maxit=1000, deflate=None, callback=None):
    """Solve ``S x = b`` by MINRES preconditioned with the SPD map ``apply_P``.

    ``deflate`` is a projector onto the working space; it is applied to
    ``b`` once and to every preconditioned vector.  The initial guess is
    zero and the iteration stops when the relative preconditioned
    residual drops to ``tol``.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    t0 = time.perf_counter()
    proj = deflate if deflate is not None else (lambda v: v)
    b = proj(np.asarray(b, dtype=float))
    n = len(b)
    x = np.zeros(n)
    rep = SolveReport()

    def finish(converged, msg=""):
        rep.converged = converged
        rep.message = msg
        rep.true_residual = float(np.linalg.norm(b - apply_S(x))) if rep.iterations else float(np.linalg.norm(b))
        rep.seconds = time.perf_counter() - t0
        return proj(x), rep

    r1 = b.copy()
    y = proj(apply_P(r1))
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise MinresBreakdown("preconditioner is not positive definite", rep)
    if beta1 == 0.0:
        return finish(True, "zero right-hand side")
    beta1 = np.sqrt(beta1)
    rep.residual_history.append(1.0)

    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    eps = np.finfo(float).eps

    for itn in range(1, maxit + 1):
        v = y / beta
        y = proj(apply_S(v))
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = proj(apply_P(r2))
        oldb = beta
        beta2 = float(r2 @ y)
        if beta2 < -1e-14 * oldb**2:
            rep.iterations = itn - 1
            raise MinresBreakdown("preconditioner is not positive definite", rep)
        beta = np.sqrt(max(beta2, 0.0))

        # apply the previous rotation, then build the next one
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps * beta1)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        rel = phibar / beta1
        rep.iterations = itn
        rep.residual_history.append(rel)
        if callback is not None:
            callback(x, rel)
        if rel <= tol:
            return finish(True)
        if beta <= eps * beta1:
            # invariant Krylov space without reaching the tolerance
            raise MinresBreakdown(f"Lanczos breakdown at iteration {itn} with residual {rel:.3e}", rep)
    return finish(False, f"no convergence within {maxit} iterations")
