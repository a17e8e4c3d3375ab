"""End-to-end solve of the condensed HDG Stokes/Brinkman system."""
import time
from dataclasses import dataclass, field

import numpy as np

from .condense import back_substitute, build_schur, factor_local, reduce_rhs
from .krylov import MinresBreakdown, minres
from .precon import build_preconditioner, projector
from .system import DofMap, assemble, assemble_rhs, deflation_vector

__all__ = ["StokesSolution", "solve_stokes", "manufactured_solution", "brinkman_tau", "cavity_lid"]


@dataclass
class StokesSolution:
    dofmap: DofMap
    params: object
    face: np.ndarray
    cell: np.ndarray
    report: object
    timings: dict = field(default_factory=dict)
    operator: object = None
    reduced: object = None
    preconditioner: object = None


def solve_stokes(mesh, params, source=None, boundary=None, kind="hat", tol=1e-8, maxit=2000,
                 dofmap=None, keep_operators=False):
    """Assemble, condense, precondition, solve with MINRES and back-substitute.

    A Lanczos breakdown is returned as a non-converged report rather
    than raised, so sweeps can record it.
    """
    t = {}
    t0 = time.perf_counter()
    dm = DofMap(mesh, params.k) if dofmap is None else dofmap
    A = assemble(mesh, dm, params, "stokes_a")
    F = factor_local(A)
    S = build_schur(A, F)
    rhs = assemble_rhs(mesh, dm, source, boundary, A)
    b = reduce_rhs(A, F, rhs)
    t["assemble"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    P = build_preconditioner(kind, mesh, dm, params)
    t["preconditioner"] = time.perf_counter() - t0

    e = deflation_vector(dm, "reduced")
    M = S.matrix
    try:
        x, rep = minres(lambda v: M @ v, P.apply, b, tol=tol, maxit=maxit, deflate=projector(e))
    except MinresBreakdown as exc:
        rep = exc.report
        rep.message = str(exc)
        x = np.zeros_like(b)
    t["solve"] = rep.seconds
    cell = back_substitute(A, F, rhs, x)
    sol = StokesSolution(dm, params, x, cell, rep, t)
    if keep_operators:
        sol.operator, sol.reduced, sol.preconditioner = A, S, P
    return sol


# --- problem data -------------------------------------------------------------

def manufactured_solution(nu, tau):
    """Smooth divergence-free test pair on the unit square with its source term.

    Returns (u, p, f); all map (N, 2) points to values.
    """
    pi = np.pi

    def u(x):
        s1, c1 = np.sin(pi * x[:, 0]), np.cos(pi * x[:, 0])
        s2, c2 = np.sin(pi * x[:, 1]), np.cos(pi * x[:, 1])
        return np.column_stack([s1 * s2, c1 * c2])

    def p(x):
        return np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1])

    def f(x):
        s1, c1 = np.sin(pi * x[:, 0]), np.cos(pi * x[:, 0])
        s2, c2 = np.sin(pi * x[:, 1]), np.cos(pi * x[:, 1])
        # tau u - nu lap u + grad p, with -lap u = 2 pi^2 u
        return (tau + 2.0 * nu * pi ** 2) * u(x) + np.column_stack([pi * c1 * c2, -pi * s1 * s2])

    return u, p, f


def brinkman_tau(x):
    """Heterogeneous reaction coefficient (strictly positive, minimum 0.5)."""
    return 0.5e6 * (1.0 + 1e-6 + np.sin(8.3 * np.pi * x[:, 0]) * np.sin(6.2 * np.pi * x[:, 1]))


def cavity_lid(top=1.0, tol=1e-12):
    """Boundary velocity ``(1 - x^4, 0)`` on the lid ``y = top``, zero elsewhere."""

    def g(x):
        on_lid = np.abs(x[:, 1] - top) < tol
        return np.column_stack([np.where(on_lid, 1.0 - x[:, 0] ** 4, 0.0), np.zeros(len(x))])

    return g
