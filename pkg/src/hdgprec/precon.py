"""Block diagonal preconditioners for the condensed Stokes face system.

Both preconditioners act on ``(u_bar, p_bar)`` as

    z_u = S_u^{-1} r_u,        z_p = tau * S_d^+ r_p + nu * S_s^{-1} r_p,

where ``S_u`` is the condensed velocity Gram (``bar``) or the condensed
reaction-diffusion operator (``hat``), ``S_d`` the condensed pressure
diffusion operator inverted on the complement of constants, and ``S_s``
the (diagonal) face part of the pressure mass Gram.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .condense import build_schur, factor_local
from .system import assemble, constant_mode

__all__ = [
    "Preconditioner",
    "SparseSolver",
    "build_preconditioner",
    "preconditioner_from_blocks",
    "sum_norm_gram",
    "optimal_splitting",
    "projector",
]


def projector(e):
    """Euclidean projector ``v - e (e . v)`` onto the complement of unit ``e``."""
    if e is None:
        return lambda v: v

    def proj(v):
        if v.ndim == 1:
            return v - e * (e @ v)
        return v - np.outer(e, e @ v)

    return proj


class SparseSolver:
    """Exact solver for a sparse symmetric matrix.

    With ``kernel`` set to a unit vector spanning the null space, the
    matrix is bordered by that vector, which yields the inverse on the
    complement (the pseudo-inverse for a one-dimensional kernel).
    """

    def __init__(self, A, kernel=None):
        A = sp.csc_matrix(A)
        self.n = A.shape[0]
        self.kernel = kernel
        if A.nnz and _is_diagonal(A) and kernel is None:
            d = A.diagonal()
            if np.any(d <= 0):
                raise np.linalg.LinAlgError("diagonal block has non-positive entries")
            self._diag = 1.0 / d
            self._lu = None
            return
        self._diag = None
        if kernel is not None:
            e = sp.csc_matrix(kernel.reshape(-1, 1))
            A = sp.bmat([[A, e], [e.T, None]], format="csc")
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"factorisation failed: {exc}") from None

    def solve(self, r):
        if self._diag is not None:
            return self._diag * r if r.ndim == 1 else self._diag[:, None] * r
        if self.kernel is None:
            return self._lu.solve(r)
        pad = np.zeros((1,) + r.shape[1:])
        return self._lu.solve(np.concatenate([r, pad]))[:self.n]


def _is_diagonal(A):
    A = A.tocoo()
    return bool(np.all(A.row == A.col))


@dataclass
class Preconditioner:
    """Factorised block preconditioner; ``apply`` is the action of P^{-1}."""

    kind: str
    n_u: int
    n_p: int
    nu: float
    tau_scale: float
    velocity: SparseSolver
    diffusion: SparseSolver
    mass: SparseSolver
    deflation: np.ndarray
    blocks: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.n_u + self.n_p

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        ru, rp = r[:self.n_u], r[self.n_u:]
        e = self.deflation
        if e is not None:
            rp = rp - (np.outer(e, e @ rp) if rp.ndim > 1 else e * (e @ rp))
        zu = self.velocity.solve(ru)
        zp = self.tau_scale * self.diffusion.solve(rp) + self.nu * self.mass.solve(rp)
        if e is not None:
            zp = zp - (np.outer(e, e @ zp) if zp.ndim > 1 else e * (e @ zp))
        return np.concatenate([zu, zp])

    __call__ = apply

    def forward(self, x):
        """Action of P itself on the working space.

        The pressure block is the parallel sum ``A - A (A + B)^{-1} A`` of
        ``A = S_d / tau_scale`` and ``B = S_s / nu``, whose inverse on the
        complement of constants is ``tau_scale S_d^+ + nu S_s^{-1}``.
        """
        x = np.asarray(x, dtype=float)
        xu, xp = x[:self.n_u], x[self.n_u:]
        e = self.deflation
        if e is not None:
            xp = xp - e * (e @ xp)
        if "parallel" not in self.blocks:
            A = sp.csc_matrix(self.blocks["diffusion"]) / self.tau_scale
            self.blocks["parallel"] = (A, spla.splu(A + sp.csc_matrix(self.blocks["mass"]) / self.nu))
        A, lu = self.blocks["parallel"]
        Ax = A @ xp
        yp = Ax - A @ lu.solve(Ax)
        if e is not None:
            yp = yp - e * (e @ yp)
        return np.concatenate([self.blocks["velocity"] @ xu, yp])

    def dense_inverse(self):
        """Dense matrix of ``apply`` (small problems only)."""
        M = self.apply(np.eye(self.n))
        return 0.5 * (M + M.T)

    def face_deflation(self):
        """Deflation vector in the full face layout."""
        if self.deflation is None:
            return None
        return np.concatenate([np.zeros(self.n_u), self.deflation])


def preconditioner_from_blocks(kind, S_u, S_d, S_s, nu, tau_scale, kernel=None):
    """Build a Preconditioner from already assembled face blocks."""
    vel = SparseSolver(S_u)
    dif = SparseSolver(S_d, kernel=kernel)
    mass = SparseSolver(S_s)
    return Preconditioner(kind, S_u.shape[0], S_d.shape[0], float(nu), float(tau_scale),
                          vel, dif, mass, kernel, {"velocity": S_u, "diffusion": S_d, "mass": S_s})


def build_preconditioner(kind, mesh, dofmap, params):
    """Assemble, condense and factor the blocks of the ``bar`` or ``hat`` preconditioner.

    For cell-wise variable ``tau`` the pressure diffusion block is the
    condensed ``tilde a_h`` operator (which already carries ``1/tau``).
    """
    if kind not in ("bar", "hat"):
        raise ValueError("kind must be 'bar' or 'hat'")
    taus = params.tau_cells(mesh.n_cells)
    if params.nu <= 0 or np.any(taus <= 0):
        raise ValueError("the preconditioners need nu > 0 and tau > 0")
    sel = "velocity_Pu" if kind == "bar" else "velocity_tilde_d"
    Su = _schur(mesh, dofmap, params, sel)
    if params.tau_is_constant:
        Sd = _schur(mesh, dofmap, params, "pressure_Pd")
        scale = float(params.tau)
    else:
        Sd = _schur(mesh, dofmap, params, "pressure_tilde_a")
        scale = 1.0
    Ss = _schur(mesh, dofmap, params, "pressure_Ps")
    e = constant_mode(dofmap, "pressure_face")
    try:
        return preconditioner_from_blocks(kind, Su.matrix, Sd.matrix, Ss.matrix, params.nu, scale, e)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular preconditioner block after deflation: {exc}") from None


def _schur(mesh, dofmap, params, selector):
    op = assemble(mesh, dofmap, params, selector)
    return build_schur(op, factor_local(op))


# --- sum-norm Gram ---------------------------------------------------------

def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def _combined_factor(S0, S1, a, b, kernel):
    M = a * S0 + b * S1
    if kernel is not None:
        P = np.eye(len(M)) - np.outer(kernel, kernel)
        M = P @ M @ P + np.outer(kernel, kernel)
    try:
        return sl.cho_factor(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        raise ValueError("a*S0 + b*S1 is not positive definite on the working space") from None


def sum_norm_gram(S0, S1, a, b, kernel=None):
    """Gram matrix of the norm ``inf_{psi} a|q - psi|_{S0}^2 + b|psi|_{S1}^2``.

    Returns ``G = b S1 - b S1 (a S0 + b S1)^{-1} b S1`` (dense).  With a
    unit ``kernel`` vector the computation is restricted to its
    orthogonal complement.
    """
    if not (a > 0 and b > 0):
        raise ValueError("weights a and b must be positive")
    S0, S1 = _dense(S0), _dense(S1)
    cf = _combined_factor(S0, S1, a, b, kernel)
    bS1 = b * S1
    if kernel is not None:
        P = np.eye(len(S0)) - np.outer(kernel, kernel)
        bS1 = P @ bS1 @ P
    G = bS1 - bS1 @ sl.cho_solve(cf, bS1)
    if kernel is not None:
        G = P @ G @ P
    return 0.5 * (G + G.T)


def optimal_splitting(S0, S1, a, b, q, kernel=None):
    """Minimiser ``psi`` of ``a|q - psi|_{S0}^2 + b|psi|_{S1}^2``.

    Solves ``(a S0 + b S1) psi = a S0 q``; returns ``(psi, value)``.
    """
    S0, S1 = _dense(S0), _dense(S1)
    cf = _combined_factor(S0, S1, a, b, kernel)
    rhs = a * S0 @ q
    if kernel is not None:
        rhs = rhs - kernel * (kernel @ rhs)
    psi = sl.cho_solve(cf, rhs)
    d = q - psi
    return psi, float(a * d @ S0 @ d + b * psi @ S1 @ psi)
