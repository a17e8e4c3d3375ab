"""Static condensation of cell unknowns.

Every cell block of ``A11`` is factored independently.  SPD blocks use a
Cholesky factorisation.  The Stokes cell block ``[[Auu, Bp^T], [Bp, 0]]``
is symmetric indefinite with an SPD leading block, so it is factored by
the block LDL^T decomposition ``Auu = L L^T``, ``Bp Auu^{-1} Bp^T = R R^T``.
Factors are turned into explicit cell inverses, after which local solves,
the Schur complement and back substitution are batched matrix products.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .system import BlockVector, scatter_face_blocks

__all__ = [
    "SingularBlockError",
    "LocalFactors",
    "ReducedOperator",
    "factor_local",
    "local_solve",
    "build_schur",
    "reduce_rhs",
    "back_substitute",
    "SCHUR_LABELS",
]

SCHUR_LABELS = {
    "stokes_a": "S_A",
    "velocity_Pu": "S_Pu",
    "velocity_tilde_d": "S_hat_Pu",
    "velocity_v1": "S_v1",
    "pressure_Ps": "S_Ps",
    "pressure_Ps_star": "S_Ps_star",
    "pressure_Pd": "S_Pd",
    "pressure_tilde_a": "S_tilde_a",
}


class SingularBlockError(np.linalg.LinAlgError):
    """A cell block could not be factored."""

    def __init__(self, cell, label, params, detail=""):
        self.cell = cell
        msg = f"cell block {cell} of {label} is singular (nu={params.nu}, tau={_fmt_tau(params.tau)})"
        super().__init__(msg + (f": {detail}" if detail else ""))


def _fmt_tau(tau):
    t = np.asarray(tau)
    return f"{float(t):g}" if t.ndim == 0 else f"[{t.min():g}, {t.max():g}]"


def _tr(x):
    return x.transpose(0, 2, 1)


def _cholesky_batched(A, op, offset=0):
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        L = None
    if L is None or not np.all(np.isfinite(L)):
        for c in range(A.shape[0]):
            try:
                Lc = np.linalg.cholesky(A[c])
            except np.linalg.LinAlgError:
                raise SingularBlockError(c, op.label, op.params, "not positive definite") from None
            if not np.all(np.isfinite(Lc)):
                raise SingularBlockError(c, op.label, op.params, "non-finite factor")
        raise SingularBlockError(-1, op.label, op.params)
    # relative pivot test against the block scale
    d = np.abs(np.diagonal(L, axis1=1, axis2=2))
    scale = np.sqrt(np.abs(np.diagonal(A, axis1=1, axis2=2)).max(axis=1))
    bad = d.min(axis=1) <= 1e-13 * np.maximum(scale, np.finfo(float).tiny)
    if np.any(bad):
        raise SingularBlockError(int(np.flatnonzero(bad)[0]), op.label, op.params, "tiny pivot")
    return L


def _tri_inverse(L):
    n = L.shape[1]
    return np.linalg.solve(L, np.broadcast_to(np.eye(n), L.shape))


@dataclass
class LocalFactors:
    """Per-cell factors and the resulting explicit inverses of ``A11``.

    ``kind`` is ``"cholesky"`` (``L``) or ``"saddle"`` (``L`` for the
    velocity block and ``R`` for the pressure Schur block, with the
    off-diagonal ``B``).  ``inverse`` is (nc, m, m).
    """

    kind: str
    L: np.ndarray
    inverse: np.ndarray
    R: np.ndarray = None
    B: np.ndarray = None

    def reconstruct(self):
        """Cell blocks rebuilt from the factors (for verification)."""
        if self.kind == "cholesky":
            return self.L @ _tr(self.L)
        Auu = self.L @ _tr(self.L)
        nc, a, _ = Auu.shape
        b = self.B.shape[1]
        out = np.zeros((nc, a + b, a + b))
        out[:, :a, :a] = Auu
        out[:, a:, :a] = self.B
        out[:, :a, a:] = _tr(self.B)
        return out

    def solve(self, rhs):
        """Apply ``A11^{-1}`` cell by cell; ``rhs`` is (nc, m) or (nc, m, r)."""
        if rhs.ndim == 2:
            return np.einsum("cij,cj->ci", self.inverse, rhs)
        return self.inverse @ rhs


def factor_local(op):
    """Factor every cell block of ``op.A11``.

    Raises SingularBlockError naming the offending cell and parameters.
    """
    A = op.A11
    if not np.all(np.isfinite(A)):
        c = int(np.flatnonzero(~np.isfinite(A).all(axis=(1, 2)))[0])
        raise SingularBlockError(c, op.label, op.params, "non-finite entries")
    a = op.n_velocity_cell
    if a == 0:
        L = _cholesky_batched(A, op)
        Li = _tri_inverse(L)
        return LocalFactors("cholesky", L, _tr(Li) @ Li)

    Auu, B = A[:, :a, :a], A[:, a:, :a]
    L = _cholesky_batched(Auu, op)
    Li = _tri_inverse(L)
    Auu_inv = _tr(Li) @ Li
    W = B @ Auu_inv  # (nc, b, a)
    S = W @ _tr(B)
    S = 0.5 * (S + _tr(S))
    R = _cholesky_batched(S, op)
    Ri = _tri_inverse(R)
    S_inv = _tr(Ri) @ Ri
    # block inverse of [[Auu, B^T], [B, 0]]
    nc, m = A.shape[0], A.shape[1]
    inv = np.empty((nc, m, m))
    X = _tr(W) @ S_inv  # Auu^{-1} B^T S^{-1}
    inv[:, :a, :a] = Auu_inv - X @ W
    inv[:, :a, a:] = X
    inv[:, a:, :a] = _tr(X)
    inv[:, a:, a:] = -S_inv
    return LocalFactors("saddle", L, 0.5 * (inv + _tr(inv)), R, B)


def local_solve(factors, op, face_values, source=None):
    """Cell solution from face data: ``A11^{-1}(source - A21_loc^T face)``.

    ``face_values`` holds per-cell local face coefficients (nc, n_local);
    ``source`` the per-cell load vectors (nc, m) or None.
    """
    rhs = -np.einsum("clm,cl->cm", op.A21_loc, face_values)
    if source is not None:
        rhs = rhs + source
    return factors.solve(rhs)


@dataclass
class ReducedOperator:
    """Condensed face operator ``S = A22 - A21 A11^{-1} A21^T``."""

    label: str
    matrix: sp.csr_matrix
    kernel: np.ndarray = None
    local: np.ndarray = None  # per-cell contributions (nc, nl, nl)

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x


def build_schur(op, factors=None):
    """Assemble the Schur complement from symmetrised per-cell contributions."""
    factors = factor_local(op) if factors is None else factors
    C = op.A21_loc
    loc = op.A22_loc - C @ factors.inverse @ _tr(C)
    loc = 0.5 * (loc + _tr(loc))
    S = scatter_face_blocks(loc, op.face_map, op.n_face)
    return ReducedOperator(SCHUR_LABELS.get(op.label, "S_" + op.label), S, op.face_kernel, loc)


def _cell_view(op, vec):
    return np.asarray(vec, float).reshape(op.n_cells, op.cell_size)


def reduce_rhs(op, factors, rhs):
    """Condensed right-hand side ``f_face - A21 A11^{-1} f_cell``."""
    if not isinstance(rhs, BlockVector):
        raise TypeError("rhs must be a BlockVector")
    y = factors.solve(_cell_view(op, rhs.cell))
    loc = np.einsum("clm,cm->cl", op.A21_loc, y)
    out = np.array(rhs.face, dtype=float, copy=True)
    keep = op.face_map >= 0
    np.add.at(out, op.face_map[keep], -loc[keep])
    return out


def gather_faces(op, x_face):
    """Per-cell local face coefficients; removed unknowns read as zero."""
    fm = op.face_map
    return np.where(fm >= 0, np.asarray(x_face)[np.maximum(fm, 0)], 0.0)


def back_substitute(op, factors, rhs, x_face):
    """Recover cell unknowns ``A11^{-1}(f_cell - A21^T x_face)``."""
    src = _cell_view(op, rhs.cell)
    return local_solve(factors, op, gather_faces(op, x_face), src).ravel()
