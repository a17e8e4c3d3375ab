"""Generalised eigenvalue tools for measuring stability and equivalence constants.

All constants are extreme Rayleigh quotients of a symmetric pencil
``(S, G)`` restricted to the Euclidean complement of an optional
deflation vector.  The dense path is exact up to LAPACK accuracy; the
iterative path uses ARPACK and is meant for larger problems.
"""
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .condense import build_schur, factor_local
from .fe import FormParams
from .precon import build_preconditioner, sum_norm_gram
from .system import DofMap, assemble, constant_mode

__all__ = [
    "IndefiniteGramError",
    "Spectrum",
    "SpectralRecord",
    "SpectralReport",
    "complement_basis",
    "generalized_extreme_eigs",
    "condition_number",
    "preconditioned_spectrum",
    "infsup_bh",
    "x_grams",
    "xbar_gram",
    "x_gram_stokes_order",
    "dense_schur",
    "Problem",
    "verify_theorem_A",
    "verify_face_conditions",
    "face_norm_constants",
    "verify_aux_bounds",
    "load_baselines",
    "save_baselines",
    "BASELINE_FILE",
]

BASELINE_FILE = "spectral_baselines.json"


class IndefiniteGramError(ValueError):
    pass


@dataclass
class Spectrum:
    lmin: float
    lmax: float
    amin: float
    amax: float
    eigenvalues: np.ndarray = None

    @property
    def kappa(self):
        return self.amax / self.amin

    @property
    def interval(self):
        return (self.lmin, self.lmax)


def _dense(A):
    if A is None:
        return None
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def complement_basis(e):
    """Orthonormal basis (columns) of the complement of unit vector ``e``.

    Built from a Householder reflector so no SVD is needed.
    """
    e = np.asarray(e, dtype=float)
    n = len(e)
    j = int(np.argmax(np.abs(e)))
    v = e.copy()
    v[j] += np.sign(e[j]) if e[j] != 0 else 1.0
    H = np.eye(n) - 2.0 * np.outer(v, v) / (v @ v)
    return np.delete(H, j, axis=1)


def _summarise(ev):
    a = np.abs(ev)
    return Spectrum(float(ev.min()), float(ev.max()), float(a.min()), float(a.max()), ev)


def generalized_extreme_eigs(S, G=None, deflate=None, method="dense", G_inv=None, k=1, tol=1e-10):
    """Extreme eigenvalues of ``G^{-1} S`` on the complement of ``deflate``.

    Exactly one of ``G`` (SPD Gram) and ``G_inv`` (its inverse, SPD on
    the working space) is used on the dense path; the iterative path
    needs ``G``.  Returns a Spectrum with algebraic and absolute extremes.
    """
    if method == "dense":
        return _dense_eigs(S, G, deflate, G_inv)
    if method == "iterative":
        if G is None:
            raise ValueError("the iterative path needs the Gram matrix G")
        return _iterative_eigs(S, G, deflate, tol)
    raise ValueError("method must be 'dense' or 'iterative'")


def _dense_eigs(S, G, deflate, G_inv):
    S = _dense(S)
    Q = None if deflate is None else complement_basis(deflate)
    SQ = S if Q is None else Q.T @ S @ Q
    SQ = 0.5 * (SQ + SQ.T)
    if G_inv is not None:
        Gi = _dense(G_inv)
        GQ = Gi if Q is None else Q.T @ Gi @ Q
        try:
            L = np.linalg.cholesky(0.5 * (GQ + GQ.T))
        except np.linalg.LinAlgError:
            raise IndefiniteGramError("inverse Gram is not positive definite on the working space") from None
        M = L.T @ SQ @ L
        return _summarise(np.linalg.eigvalsh(0.5 * (M + M.T)))
    G = _dense(G)
    GQ = G if Q is None else Q.T @ G @ Q
    try:
        L = np.linalg.cholesky(0.5 * (GQ + GQ.T))
    except np.linalg.LinAlgError:
        raise IndefiniteGramError("Gram matrix is not positive definite on the working space") from None
    X = sl.solve_triangular(L, SQ, lower=True)
    M = sl.solve_triangular(L, X.T, lower=True)
    return _summarise(np.linalg.eigvalsh(0.5 * (M + M.T)))


def _bordered_solver(A, e):
    A = sp.csc_matrix(A)
    n = A.shape[0]
    if e is None:
        lu = spla.splu(A)
        return lu.solve
    E = sp.csc_matrix(e.reshape(-1, 1))
    lu = spla.splu(sp.bmat([[A, E], [E.T, None]], format="csc"))
    return lambda r: lu.solve(np.append(r - e * (e @ r), 0.0))[:n]


def _iterative_eigs(S, G, e, tol):
    """ARPACK version of the restricted pencil.

    ``G`` is a sparse SPD matrix or a pair ``(matvec, solve)`` where
    ``solve`` inverts ``G`` on the complement of ``e``.  The deflated
    direction is given an eigenvalue ``shift`` that is moved out of the
    way of each requested extreme.
    """
    S = sp.csr_matrix(S)
    n = S.shape[0]
    if isinstance(G, tuple):
        G_mv, G_solve = G
    else:
        G = sp.csr_matrix(G)
        G_mv, G_solve = (lambda v: G @ v), _bordered_solver(G, e)
    if e is None:
        P = lambda v: v
        outer = lambda v: 0.0
    else:
        P = lambda v: v - e * (e @ v)
        outer = lambda v: e * (e @ v)
    v0 = P(np.random.default_rng(0).standard_normal(n))

    def LO(f):
        return spla.LinearOperator((n, n), matvec=f, dtype=float)

    M = LO(lambda v: P(G_mv(P(v))) + outer(v))
    Minv = LO(lambda v: P(G_solve(P(v))) + outer(v))

    def extreme(which, shift):
        A = LO(lambda v: P(S @ P(v)) + shift * outer(v))
        return float(spla.eigsh(A, k=1, M=M, Minv=Minv, which=which, v0=v0, tol=tol)[0][0])

    # with the spurious value at 0 the largest eigenvalue is exact unless S <= 0
    lmax = extreme("LA", 0.0)
    lmin = extreme("SA", lmax) if e is not None else extreme("SA", 0.0)
    big = 2.0 * max(abs(lmax), abs(lmin))
    S_solve = _bordered_solver(S, e)
    A = LO(lambda v: P(S @ P(v)) + big * outer(v))
    OPinv = LO(lambda v: P(S_solve(P(v))) + outer(v) / big)
    lam = spla.eigsh(A, k=1, M=M, sigma=0.0, OPinv=OPinv, which="LM", v0=v0, tol=tol)[0]
    return Spectrum(lmin, lmax, float(np.abs(lam).min()), max(abs(lmin), abs(lmax)))


# --- preconditioned reduced operator ------------------------------------

def preconditioned_spectrum(precon, S_A, method="dense"):
    """Spectrum of ``P^{-1} S_A`` on the complement of the constant face pressure."""
    e = precon.face_deflation()
    S = S_A.matrix if hasattr(S_A, "matrix") else S_A
    if method == "dense":
        return generalized_extreme_eigs(S, deflate=e, G_inv=precon.dense_inverse())
    return generalized_extreme_eigs(S, G=(precon.forward, precon.apply), deflate=e, method="iterative")


def condition_number(precon, S_A, method="dense"):
    """``kappa = |lambda|_max / |lambda|_min`` of the preconditioned reduced operator."""
    return preconditioned_spectrum(precon, S_A, method).kappa


# --- Grams on the full spaces ------------------------------------------------

@dataclass
class Problem:
    """Operators of one (mesh, parameters) point, assembled on demand."""

    mesh: object
    params: FormParams
    dofmap: DofMap = None
    _ops: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dofmap is None:
            self.dofmap = DofMap(self.mesh, self.params.k)

    def op(self, selector):
        if selector not in self._ops:
            self._ops[selector] = assemble(self.mesh, self.dofmap, self.params, selector)
        return self._ops[selector]

    def schur(self, selector):
        key = "S:" + selector
        if key not in self._ops:
            o = self.op(selector)
            self._ops[key] = build_schur(o, factor_local(o))
        return self._ops[key]


def _as_problem(mesh, params, dofmap=None):
    return mesh if isinstance(mesh, Problem) else Problem(mesh, params, dofmap)


def pressure_gram(pb, params=None):
    """Sum-norm Gram of ``(.,.)_q`` on the full pressure space (cells, faces)."""
    p = pb.params if params is None else params
    S0 = pb.op("pressure_Ps").to_dense()
    S1 = pb.op("pressure_Pd").to_dense()
    return sum_norm_gram(S0, S1, 1.0 / p.nu, 1.0 / float(np.max(p.tau)))


def x_grams(pb):
    """Dense ``(.,.)_v`` and ``(.,.)_q`` Grams on the full velocity / pressure spaces."""
    if np.ndim(pb.params.tau) != 0:
        raise ValueError("full-space norms are defined for constant tau")
    Gv = pb.op("velocity_Pu").to_dense()
    Gq = pressure_gram(pb)
    return Gv, Gq


def xbar_gram(pb):
    """Dense Gram of the face-space norm: blockdiag(S_Pu, sum-norm of (S_Ps, S_Pd))."""
    p = pb.params
    Su = pb.schur("velocity_Pu").matrix.toarray()
    Ss = pb.schur("pressure_Ps").matrix.toarray()
    Sd = pb.schur("pressure_Pd").matrix.toarray()
    Gp = sum_norm_gram(Ss, Sd, 1.0 / p.nu, 1.0 / float(p.tau))
    return sl.block_diag(Su, Gp)


def _stokes_permutation(dm):
    """Index map from X ordering (cell u, face u, cell p, face p) to Stokes ordering."""
    nc, m, a = dm.mesh.n_cells, dm.cell_block_size("up"), 2 * dm.nub
    cell = np.arange(nc * m).reshape(nc, m)
    cu, cp = cell[:, :a].ravel(), cell[:, a:].ravel()
    off = nc * m
    fu = off + np.arange(dm.n_face_u)
    fp = off + dm.n_face_u + np.arange(dm.n_face_p)
    return np.concatenate([cu, fu, cp, fp])


def x_gram_stokes_order(pb):
    """Block-diagonal X Gram permuted into the Stokes operator's ordering."""
    Gv, Gq = x_grams(pb)
    GX = sl.block_diag(Gv, Gq)
    perm = _stokes_permutation(pb.dofmap)
    out = np.empty_like(GX)
    out[np.ix_(perm, perm)] = GX
    return out


# --- inf-sup constant of b_h -----------------------------------------------

def infsup_bh(mesh, params, dofmap=None):
    """Discrete inf-sup constant ``c_3`` of ``b_h`` in the ``(v, q)`` norms.

    ``c_3^2`` is the smallest eigenvalue of ``(B G_v^{-1} B^T, G_q)`` on
    the complement of the constant pressure pair.
    """
    pb = _as_problem(mesh, params, dofmap)
    dm = pb.dofmap
    Gv, Gq = x_grams(pb)
    A = pb.op("stokes_a")
    lb_b = A.A11[:, 2 * dm.nub:, :2 * dm.nub]  # local b_h(v, q) cell rows
    nc = dm.mesh.n_cells
    a = 2 * dm.nub
    # B: pressure (cell p, face p_bar) x velocity (cell u, face u_bar); u_bar does not enter b_h
    Bc = sp.block_diag(list(lb_b)).toarray()
    Bf = A.A21.toarray()[dm.n_face_u:, :]  # face pressure rows against Stokes cell columns
    cols_u = np.arange(nc * A.cell_size).reshape(nc, -1)[:, :a].ravel()
    B = np.zeros((dm.n_cell_p + dm.n_face_p, Gv.shape[0]))
    B[:dm.n_cell_p, :dm.n_cell_u] = Bc
    B[dm.n_cell_p:, :dm.n_cell_u] = Bf[:, cols_u]
    BGB = B @ sl.cho_solve(sl.cho_factor(Gv), B.T)
    e = constant_mode(dm, "pressure_full")
    eig = generalized_extreme_eigs(BGB, G=Gq, deflate=e)
    return float(np.sqrt(max(eig.lmin, 0.0)))


# --- reports ---------------------------------------------------------------

@dataclass
class SpectralRecord:
    name: str
    value: object
    params: dict
    passed: bool = True
    bound: object = None
    note: str = ""


@dataclass
class SpectralReport:
    records: list = field(default_factory=list)

    def add(self, *recs):
        self.records.extend(recs)

    @property
    def passed(self):
        return all(r.passed for r in self.records)

    def to_json(self):
        return json.dumps([asdict(r) for r in self.records], indent=2, default=_json_default)

    def to_markdown(self):
        lines = ["| check | value | parameters | bound | status |", "|---|---|---|---|---|"]
        for r in self.records:
            lines.append(f"| {r.name} | {_fmt(r.value)} | {_fmt_params(r.params)} | {_fmt(r.bound)} | "
                         f"{'pass' if r.passed else 'FAIL'} |")
        return "\n".join(lines) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, (float, np.floating)):
        return f"{v:.6g}"
    return str(v)


def _fmt_params(p):
    return ", ".join(f"{k}={_fmt(v)}" for k, v in p.items())


def _pinfo(mesh, params):
    return {"cells": int(mesh.n_cells), "nu": params.nu, "tau": float(np.max(params.tau)),
            "eta": params.eta, "k": params.k}


# --- Schur sandwich ---------------------------------------------------------

def _two_block(M, n1=None):
    if hasattr(M, "full_matrix"):
        return M.to_dense(), M.n_cell
    return _dense(M), int(n1)


def dense_schur(M, n1):
    A11, A12, A22 = M[:n1, :n1], M[:n1, n1:], M[n1:, n1:]
    S = A22 - A12.T @ np.linalg.solve(A11, A12)
    return 0.5 * (S + S.T)


def verify_theorem_A(A, P, n1=None, kernel=None, slack=1e-8, name="schur_sandwich"):
    """Check that the spectrum of ``(S_A, S_P)`` lies inside that of ``(A, P)``.

    ``A`` and ``P`` are BlockOperators or dense two-block matrices split
    after ``n1`` rows.  ``kernel`` is an optional unit vector annihilated
    by both operators; its face part is used for the Schur pencils.
    """
    Ad, n1 = _two_block(A, n1)
    Pd, m1 = _two_block(P, n1)
    if Ad.shape != Pd.shape or n1 != m1:
        raise ValueError("A and P have different layouts")
    ef = None
    if kernel is not None:
        ef = kernel[n1:] / np.linalg.norm(kernel[n1:])
    full = generalized_extreme_eigs(Ad, G=Pd, deflate=kernel)
    red = generalized_extreme_eigs(dense_schur(Ad, n1), G=dense_schur(Pd, n1), deflate=ef)
    scale = max(abs(full.lmin), abs(full.lmax))
    tol = slack * scale
    ok = (red.lmin >= full.lmin - tol) and (red.lmax <= full.lmax + tol)
    return SpectralRecord(name, (red.lmin, red.lmax), {"n": int(Ad.shape[0]), "n1": int(n1)}, bool(ok),
                          (full.lmin, full.lmax))


# --- face-norm conditions --------------------------------------------------

def _face_extension(pb):
    """Dense map ``x_bar -> (-A11^{-1} A21^T x_bar, x_bar)`` in X ordering."""
    A = pb.op("stokes_a")
    F = factor_local(A)
    n_face = A.n_face
    C = A.A21.toarray().T  # (n_cell, n_face)
    blocks = F.inverse
    nc, m = A.n_cells, A.cell_size
    Xc = -np.einsum("cij,cjf->cif", blocks, C.reshape(nc, m, n_face)).reshape(nc * m, n_face)
    E = np.vstack([Xc, np.eye(n_face)])
    perm = _stokes_permutation(pb.dofmap)
    return E[perm]


def face_norm_constants(mesh, params, dofmap=None):
    """Return (c_u, lambda_min) of the face extension measured in (X, X_bar)."""
    pb = _as_problem(mesh, params, dofmap)
    Gv, Gq = x_grams(pb)
    GX = sl.block_diag(Gv, Gq)
    E = _face_extension(pb)
    Gbar = xbar_gram(pb)
    e = constant_mode(pb.dofmap, "stokes_face")
    eig = generalized_extreme_eigs(E.T @ GX @ E, G=Gbar, deflate=e)
    return float(np.sqrt(eig.lmax)), float(eig.lmin)


def c_l_violation(mesh, params, n_samples=500, seed=0, dofmap=None):
    """Largest relative violation of ``|x|_X^2 >= |x_bar|_{X_bar}^2`` on random vectors."""
    pb = _as_problem(mesh, params, dofmap)
    dm = pb.dofmap
    Gv, Gq = x_grams(pb)
    Gbar = xbar_gram(pb)
    rng = np.random.default_rng(seed)
    nv, nq = Gv.shape[0], Gq.shape[0]
    X = rng.standard_normal((nv + nq, n_samples))
    xv, xq = X[:nv], X[nv:]
    full = np.einsum("ij,ij->j", xv, Gv @ xv) + np.einsum("ij,ij->j", xq, Gq @ xq)
    xb = np.vstack([xv[dm.n_cell_u:], xq[dm.n_cell_p:]])
    bar = np.einsum("ij,ij->j", xb, Gbar @ xb)
    return float(np.max((bar - full) / full))


def verify_face_conditions(mesh, params, n_samples=500, seed=0, tol=1e-10, dofmap=None):
    """Records for the lower face-norm condition and the measured ``c_u``."""
    pb = _as_problem(mesh, params, dofmap)
    info = _pinfo(pb.mesh, pb.params)
    viol = c_l_violation(pb, None, n_samples, seed)
    cu, lmin = face_norm_constants(pb, None)
    return [
        SpectralRecord("c_l_violation", viol, info, viol <= tol, tol),
        SpectralRecord("c_u", cu, info, bool(np.isfinite(cu) and cu > 0)),
        SpectralRecord("c_u_lower", float(np.sqrt(max(lmin, 0.0))), info, lmin >= 1.0 - 1e-8, 1.0,
                       "sqrt of the smallest eigenvalue; at least 1 by the lower condition"),
    ]


# --- auxiliary bounds ------------------------------------------------------

def _trace_coefficients(pb):
    """Per cell and local face: face-basis coefficients of cell traces (nc, 3, nF, nub)."""
    ci = pb.dofmap.integrals
    return ci.trace_u.transpose(0, 1, 3, 2) / ci.face_len[:, :, None, None]


def dg_norm_gram(pb, length="face"):
    """Gram of ``|grad v|^2 + sum_F h_F^{-1} |[v]|_F^2`` on cell velocities."""
    dm, mesh = pb.dofmap, pb.mesh
    ci = dm.integrals
    nub, nF, nc = dm.nub, dm.nF, mesh.n_cells
    T = _trace_coefficients(pb)
    n = nc * 2 * nub
    G = np.zeros((n, n))
    K = ci.stiff_u
    for c in range(nc):
        for comp in range(2):
            s = c * 2 * nub + comp * nub
            G[s:s + nub, s:s + nub] += K[c]
    for f in range(mesh.n_faces):
        sides = [(mesh.face_cells[f, s], mesh.face_local[f, s], 1.0 if s == 0 else -1.0)
                 for s in range(2) if mesh.face_cells[f, s] >= 0]
        for comp in range(2):
            J = np.zeros((nF, n))
            for c, l, sgn in sides:
                s = c * 2 * nub + comp * nub
                J[:, s:s + nub] += sgn * T[c, l]
            G += J.T @ J  # h_F^{-1} |F| = 1 for coefficients orthonormal on [0, 1]
    return G


def average_operator(pb):
    """Dense map from cell velocities to face velocities ``{v}`` (zero on the boundary)."""
    dm, mesh = pb.dofmap, pb.mesh
    nub, nF = dm.nub, dm.nF
    T = _trace_coefficients(pb)
    Av = np.zeros((dm.n_face_u, dm.n_cell_u))
    for f in mesh.interior_faces:
        r = dm.vel_face_index[f] * 2 * nF
        for s in range(2):
            c, l = mesh.face_cells[f, s], mesh.face_local[f, s]
            for comp in range(2):
                Av[r + comp * nF:r + (comp + 1) * nF, c * 2 * nub + comp * nub:c * 2 * nub + (comp + 1) * nub] \
                    += 0.5 * T[c, l]
    return Av


def facet_norm_gram(pb):
    """Gram of ``sum_K h_K^{-1} |v_bar - m_K(v_bar)|^2_{dK}`` on face velocities."""
    dm, mesh = pb.dofmap, pb.mesh
    ci = dm.integrals
    h = pb.params.cell_size(ci)
    nF = dm.nF
    loc = np.zeros((mesh.n_cells, 6 * nF, 6 * nF))
    for comp in range(2):
        idx = np.array([f * 2 * nF + comp * nF + j for f in range(3) for j in range(nF)])
        D = np.repeat(ci.face_len, nF, axis=1)  # (nc, 3 nF)
        d = np.zeros_like(D)
        d[:, ::nF] = ci.face_len
        per = ci.face_len.sum(axis=1)
        blk = np.einsum("ci,ij->cij", D, np.eye(3 * nF)) - np.einsum("ci,cj->cij", d, d) / per[:, None, None]
        loc[:, idx[:, None], idx[None, :]] = blk / h[:, None, None]
    from .system import scatter_face_blocks
    return scatter_face_blocks(loc, dm.face_u_map, dm.n_face_u).toarray()


def verify_aux_bounds(mesh, params, dofmap=None):
    """Measured coercivity, boundedness, DG, facet and pressure-diffusion constants."""
    pb = _as_problem(mesh, params, dofmap)
    dm, p = pb.dofmap, pb.params
    info = _pinfo(pb.mesh, p)
    recs = []
    Gv = pb.op("velocity_Pu").to_dense()
    Td = pb.op("velocity_tilde_d").to_dense()
    s = generalized_extreme_eigs(Td, G=Gv)
    recs.append(SpectralRecord("c_c", s.lmin, info, s.lmin > 0))
    recs.append(SpectralRecord("c_d", s.lmax, info, np.isfinite(s.lmax)))

    V1 = pb.op("velocity_v1").to_dense()
    nu_c = dm.n_cell_u
    E = np.vstack([np.eye(nu_c), average_operator(pb)])
    s = generalized_extreme_eigs(E.T @ V1 @ E, G=dg_norm_gram(pb))
    recs.append(SpectralRecord("c_dg", (float(np.sqrt(max(s.lmin, 0))), float(np.sqrt(s.lmax))), info, s.lmin > 0))

    Fg = np.zeros_like(V1)
    Fg[nu_c:, nu_c:] = facet_norm_gram(pb)
    s = generalized_extreme_eigs(Fg, G=V1)
    recs.append(SpectralRecord("c_bar", float(np.sqrt(s.lmax)), info, np.isfinite(s.lmax)))

    e = constant_mode(dm, "pressure_full")
    if np.ndim(p.tau) == 0 and p.tau > 0:
        Ta = pb.op("pressure_tilde_a").to_dense()
        Q1 = pb.op("pressure_Pd").to_dense() / float(p.tau)
        s = generalized_extreme_eigs(Ta, G=Q1, deflate=e)
        recs.append(SpectralRecord("c_tilde", (s.lmin, s.lmax), info, s.lmin > 0))

        GX = x_gram_stokes_order(pb)
        A = pb.op("stokes_a").to_dense()
        ef = constant_mode(dm, "stokes_full")
        s = generalized_extreme_eigs(A, G=GX, deflate=ef)
        recs.append(SpectralRecord("c_b", s.amax, info, np.isfinite(s.amax)))
        recs.append(SpectralRecord("c_s", s.amin, info, s.amin > 0))
    return recs


# --- baselines -------------------------------------------------------------

def baseline_path():
    return Path(str(resources.files("hdgprec").joinpath(BASELINE_FILE)))


def load_baselines(path=None):
    """Frozen regression values; raises FileNotFoundError when absent."""
    path = baseline_path() if path is None else Path(path)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_baselines(data, path=None):
    path = baseline_path() if path is None else Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path
