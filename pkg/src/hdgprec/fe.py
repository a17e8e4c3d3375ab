"""Reference elements, quadrature and per-cell matrices of the HDG forms.

The scalar cell basis is an orthonormal modal basis on the reference
triangle ``(0,0), (1,0), (0,1)``; face bases are orthonormal Legendre
polynomials on ``[0, 1]`` parametrised along the global (sorted) face
direction, so face blocks computed cell by cell already live in the
global face basis.  Vector fields are two stacked scalar copies: local
cell index ``c * nb + i`` and local face index ``f * 2 * nF + c * nF + j``.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy import special

from .mesh import LOCAL_FACE_VERTS

__all__ = [
    "Quadrature",
    "BasisTable",
    "CellIntegrals",
    "LocalBlocks",
    "FormParams",
    "DegenerateCellError",
    "quadrature_rule",
    "eval_basis",
    "cell_integrals",
    "build_local_blocks",
    "dim_triangle",
    "REF_FACE_VERTS",
]

MAX_QUAD_DEGREE = 20

REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_FACE_VERTS = REF_VERTS[LOCAL_FACE_VERTS]  # (3, 2, 2)


class DegenerateCellError(ValueError):
    pass


def dim_triangle(k):
    return (k + 1) * (k + 2) // 2


@dataclass(frozen=True)
class Quadrature:
    entity: str
    points: np.ndarray  # (nq, 2) on the triangle, (nq,) on the segment
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def quadrature_rule(degree, entity="triangle"):
    """Gauss rule exact to ``degree`` on the reference triangle or [0, 1].

    The triangle rule is the collapsed (Duffy) product of Gauss-Legendre
    and Gauss-Jacobi(1, 0) rules, so all weights are positive.
    """
    degree = int(degree)
    if not 1 <= degree <= MAX_QUAD_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree}; need 1..{MAX_QUAD_DEGREE}")
    n = degree // 2 + 1
    t, w = special.roots_legendre(n)
    s, ws = 0.5 * (t + 1.0), 0.5 * w
    if entity == "segment":
        return Quadrature("segment", s, ws, degree)
    if entity != "triangle":
        raise ValueError(f"unknown entity {entity!r}")
    tj, wj = special.roots_jacobi(n, 1.0, 0.0)
    v, wv = 0.5 * (tj + 1.0), 0.25 * wj
    U, V = np.meshgrid(s, v, indexing="ij")
    W = np.outer(ws, wv)
    pts = np.column_stack([(U * (1.0 - V)).ravel(), V.ravel()])
    return Quadrature("triangle", pts, W.ravel(), degree)


@dataclass(frozen=True)
class BasisTable:
    degree: int
    entity: str
    values: np.ndarray  # (nq, nb)
    grads: np.ndarray  # (nq, nb, 2) triangle, (nq, nb) segment

    @property
    def dim(self):
        return self.values.shape[1]


def _monomial_exponents(k):
    return [(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)]


def _monomials(k, pts):
    x = pts[:, 0] - 1.0 / 3.0
    y = pts[:, 1] - 1.0 / 3.0
    exps = _monomial_exponents(k)
    vals = np.stack([x**a * y**b for a, b in exps], axis=1)
    dx = np.stack([a * x ** max(a - 1, 0) * y**b for a, b in exps], axis=1)
    dy = np.stack([b * x**a * y ** max(b - 1, 0) for a, b in exps], axis=1)
    return vals, np.stack([dx, dy], axis=-1)


@lru_cache(maxsize=None)
def _orthonormal_coefficients(k):
    q = quadrature_rule(max(2 * k, 1), "triangle")
    m, _ = _monomials(k, q.points)
    C = np.eye(m.shape[1])
    # Cholesky orthonormalisation, repeated once to clean up rounding
    for _ in range(2):
        phi = m @ C.T
        G = phi.T @ (q.weights[:, None] * phi)
        L = np.linalg.cholesky(G)
        C = np.linalg.solve(L, C)
    return C


def eval_basis(k, entity, quad_or_points):
    """Tabulate the orthonormal P_k basis (values and reference gradients)."""
    pts = quad_or_points.points if isinstance(quad_or_points, Quadrature) else np.asarray(quad_or_points, float)
    if entity == "triangle":
        pts = np.atleast_2d(pts)
        m, dm = _monomials(k, pts)
        C = _orthonormal_coefficients(k)
        return BasisTable(k, entity, m @ C.T, np.einsum("qmd,nm->qnd", dm, C))
    if entity == "segment":
        s = np.atleast_1d(pts)
        t = 2.0 * s - 1.0
        vals = np.empty((len(s), k + 1))
        ders = np.empty((len(s), k + 1))
        for n in range(k + 1):
            c = np.zeros(n + 1)
            c[n] = np.sqrt(2 * n + 1)
            vals[:, n] = legendre.legval(t, c)
            ders[:, n] = 2.0 * legendre.legval(t, legendre.legder(c))
        return BasisTable(k, entity, vals, ders)
    raise ValueError(f"unknown entity {entity!r}")


@dataclass
class CellIntegrals:
    """Parameter-free reference integrals for every cell (leading axis nc).

    ``u`` quantities use P_k (cell velocity), ``p`` quantities P_{k-1}
    (cell pressure); face quantities use P_k on each face.  For a local
    face ``f``: ``trace_*[c, f, i, j] = int_F phi_i psi_j``,
    ``dn_*[c, f, i, j] = int_F (grad phi_i . n) psi_j`` and
    ``cc_*[c, f, i, j] = int_F phi_i phi_j``,
    ``dncc_*[c, f, i, j] = int_F (grad phi_j . n) phi_i``.
    """

    k: int
    area: np.ndarray
    h: np.ndarray
    face_len: np.ndarray  # (nc, 3)
    normals: np.ndarray  # (nc, 3, 2)
    mass_u: np.ndarray
    stiff_u: np.ndarray
    mass_p: np.ndarray
    stiff_p: np.ndarray
    div: np.ndarray  # (nc, np, 2, nu): int chi_i d_c phi_j
    cc_u: np.ndarray
    dncc_u: np.ndarray
    trace_u: np.ndarray
    dn_u: np.ndarray
    cc_p: np.ndarray
    dncc_p: np.ndarray
    trace_p: np.ndarray
    dn_p: np.ndarray
    flux: np.ndarray  # (nc, 3, nF, 2, nu): int_F psi_i phi_j n_c
    press_trace_u: np.ndarray  # (nc, 3, np, nu): int_F chi_i phi_j

    @property
    def n_cells(self):
        return len(self.area)


def cell_integrals(mesh, k, quad_degree=None):
    """Compute all geometric local integrals, vectorised over cells."""
    if k < 1:
        raise ValueError("polynomial degree k must be >= 1")
    qdeg = 2 * k + 2 if quad_degree is None else quad_degree
    x = mesh.cell_coords
    J = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=-1)  # columns are edges
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    area = 0.5 * det
    h = mesh.cell_diameters
    if np.any(area < 1e-14 * h**2):
        bad = int(np.flatnonzero(area < 1e-14 * h**2)[0])
        raise DegenerateCellError(f"cell {bad} is degenerate (area {area[bad]:.3e})")
    Jinv_T = np.linalg.inv(J).transpose(0, 2, 1)
    face_len = mesh.face_lengths[mesh.cell_faces]
    normals = mesh.outward_normals()
    flip = mesh.cell_face_flip

    qt = quadrature_rule(qdeg, "triangle")
    bu = eval_basis(k, "triangle", qt)
    bp = eval_basis(k - 1, "triangle", qt)
    gu = np.einsum("cde,qne->cqnd", Jinv_T, bu.grads)
    gp = np.einsum("cde,qne->cqnd", Jinv_T, bp.grads)
    wq = qt.weights[None, :] * det[:, None]  # (nc, nq)
    mass_u = np.einsum("cq,qi,qj->cij", wq, bu.values, bu.values)
    stiff_u = np.einsum("cq,cqid,cqjd->cij", wq, gu, gu)
    mass_p = np.einsum("cq,qi,qj->cij", wq, bp.values, bp.values)
    stiff_p = np.einsum("cq,cqid,cqjd->cij", wq, gp, gp)
    div = np.einsum("cq,qi,cqjd->cidj", wq, bp.values, gu)

    qs = quadrature_rule(qdeg, "segment")
    psi = eval_basis(k, "segment", qs).values
    psi_rev = eval_basis(k, "segment", 1.0 - qs.points).values
    nu, npb, nF = bu.dim, bp.dim, k + 1
    nc = mesh.n_cells
    cc_u = np.empty((nc, 3, nu, nu))
    dncc_u = np.empty((nc, 3, nu, nu))
    trace_u = np.empty((nc, 3, nu, nF))
    dn_u = np.empty((nc, 3, nu, nF))
    cc_p = np.empty((nc, 3, npb, npb))
    dncc_p = np.empty((nc, 3, npb, npb))
    trace_p = np.empty((nc, 3, npb, nF))
    dn_p = np.empty((nc, 3, npb, nF))
    flux = np.empty((nc, 3, nF, 2, nu))
    press_trace_u = np.empty((nc, 3, npb, nu))
    for f in range(3):
        a, b = REF_FACE_VERTS[f]
        pts = a[None, :] + qs.points[:, None] * (b - a)[None, :]
        tu = eval_basis(k, "triangle", pts)
        tp = eval_basis(k - 1, "triangle", pts)
        n = normals[:, f]  # (nc, 2)
        ws = qs.weights[None, :] * face_len[:, f][:, None]  # (nc, nq)
        ps = np.where(flip[:, f][:, None, None], psi_rev[None], psi[None])  # (nc, nq, nF)
        dnu = np.einsum("cde,qne,cd->cqn", Jinv_T, tu.grads, n)
        dnp = np.einsum("cde,qne,cd->cqn", Jinv_T, tp.grads, n)
        cc_u[:, f] = np.einsum("cq,qi,qj->cij", ws, tu.values, tu.values)
        dncc_u[:, f] = np.einsum("cq,qi,cqj->cij", ws, tu.values, dnu)
        trace_u[:, f] = np.einsum("cq,qi,cqj->cij", ws, tu.values, ps)
        dn_u[:, f] = np.einsum("cq,cqi,cqj->cij", ws, dnu, ps)
        cc_p[:, f] = np.einsum("cq,qi,qj->cij", ws, tp.values, tp.values)
        dncc_p[:, f] = np.einsum("cq,qi,cqj->cij", ws, tp.values, dnp)
        trace_p[:, f] = np.einsum("cq,qi,cqj->cij", ws, tp.values, ps)
        dn_p[:, f] = np.einsum("cq,cqi,cqj->cij", ws, dnp, ps)
        flux[:, f] = np.einsum("cq,cqi,qj,cd->cidj", ws, ps, tu.values, n)
        press_trace_u[:, f] = np.einsum("cq,qi,qj->cij", ws, tp.values, tu.values)
    return CellIntegrals(k, area, h, face_len, normals, mass_u, stiff_u, mass_p, stiff_p, div,
                         cc_u, dncc_u, trace_u, dn_u, cc_p, dncc_p, trace_p, dn_p, flux,
                         press_trace_u)


@dataclass(frozen=True)
class FormParams:
    """Physical and discretisation parameters.

    ``tau`` is a scalar or one value per cell.  ``length_scale`` picks
    the cell size ``h_K`` entering the penalty and facet weights:
    ``"jacobian"`` uses ``sqrt(2 |K|)`` (the affine map's scaling, equal
    to the leg length of a right isosceles cell) and ``"diameter"`` the
    longest edge.
    """

    nu: float = 1.0
    tau: object = 1.0
    eta: float = 16.0
    k: int = 2
    length_scale: str = "jacobian"

    def __post_init__(self):
        if not self.eta > 1.0:
            raise ValueError(f"interior penalty eta must exceed 1, got {self.eta}")
        if self.nu < 0 or np.any(np.asarray(self.tau) < 0):
            raise ValueError("nu and tau must be non-negative")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.length_scale not in ("jacobian", "diameter"):
            raise ValueError(f"unknown length scale {self.length_scale!r}")

    def cell_size(self, ci):
        """Per-cell ``h_K`` for the chosen length scale."""
        return ci.h if self.length_scale == "diameter" else np.sqrt(2.0 * ci.area)

    def tau_cells(self, n_cells):
        t = np.asarray(self.tau, dtype=float)
        return np.full(n_cells, float(t)) if t.ndim == 0 else t.reshape(n_cells).astype(float)

    @property
    def tau_is_constant(self):
        return np.ndim(self.tau) == 0


# --- vector-field helpers --------------------------------------------------

def _vec_cc(A):
    """(nc, n, n) scalar block -> (nc, 2n, 2n) block diagonal."""
    nc, n, m = A.shape
    out = np.zeros((nc, 2 * n, 2 * m))
    out[:, :n, :m] = A
    out[:, n:, m:] = A
    return out


def _scalar_cf(B):
    """(nc, 3, n, nF) -> (nc, n, 3 * nF)."""
    nc, _, n, nF = B.shape
    return B.transpose(0, 2, 1, 3).reshape(nc, n, 3 * nF)


def _vec_cf(B):
    """(nc, 3, n, nF) -> (nc, 2n, 3 * 2 * nF) with face-major local ordering."""
    nc, _, n, nF = B.shape
    out = np.zeros((nc, 2, n, 3, 2, nF))
    for c in range(2):
        out[:, c, :, :, c, :] = B.transpose(0, 2, 1, 3)
    return out.reshape(nc, 2 * n, 6 * nF)


def _face_diag(weights, nF, ncomp):
    """(nc, 3) per-face weights -> (nc, 3*ncomp*nF, 3*ncomp*nF) diagonal."""
    d = np.repeat(weights, ncomp * nF, axis=1)
    nc, m = d.shape
    out = np.zeros((nc, m, m))
    idx = np.arange(m)
    out[:, idx, idx] = d
    return out


@dataclass
class LocalBlocks:
    """Per-cell dense blocks, batched over cells.

    Vector velocity blocks: ``*_cc`` (2nu x 2nu), ``*_cf`` (2nu x 6nF),
    ``*_ff`` (6nF x 6nF).  Pressure blocks: ``*_cc`` (np x np), ``*_cf``
    (np x 3nF), ``*_ff`` (3nF x 3nF).  ``b_cell`` is (np x 2nu) and
    ``b_face`` (3nF x 2nu).
    """

    mass_v: np.ndarray
    dh_cc: np.ndarray
    dh_cf: np.ndarray
    dh_ff: np.ndarray
    b_cell: np.ndarray
    b_face: np.ndarray
    v1_cc: np.ndarray
    v1_cf: np.ndarray
    v1_ff: np.ndarray
    q0_cc: np.ndarray
    q0_ff: np.ndarray
    q0s_cc: np.ndarray
    q0s_cf: np.ndarray
    q0s_ff: np.ndarray
    q1_cc: np.ndarray
    q1_cf: np.ndarray
    q1_ff: np.ndarray
    ta_cc: np.ndarray
    ta_cf: np.ndarray
    ta_ff: np.ndarray
    td_cc: np.ndarray
    td_cf: np.ndarray
    td_ff: np.ndarray


def _dh_scalar(ci, which, pen):
    """Scalar SIP-type blocks without the viscosity factor.

    ``which`` selects velocity (u) or pressure (p) integrals; ``pen`` is
    the per-cell penalty weight eta / h_K.
    """
    K = getattr(ci, f"stiff_{which}")
    cc = getattr(ci, f"cc_{which}")
    dncc = getattr(ci, f"dncc_{which}")
    tr = getattr(ci, f"trace_{which}")
    dn = getattr(ci, f"dn_{which}")
    pw = pen[:, None, None]
    G = dncc.sum(axis=1)
    cell = K + pw * cc.sum(axis=1) - G - G.transpose(0, 2, 1)
    cf = -pen[:, None, None, None] * tr + dn
    ff = pen[:, None] * ci.face_len
    return cell, cf, ff


def build_local_blocks(ci, params):
    """Assemble every local block for parameters ``(nu, tau_K, eta, k)``."""
    nu, eta = params.nu, params.eta
    tau = params.tau_cells(ci.n_cells)
    nF = ci.k + 1
    h = params.cell_size(ci)
    pen = eta / h
    tw = tau[:, None, None]

    mass_v = _vec_cc(ci.mass_u)
    sc, scf, sff = _dh_scalar(ci, "u", pen)
    dh_cc = nu * _vec_cc(sc)
    dh_cf = nu * _vec_cf(scf)
    dh_ff = nu * _face_diag(sff, nF, 2)

    npb = ci.mass_p.shape[1]
    nub = ci.mass_u.shape[1]
    b_cell = -ci.div.reshape(ci.n_cells, npb, 2 * nub)
    b_face = ci.flux.reshape(ci.n_cells, 3 * nF, 2 * nub)

    # (.,.)_{v,1}
    v1c = ci.stiff_u + pen[:, None, None] * ci.cc_u.sum(axis=1)
    v1_cc = _vec_cc(v1c)
    v1_cf = _vec_cf(-pen[:, None, None, None] * ci.trace_u)
    v1_ff = _face_diag(pen[:, None] * ci.face_len, nF, 2)

    # (.,.)_{q,0} and (.,.)_{q,0*}
    hw = h / eta
    q0_cc = ci.mass_p.copy()
    q0_ff = _face_diag(hw[:, None] * ci.face_len, nF, 1)
    q0s_cc = ci.mass_p + hw[:, None, None] * ci.cc_p.sum(axis=1)
    q0s_cf = _scalar_cf(-hw[:, None, None, None] * ci.trace_p)
    q0s_ff = q0_ff.copy()

    # (.,.)_{q,1}
    q1_cc = ci.stiff_p + pen[:, None, None] * ci.cc_p.sum(axis=1)
    q1_cf = _scalar_cf(-pen[:, None, None, None] * ci.trace_p)
    q1_ff = _face_diag(pen[:, None] * ci.face_len, nF, 1)

    # tilde a_h, weighted by 1/tau per cell (undefined, marked nan, where tau = 0)
    itau = np.where(tau > 0, 1.0 / np.where(tau > 0, tau, 1.0), np.nan)
    pc, pcf, pff = _dh_scalar(ci, "p", pen)
    ta_cc = itau[:, None, None] * pc
    ta_cf = itau[:, None, None] * _scalar_cf(pcf)
    ta_ff = itau[:, None, None] * _face_diag(pff, nF, 1)

    td_cc = dh_cc + tw * mass_v
    td_cf = dh_cf
    td_ff = dh_ff

    return LocalBlocks(mass_v, dh_cc, dh_cf, dh_ff, b_cell, b_face, v1_cc, v1_cf, v1_ff,
                       q0_cc, q0_ff, q0s_cc, q0s_cf, q0s_ff, q1_cc, q1_cf, q1_ff,
                       ta_cc, ta_cf, ta_ff, td_cc, td_cf, td_ff)
