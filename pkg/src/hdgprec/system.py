"""Degrees of freedom, global block operators and right-hand sides.

Cell unknowns are grouped contiguously per cell, which makes ``A11``
block diagonal; it is kept as one dense block per cell.  Face unknowns
are ordered ``[u_bar on interior faces, p_bar on all faces]``.  Boundary
face velocities are removed (essential condition) and inhomogeneous
boundary data is lifted into the right-hand side.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .fe import (FormParams, build_local_blocks, cell_integrals, dim_triangle, eval_basis,
                 quadrature_rule, REF_FACE_VERTS)

__all__ = [
    "DofMap",
    "BlockOperator",
    "BlockVector",
    "IncompatibleDataError",
    "SELECTORS",
    "build_dof_maps",
    "assemble",
    "assemble_rhs",
    "boundary_lifting",
    "deflation_vector",
    "constant_mode",
]

SELECTORS = (
    "stokes_a",
    "velocity_Pu",
    "velocity_tilde_d",
    "velocity_v1",
    "pressure_Ps",
    "pressure_Ps_star",
    "pressure_Pd",
    "pressure_tilde_a",
)

_FIELDS = {
    "stokes_a": "up",
    "velocity_Pu": "u",
    "velocity_tilde_d": "u",
    "velocity_v1": "u",
    "pressure_Ps": "p",
    "pressure_Ps_star": "p",
    "pressure_Pd": "p",
    "pressure_tilde_a": "p",
}


class IncompatibleDataError(ValueError):
    pass


class DofMap:
    """Numbering of cell and face unknowns for a mesh and degree ``k``.

    Only homogeneous-or-lifted Dirichlet velocity traces are supported:
    every boundary face velocity is removed.
    """

    def __init__(self, mesh, k, trace_boundary="dirichlet-velocity"):
        if k < 1:
            raise ValueError("k must be >= 1")
        if trace_boundary != "dirichlet-velocity":
            raise ValueError(f"unsupported trace boundary condition {trace_boundary!r}")
        self.mesh = mesh
        self.k = int(k)
        self.nub = dim_triangle(k)
        self.npb = dim_triangle(k - 1)
        self.nF = k + 1
        nc = mesh.n_cells
        interior = mesh.face_cells[:, 1] >= 0
        self.vel_face_index = -np.ones(mesh.n_faces, dtype=np.int64)
        self.vel_face_index[interior] = np.arange(interior.sum())
        self.removed_faces = np.flatnonzero(~interior)
        self.n_interior = int(interior.sum())

        self.n_cell_u = nc * 2 * self.nub
        self.n_cell_p = nc * self.npb
        self.n_cell = self.n_cell_u + self.n_cell_p
        self.n_face_u = self.n_interior * 2 * self.nF
        self.n_face_p = mesh.n_faces * self.nF
        self.n_face = self.n_face_u + self.n_face_p

        nF = self.nF
        vf = self.vel_face_index[mesh.cell_faces]  # (nc, 3)
        comp_j = np.arange(2 * nF)
        umap = np.where(vf[:, :, None] >= 0, vf[:, :, None] * 2 * nF + comp_j[None, None, :], -1)
        self.face_u_map = umap.reshape(nc, 6 * nF)
        self.face_p_map = (mesh.cell_faces[:, :, None] * nF + np.arange(nF)[None, None, :]).reshape(nc, 3 * nF)

    # sizes of the per-cell blocks
    def cell_block_size(self, fields):
        return {"up": 2 * self.nub + self.npb, "u": 2 * self.nub, "p": self.npb}[fields]

    def face_local_size(self, fields):
        return {"up": 9 * self.nF, "u": 6 * self.nF, "p": 3 * self.nF}[fields]

    def cell_map(self, fields):
        m = self.cell_block_size(fields)
        return np.arange(self.mesh.n_cells * m).reshape(-1, m)

    def face_map(self, fields):
        if fields == "u":
            return self.face_u_map
        if fields == "p":
            return self.face_p_map
        p = self.face_p_map + self.n_face_u
        return np.concatenate([self.face_u_map, p], axis=1)

    def n_face_dofs(self, fields):
        return {"up": self.n_face, "u": self.n_face_u, "p": self.n_face_p}[fields]

    @cached_property
    def integrals(self):
        return cell_integrals(self.mesh, self.k)

    def __repr__(self):
        return (f"DofMap(k={self.k}, cells={self.mesh.n_cells}, cell_u={self.n_cell_u}, "
                f"cell_p={self.n_cell_p}, face_u={self.n_face_u}, face_p={self.n_face_p})")


def build_dof_maps(mesh, k, trace_boundary="dirichlet-velocity"):
    return DofMap(mesh, k, trace_boundary)


@dataclass
class BlockVector:
    cell: np.ndarray
    face: np.ndarray

    def concatenate(self):
        return np.concatenate([self.cell, self.face])


@dataclass
class BlockOperator:
    """Symmetric two-field operator ``[[A11, A21^T], [A21, A22]]``.

    ``A11`` is stored as dense cell blocks; the coupling blocks are kept
    cell-locally (``A21_loc``, ``A22_loc``) together with the local to
    global face map, where removed face unknowns carry index -1.
    """

    label: str
    fields: str
    A11: np.ndarray
    A21_loc: np.ndarray
    A22_loc: np.ndarray
    face_map: np.ndarray
    n_face: int
    params: FormParams
    face_kernel: np.ndarray = None
    n_velocity_cell: int = 0  # leading size of the SPD part of saddle cell blocks

    @property
    def n_cells(self):
        return self.A11.shape[0]

    @property
    def cell_size(self):
        return self.A11.shape[1]

    @property
    def n_cell(self):
        return self.A11.shape[0] * self.A11.shape[1]

    def _scatter_pattern(self):
        nc, nl, m = self.A21_loc.shape
        rows = np.broadcast_to(self.face_map[:, :, None], (nc, nl, m))
        cols = np.broadcast_to(np.arange(nc * m).reshape(nc, 1, m), (nc, nl, m))
        return rows, cols

    @cached_property
    def A21(self):
        rows, cols = self._scatter_pattern()
        keep = rows >= 0
        return sp.csr_matrix((self.A21_loc[keep], (rows[keep], cols[keep])),
                             shape=(self.n_face, self.n_cell))

    @cached_property
    def A22(self):
        return scatter_face_blocks(self.A22_loc, self.face_map, self.n_face)

    @cached_property
    def A11_sparse(self):
        return sp.block_diag(list(self.A11), format="csr")

    def full_matrix(self):
        return sp.bmat([[self.A11_sparse, self.A21.T], [self.A21, self.A22]], format="csr")

    def to_dense(self):
        return self.full_matrix().toarray()

    def matvec(self, x):
        nc, m = self.n_cells, self.cell_size
        xc, xf = x[:self.n_cell], x[self.n_cell:]
        yc = np.einsum("cij,cj->ci", self.A11, xc.reshape(nc, m)).ravel() + self.A21.T @ xf
        yf = self.A21 @ xc + self.A22 @ xf
        return np.concatenate([yc, yf])


def scatter_face_blocks(local, face_map, n):
    """Sum per-cell dense face blocks into a global sparse matrix."""
    nc, nl, _ = local.shape
    rows = np.broadcast_to(face_map[:, :, None], (nc, nl, nl))
    cols = np.broadcast_to(face_map[:, None, :], (nc, nl, nl))
    keep = (rows >= 0) & (cols >= 0)
    A = sp.coo_matrix((local[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def _saddle(uu, up, pp=None):
    nc, a, _ = uu.shape
    b = up.shape[1]
    out = np.zeros((nc, a + b, a + b))
    out[:, :a, :a] = uu
    out[:, a:, :a] = up
    out[:, :a, a:] = up.transpose(0, 2, 1)
    if pp is not None:
        out[:, a:, a:] = pp
    return out


def _tr(x):
    return x.transpose(0, 2, 1)


def assemble(mesh, dofmap, params, selector, blocks=None):
    """Assemble the block operator named by ``selector``.

    ``stokes_a`` is the HDG saddle operator; the other selectors are the
    Gram and auxiliary operators used by the preconditioners and the
    spectral checks (see ``SELECTORS``).
    """
    if selector not in _FIELDS:
        raise ValueError(f"unknown selector {selector!r}; choose from {SELECTORS}")
    if dofmap.mesh is not mesh:
        raise ValueError("dof map belongs to a different mesh")
    if params.k != dofmap.k:
        raise ValueError(f"params.k={params.k} does not match dof map k={dofmap.k}")
    lb = build_local_blocks(dofmap.integrals, params) if blocks is None else blocks
    nc = mesh.n_cells
    tau = params.tau_cells(nc)[:, None, None]
    fields = _FIELDS[selector]
    kernel = None
    nvel = 0

    if selector == "stokes_a":
        Auu = tau * lb.mass_v + lb.dh_cc
        A11 = _saddle(Auu, lb.b_cell)
        nu_loc, np_loc = lb.dh_cf.shape[2], lb.b_face.shape[1]
        m = A11.shape[1]
        A21 = np.zeros((nc, nu_loc + np_loc, m))
        A21[:, :nu_loc, :Auu.shape[1]] = _tr(lb.dh_cf)
        A21[:, nu_loc:, :Auu.shape[1]] = lb.b_face
        A22 = np.zeros((nc, nu_loc + np_loc, nu_loc + np_loc))
        A22[:, :nu_loc, :nu_loc] = lb.dh_ff
        kernel = constant_mode(dofmap, "stokes_face")
        nvel = Auu.shape[1]
    elif selector == "velocity_Pu":
        nu = params.nu
        A11 = tau * lb.mass_v + nu * lb.v1_cc
        A21 = nu * _tr(lb.v1_cf)
        A22 = nu * lb.v1_ff
    elif selector == "velocity_v1":
        A11, A21, A22 = lb.v1_cc, _tr(lb.v1_cf), lb.v1_ff
    elif selector == "velocity_tilde_d":
        A11, A21, A22 = lb.td_cc, _tr(lb.td_cf), lb.td_ff
    elif selector == "pressure_Ps":
        A11 = lb.q0_cc
        A21 = np.zeros((nc, lb.q0_ff.shape[1], A11.shape[1]))
        A22 = lb.q0_ff
    elif selector == "pressure_Ps_star":
        A11, A21, A22 = lb.q0s_cc, _tr(lb.q0s_cf), lb.q0s_ff
    elif selector == "pressure_Pd":
        A11, A21, A22 = lb.q1_cc, _tr(lb.q1_cf), lb.q1_ff
        kernel = constant_mode(dofmap, "pressure_face")
    else:  # pressure_tilde_a
        if np.any(params.tau_cells(nc) <= 0):
            raise ValueError("pressure_tilde_a needs tau > 0 in every cell")
        A11, A21, A22 = lb.ta_cc, _tr(lb.ta_cf), lb.ta_ff
        kernel = constant_mode(dofmap, "pressure_face")

    # exact symmetry of the stored blocks
    A11 = 0.5 * (A11 + _tr(A11))
    A22 = 0.5 * (A22 + _tr(A22))
    return BlockOperator(selector, fields, A11, np.ascontiguousarray(A21), A22,
                         dofmap.face_map(fields), dofmap.n_face_dofs(fields), params,
                         kernel, nvel)


# --- constant pressure mode ------------------------------------------------

def _cell_constant_coeffs(k):
    q = quadrature_rule(max(2 * k, 1), "triangle")
    return q.weights @ eval_basis(k, "triangle", q).values


def constant_mode(dofmap, layout):
    """Unit vector of the constant pressure ``(p, p_bar) = (1, 1)``.

    ``layout`` is one of ``stokes_full`` (cells then faces of the Stokes
    operator), ``stokes_face``, ``pressure_full`` or ``pressure_face``.
    """
    nc = dofmap.mesh.n_cells
    cp = _cell_constant_coeffs(dofmap.k - 1)
    fp = np.zeros(dofmap.nF)
    fp[0] = 1.0
    face_p = np.tile(fp, dofmap.mesh.n_faces)
    if layout == "pressure_face":
        v = face_p
    elif layout == "pressure_full":
        v = np.concatenate([np.tile(cp, nc), face_p])
    elif layout == "stokes_face":
        v = np.concatenate([np.zeros(dofmap.n_face_u), face_p])
    elif layout == "stokes_full":
        cell = np.zeros((nc, dofmap.cell_block_size("up")))
        cell[:, 2 * dofmap.nub:] = cp
        v = np.concatenate([cell.ravel(), np.zeros(dofmap.n_face_u), face_p])
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return v / np.linalg.norm(v)


def deflation_vector(dofmap, scope="reduced"):
    """Normalised constant-pressure mode of the full or condensed system."""
    if scope == "full":
        return constant_mode(dofmap, "stokes_full")
    if scope == "reduced":
        return constant_mode(dofmap, "stokes_face")
    raise ValueError("scope must be 'full' or 'reduced'")


# --- right-hand side -------------------------------------------------------

def _eval_field(func, pts):
    val = np.asarray(func(pts), dtype=float)
    if val.shape == (2,):
        val = np.broadcast_to(val, (len(pts), 2))
    if val.shape != (len(pts), 2):
        raise ValueError("vector fields must map (N, 2) points to (N, 2) values")
    return val


def boundary_lifting(dofmap, g, check_flux=True, normal_flux=False):
    """L2 projection of boundary data ``g`` onto removed face velocities.

    Returns per-cell local face arrays (nc, 6 * nF), nonzero only at
    removed (boundary) velocity unknowns.  With ``normal_flux`` the
    moments ``int_F (g . n) psi_j`` per boundary face are returned
    instead (shape (n_boundary_faces, nF)).
    """
    mesh = dofmap.mesh
    k, nF = dofmap.k, dofmap.nF
    qs = quadrature_rule(2 * k + 4, "segment")
    psi = eval_basis(k, "segment", qs).values
    bf = mesh.boundary_faces
    a = mesh.vertices[mesh.faces[bf, 0]]
    b = mesh.vertices[mesh.faces[bf, 1]]
    pts = a[:, None, :] + qs.points[None, :, None] * (b - a)[:, None, :]
    vals = _eval_field(g, pts.reshape(-1, 2)).reshape(len(bf), -1, 2)
    # orthonormal face basis: coefficient = mean of g * psi over the face
    coeff = np.einsum("q,fqc,qj->fcj", qs.weights, vals, psi)  # (nbf, 2, nF)

    if check_flux:
        c = mesh.face_cells[bf, 0]
        l = mesh.face_local[bf, 0]
        n = mesh.outward_normals()[c, l]
        length = mesh.face_lengths[bf]
        flux = np.sum(length * np.einsum("fc,fc->f", coeff[:, :, 0], n))
        measure = length.sum()
        if abs(flux) > 1e-10 * measure:
            raise IncompatibleDataError(f"boundary data has net flux {flux:.3e} != 0")

    if normal_flux:
        c = mesh.face_cells[bf, 0]
        n = mesh.outward_normals()[c, mesh.face_local[bf, 0]]
        gn = np.einsum("fqc,fc->fq", vals, n)
        return np.einsum("q,f,fq,qj->fj", qs.weights, mesh.face_lengths[bf], gn, psi)

    face_vals = np.zeros((mesh.n_faces, 2 * nF))
    face_vals[bf] = coeff.reshape(len(bf), 2 * nF)
    loc = face_vals[mesh.cell_faces].reshape(mesh.n_cells, 6 * nF)
    removed = dofmap.face_u_map < 0
    return np.where(removed, loc, 0.0)


def assemble_rhs(mesh, dofmap, source=None, boundary=None, operator=None):
    """Right-hand side of the Stokes operator as a BlockVector.

    ``source`` and ``boundary`` map (N, 2) points to (N, 2) velocities;
    ``None`` means zero.  Nonzero boundary data needs the assembled
    ``stokes_a`` operator for the lifting.
    """
    nub, nc = dofmap.nub, mesh.n_cells
    m = dofmap.cell_block_size("up")
    cell = np.zeros((nc, m))
    if source is not None:
        k = dofmap.k
        qt = quadrature_rule(2 * k + 2, "triangle")
        phi = eval_basis(k, "triangle", qt).values
        x = mesh.cell_coords
        J = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=-1)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        pts = x[:, 0][:, None, :] + np.einsum("cde,qe->cqd", J, qt.points)
        fv = _eval_field(source, pts.reshape(-1, 2)).reshape(nc, -1, 2)
        load = np.einsum("q,c,cqd,qi->cdi", qt.weights, det, fv, phi)
        cell[:, :2 * nub] = load.reshape(nc, 2 * nub)
    face = np.zeros(dofmap.n_face)
    if boundary is not None:
        if operator is None or operator.label != "stokes_a":
            raise ValueError("boundary lifting needs the assembled stokes_a operator")
        gl = boundary_lifting(dofmap, boundary)
        nl = operator.A21_loc.shape[1]
        gfull = np.zeros((nc, nl))
        gfull[:, :gl.shape[1]] = gl
        cell -= np.einsum("cim,ci->cm", operator.A21_loc, gfull)
        fl = -np.einsum("cij,cj->ci", operator.A22_loc, gfull)
        fmap = operator.face_map
        keep = fmap >= 0
        np.add.at(face, fmap[keep], fl[keep])
        # b_h only sees cell velocities, so the normal trace is imposed
        # weakly through the face pressure equations on the boundary
        gn = boundary_lifting(dofmap, boundary, check_flux=False, normal_flux=True)
        rows = dofmap.n_face_u + mesh.boundary_faces[:, None] * dofmap.nF + np.arange(dofmap.nF)
        face[rows] += gn
    return BlockVector(cell.ravel(), face)
