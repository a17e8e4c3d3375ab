"""Quadrature-based error norms of a computed cell solution."""
import numpy as np

from .fe import eval_basis, quadrature_rule

__all__ = ["CellField", "split_cell_solution", "l2_error_velocity", "l2_error_pressure",
           "divergence_norm", "velocity_l2_norm", "pressure_mean"]


class CellField:
    """Geometry and basis tables at a fixed quadrature rule on every cell."""

    def __init__(self, mesh, k, degree=None):
        deg = 2 * k + 4 if degree is None else degree
        self.quad = quadrature_rule(deg, "triangle")
        X = mesh.cell_coords
        J = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=-1)  # (nc, 2, 2)
        self.det = np.abs(np.linalg.det(J))
        self.Jinv_T = np.linalg.inv(J).transpose(0, 2, 1)
        self.points = X[:, 0][:, None, :] + np.einsum("cde,qe->cqd", J, self.quad.points)
        self.wdet = self.det[:, None] * self.quad.weights[None, :]  # (nc, nq)
        self.bu = eval_basis(k, "triangle", self.quad)
        self.bp = eval_basis(k - 1, "triangle", self.quad)

    def evaluate(self, func):
        n = self.points.shape[0] * self.points.shape[1]
        val = np.asarray(func(self.points.reshape(n, 2)), dtype=float)
        return val.reshape(self.points.shape[:2] + val.shape[1:])


def split_cell_solution(dofmap, cell):
    """Reshape Stokes cell coefficients into velocity (nc, 2, nub) and pressure (nc, npb)."""
    nc = dofmap.mesh.n_cells
    c = np.asarray(cell, dtype=float).reshape(nc, -1)
    a = 2 * dofmap.nub
    return c[:, :a].reshape(nc, 2, dofmap.nub), c[:, a:]


def _uh(cf, U):
    return np.einsum("cdi,qi->cqd", U, cf.bu.values)


def _ph(cf, P):
    return np.einsum("ci,qi->cq", P, cf.bp.values)


def velocity_l2_norm(mesh, dofmap, cell, cf=None):
    cf = CellField(mesh, dofmap.k) if cf is None else cf
    U, _ = split_cell_solution(dofmap, cell)
    return float(np.sqrt(np.einsum("cq,cqd->", cf.wdet, _uh(cf, U) ** 2)))


def l2_error_velocity(mesh, dofmap, cell, u_exact, cf=None):
    """``|u - u_h|_{L^2}`` with ``u_exact`` mapping (N, 2) points to (N, 2) values."""
    cf = CellField(mesh, dofmap.k) if cf is None else cf
    U, _ = split_cell_solution(dofmap, cell)
    d = _uh(cf, U) - cf.evaluate(u_exact)
    return float(np.sqrt(np.einsum("cq,cqd->", cf.wdet, d ** 2)))


def pressure_mean(mesh, dofmap, cell, cf=None):
    cf = CellField(mesh, dofmap.k) if cf is None else cf
    _, P = split_cell_solution(dofmap, cell)
    return float(np.einsum("cq,cq->", cf.wdet, _ph(cf, P)) / cf.wdet.sum())


def l2_error_pressure(mesh, dofmap, cell, p_exact, cf=None):
    """Pressure L2 error after matching the means (pressure is defined up to a constant)."""
    cf = CellField(mesh, dofmap.k) if cf is None else cf
    _, P = split_cell_solution(dofmap, cell)
    ph = _ph(cf, P)
    pe = cf.evaluate(p_exact)
    area = cf.wdet.sum()
    d = (ph - np.sum(cf.wdet * ph) / area) - (pe - np.sum(cf.wdet * pe) / area)
    return float(np.sqrt(np.sum(cf.wdet * d ** 2)))


def divergence_norm(mesh, dofmap, cell, cf=None):
    """Broken ``|div u_h|_{L^2}`` evaluated with physical gradients."""
    cf = CellField(mesh, dofmap.k) if cf is None else cf
    U, _ = split_cell_solution(dofmap, cell)
    g = np.einsum("cde,qie->cqid", cf.Jinv_T, cf.bu.grads)  # physical gradients (nc, nq, nb, 2)
    div = np.einsum("ci,cqi->cq", U[:, 0], g[..., 0]) + np.einsum("ci,cqi->cq", U[:, 1], g[..., 1])
    return float(np.sqrt(np.sum(cf.wdet * div ** 2)))
