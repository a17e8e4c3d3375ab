import numpy as np
import pytest

from hdgprec.condense import build_schur
from hdgprec.fe import FormParams, build_local_blocks, cell_integrals
from hdgprec.mesh import generate_square, generate_unit_square, perturb_mesh
from hdgprec.solver import cavity_lid
from hdgprec.system import (BlockVector, DofMap, IncompatibleDataError, assemble, assemble_rhs, boundary_lifting,
                            build_dof_maps, constant_mode, deflation_vector)


def test_two_cell_counts():
    d = build_dof_maps(generate_unit_square(0), 2)
    assert (d.n_cell_u, d.n_cell_p, d.n_face_u, d.n_face_p) == (24, 6, 6, 15)


def test_counts_closed_form():
    m = generate_unit_square(4)
    d = DofMap(m, 2)
    nI = len(m.interior_faces)
    assert d.n_cell_u == m.n_cells * 2 * 6
    assert d.n_cell_p == m.n_cells * 3
    assert d.n_face_u == 2 * 3 * nI
    assert d.n_face_p == 3 * m.n_faces


def test_face_velocity_ratio_k1_k2():
    m = generate_unit_square(2)
    assert DofMap(m, 1).n_face_u * 3 == DofMap(m, 2).n_face_u * 2


def test_cell_dofs_contiguous():
    d = DofMap(generate_unit_square(1), 2)
    cm = d.cell_map("up")
    assert np.array_equal(cm.ravel(), np.arange(cm.size))


def test_removed_boundary_dofs_never_appear():
    m = generate_unit_square(2)
    d = DofMap(m, 2)
    fm = d.face_u_map
    for c in range(m.n_cells):
        for l in range(3):
            f = m.cell_faces[c, l]
            seg = fm[c, l * 6:(l + 1) * 6]
            assert np.all(seg < 0) if f in set(m.boundary_faces) else np.all(seg >= 0)


@pytest.mark.parametrize("level", [0, 1, 2])
def test_stokes_kernel(level):
    m = perturb_mesh(generate_unit_square(level), 0.2, seed=level) if level else generate_unit_square(0)
    d = DofMap(m, 2)
    A = assemble(m, d, FormParams(nu=0.3, tau=5.0), "stokes_a")
    e = deflation_vector(d, "full")
    assert np.linalg.norm(e) == pytest.approx(1.0, abs=1e-15)
    assert np.abs(A.full_matrix() @ e).max() < 1e-12


def test_reduced_mode_in_kernel_of_schur():
    m = generate_unit_square(2)
    d = DofMap(m, 2)
    S = build_schur(assemble(m, d, FormParams(), "stokes_a"))
    e = deflation_vector(d, "reduced")
    assert np.linalg.norm(e) == pytest.approx(1.0, abs=1e-15)
    assert np.abs(S.matrix @ e).max() < 1e-10


def test_deflation_scope_validation():
    with pytest.raises(ValueError):
        deflation_vector(DofMap(generate_unit_square(0), 2), "partial")


@pytest.mark.parametrize("sel", ["stokes_a", "velocity_Pu", "velocity_tilde_d", "velocity_v1", "pressure_Ps",
                                 "pressure_Ps_star", "pressure_Pd", "pressure_tilde_a"])
def test_exact_symmetry(sel):
    m = perturb_mesh(generate_unit_square(1), 0.2, seed=4)
    d = DofMap(m, 2)
    M = assemble(m, d, FormParams(nu=0.5, tau=2.0), sel).full_matrix()
    assert abs(M - M.T).max() == 0.0


def _oracle_full(mesh, d, params, lb):
    """Naive dense scatter of per-cell full local Stokes matrices."""
    nc = mesh.n_cells
    nub, npb = d.nub, d.npb
    m = 2 * nub + npb
    n = nc * m + d.n_face_u + d.n_face_p
    M = np.zeros((n, n))
    fmap = d.face_map("up")
    tau = params.tau_cells(nc)
    for c in range(nc):
        a = 2 * nub
        nfu = lb.dh_ff.shape[1]
        L = np.zeros((m + fmap.shape[1], m + fmap.shape[1]))
        L[:a, :a] = tau[c] * lb.mass_v[c] + lb.dh_cc[c]
        L[a:m, :a] = lb.b_cell[c]
        L[:a, m:m + nfu] = lb.dh_cf[c]
        L[m:m + nfu, m:m + nfu] = lb.dh_ff[c]
        L[m + nfu:, :a] = lb.b_face[c]
        L[:a, a:m] = lb.b_cell[c].T
        L[:a, m + nfu:] = lb.b_face[c].T
        L[m:m + nfu, :a] = lb.dh_cf[c].T
        idx = np.concatenate([c * m + np.arange(m), nc * m + fmap[c]])
        keep = np.concatenate([np.ones(m, bool), fmap[c] >= 0])
        ii = idx[keep]
        M[np.ix_(ii, ii)] += L[np.ix_(keep, keep)]
    return M


def test_dense_oracle_assembly():
    m = perturb_mesh(generate_unit_square(1), 0.2, seed=2)
    d = DofMap(m, 2)
    p = FormParams(nu=0.8, tau=3.0)
    lb = build_local_blocks(cell_integrals(m, 2, quad_degree=2 * 2 + 4), p)
    ref = _oracle_full(m, d, p, lb)
    got = assemble(m, d, p, "stokes_a").to_dense()
    assert np.abs(got - ref).max() < 1e-12 * np.abs(ref).max()


def test_parameter_factorization():
    m = perturb_mesh(generate_unit_square(1), 0.2, seed=5)
    d = DofMap(m, 2)
    nu, tau = 0.37, 4.2
    full = assemble(m, d, FormParams(nu=nu, tau=tau), "stokes_a").to_dense()
    b_part = assemble(m, d, FormParams(nu=0.0, tau=0.0), "stokes_a").to_dense()
    nu_part = assemble(m, d, FormParams(nu=1.0, tau=0.0), "stokes_a").to_dense() - b_part
    tau_part = assemble(m, d, FormParams(nu=0.0, tau=1.0), "stokes_a").to_dense() - b_part
    recon = nu * nu_part + tau * tau_part + b_part
    assert np.abs(full - recon).max() <= 1e-13 * np.abs(full).max()


def test_tilde_d_is_dh_plus_tau_mass():
    m = generate_unit_square(1)
    d = DofMap(m, 2)
    p = FormParams(nu=0.6, tau=2.0)
    td = assemble(m, d, p, "velocity_tilde_d").to_dense()
    dh = assemble(m, d, FormParams(nu=0.6, tau=0.0), "velocity_tilde_d").to_dense()
    mass = assemble(m, d, FormParams(nu=0.0, tau=1.0), "velocity_tilde_d").to_dense()
    assert np.abs(td - (dh + 2.0 * mass)).max() < 1e-13 * np.abs(td).max()


def test_pressure_Ps_structure():
    m = generate_unit_square(1)
    d = DofMap(m, 2)
    op = assemble(m, d, FormParams(), "pressure_Ps")
    assert np.all(op.A21_loc == 0)
    assert np.all(np.linalg.eigvalsh(op.A11) > 0)


def test_pressure_Pd_kernel_and_definiteness():
    m = generate_unit_square(1)
    d = DofMap(m, 2)
    M = assemble(m, d, FormParams(), "pressure_Pd").to_dense()
    e = constant_mode(d, "pressure_full")
    assert np.abs(M @ e).max() < 1e-12
    from scipy.linalg import null_space
    Q = null_space(e[None, :])
    assert np.linalg.eigvalsh(Q.T @ M @ Q).min() > 0


def test_rhs_zero():
    m = generate_unit_square(1)
    d = DofMap(m, 2)
    r = assemble_rhs(m, d)
    assert isinstance(r, BlockVector)
    assert not r.cell.any() and not r.face.any()
    r = assemble_rhs(m, d, lambda x: np.zeros((len(x), 2)), lambda x: np.zeros((len(x), 2)),
                     assemble(m, d, FormParams(), "stokes_a"))
    assert not r.cell.any() and not r.face.any()


def test_rhs_constant_source_analytic():
    m = perturb_mesh(generate_unit_square(1), 0.2, seed=9)
    d = DofMap(m, 2)
    r = assemble_rhs(m, d, lambda x: np.ones((len(x), 2)))
    cell = r.cell.reshape(m.n_cells, -1)
    # int_K phi_0 = sqrt(2)|K| for phi_0 = sqrt(2); higher modes are orthogonal to constants
    expect = np.zeros((m.n_cells, 2, d.nub))
    expect[:, :, 0] = np.sqrt(2.0) * m.signed_areas[:, None]
    assert np.abs(cell[:, :2 * d.nub] - expect.reshape(m.n_cells, -1)).max() < 1e-14
    assert not cell[:, 2 * d.nub:].any()


def test_lid_flux_compatible():
    m = generate_square(2, (-1.0, -1.0), (1.0, 1.0))
    d = DofMap(m, 2)
    boundary_lifting(d, cavity_lid(1.0))  # no error


def test_incompatible_flux_rejected():
    m = generate_unit_square(2)
    d = DofMap(m, 2)
    with pytest.raises(IncompatibleDataError):
        boundary_lifting(d, lambda x: np.column_stack([np.ones(len(x)), np.zeros(len(x))]) * (x[:, :1] < 0.5))


def test_assemble_validation():
    m = generate_unit_square(1)
    d = DofMap(m, 2)
    with pytest.raises(ValueError):
        assemble(m, d, FormParams(), "stokes_b")
    with pytest.raises(ValueError):
        assemble(m, d, FormParams(k=1), "stokes_a")
    with pytest.raises(ValueError):
        assemble(generate_unit_square(1), d, FormParams(), "stokes_a")
