import numpy as np
import pytest
import scipy.linalg as sl

from hdgprec.condense import (SingularBlockError, back_substitute, build_schur, factor_local, gather_faces,
                              local_solve, reduce_rhs)
from hdgprec.errors import divergence_norm, velocity_l2_norm
from hdgprec.fe import FormParams
from hdgprec.mesh import generate_unit_square, perturb_mesh
from hdgprec.solver import manufactured_solution, solve_stokes
from hdgprec.spectral import generalized_extreme_eigs
from hdgprec.system import BlockVector, DofMap, assemble, constant_mode, deflation_vector


def _setup(level=1, seed=3, params=None, selector="stokes_a"):
    m = perturb_mesh(generate_unit_square(level), 0.2, seed=seed) if level else generate_unit_square(0)
    d = DofMap(m, 2)
    p = FormParams(nu=0.7, tau=2.0) if params is None else params
    op = assemble(m, d, p, selector)
    return m, d, op


def _dense_schur(op):
    M = op.to_dense()
    n1 = op.n_cell
    return M[n1:, n1:] - M[n1:, :n1] @ np.linalg.solve(M[:n1, :n1], M[:n1, n1:])


# --- factor_local ----------------------------------------------------------

@pytest.mark.parametrize("sel", ["stokes_a", "velocity_Pu", "velocity_tilde_d", "pressure_Pd", "pressure_tilde_a"])
def test_factor_reconstructs_cell_blocks(sel):
    _, _, op = _setup(selector=sel)
    F = factor_local(op)
    assert F.kind == ("saddle" if sel == "stokes_a" else "cholesky")
    R = F.reconstruct()
    assert np.abs(R - op.A11).max() <= 1e-12 * np.abs(op.A11).max()
    if F.kind == "cholesky":
        assert np.all(np.diagonal(F.L, axis1=1, axis2=2) > 0)


def test_stokes_cell_inverse():
    _, _, op = _setup()
    F = factor_local(op)
    I = np.eye(op.cell_size)
    assert np.abs(op.A11 @ F.inverse - I).max() < 1e-11


def test_singular_block_without_parameters():
    m, d, op = _setup(params=FormParams(nu=0.0, tau=0.0))
    with pytest.raises(SingularBlockError) as exc:
        factor_local(op)
    assert "cell" in str(exc.value)


# --- local_solve -----------------------------------------------------------

def test_local_solve_zero():
    _, d, op = _setup()
    F = factor_local(op)
    z = local_solve(F, op, np.zeros((op.n_cells, op.A21_loc.shape[1])))
    assert not z.any()


def test_constant_face_pressure_gives_constant_cell_pressure():
    _, d, op = _setup()
    F = factor_local(op)
    c = 1.7
    face = np.zeros(op.n_face)
    face[d.n_face_u:] = c * np.tile(np.eye(d.nF)[0], d.mesh.n_faces)  # psi_0 = 1
    x = local_solve(F, op, gather_faces(op, face))
    a = 2 * d.nub
    assert np.abs(x[:, :a]).max() < 1e-12
    # p = c in the orthonormal cell basis with phi_0 = sqrt(2)
    expect = np.zeros(d.npb)
    expect[0] = c / np.sqrt(2.0)
    assert np.abs(x[:, a:] - expect).max() < 1e-12


def test_local_solve_matches_dense_local_system():
    _, d, op = _setup(level=0)
    F = factor_local(op)
    rng = np.random.default_rng(0)
    face = rng.standard_normal((op.n_cells, op.A21_loc.shape[1]))
    src = rng.standard_normal((op.n_cells, op.cell_size))
    x = local_solve(F, op, face, src)
    for c in range(op.n_cells):
        ref = np.linalg.solve(op.A11[c], src[c] - op.A21_loc[c].T @ face[c])
        assert np.abs(x[c] - ref).max() <= 1e-11 * np.abs(ref).max()


# --- build_schur -----------------------------------------------------------

def test_schur_matches_dense_elimination():
    _, _, op = _setup(level=0)
    S = build_schur(op)
    ref = _dense_schur(op)
    assert np.abs(S.matrix.toarray() - ref).max() <= 1e-11 * np.abs(ref).max()
    assert S.label == "S_A"


def test_schur_exactly_symmetric_and_kernel():
    m, d, op = _setup(level=2)
    S = build_schur(op).matrix
    assert abs(S - S.T).max() == 0.0
    assert np.abs(S @ deflation_vector(d, "reduced")).max() < 1e-10


def test_schur_of_Ps_is_A22():
    _, _, op = _setup(selector="pressure_Ps")
    S = build_schur(op)
    assert (S.matrix != op.A22).nnz == 0


def test_schur_Pu_spd():
    _, _, op = _setup(level=1, selector="velocity_Pu")
    S = build_schur(op).matrix.toarray()
    assert np.linalg.eigvalsh(S).min() > 0


def test_schur_Pd_kernel_and_complement():
    m, d, op = _setup(level=1, selector="pressure_Pd")
    S = build_schur(op).matrix.toarray()
    e = constant_mode(d, "pressure_face")
    assert np.abs(S @ e).max() < 1e-10
    Q = sl.null_space(e[None, :])
    assert np.linalg.eigvalsh(Q.T @ S @ Q).min() > 0


def test_schur_sparsity_confined_to_cell_neighbourhoods():
    m, d, op = _setup(level=1)
    S = build_schur(op).matrix.tocoo()
    fmap = d.face_map("up")
    owner = [set() for _ in range(op.n_face)]
    for c in range(m.n_cells):
        for g in fmap[c][fmap[c] >= 0]:
            owner[g].add(c)
    for i, j in zip(S.row, S.col):
        assert owner[i] & owner[j]


# --- reduce_rhs / back_substitute ------------------------------------------

def test_reduce_rhs_zero():
    _, _, op = _setup()
    F = factor_local(op)
    b = reduce_rhs(op, F, BlockVector(np.zeros(op.n_cell), np.zeros(op.n_face)))
    assert not b.any()
    assert not back_substitute(op, F, BlockVector(np.zeros(op.n_cell), np.zeros(op.n_face)),
                               np.zeros(op.n_face)).any()


def test_reduce_rhs_locality():
    m, d, op = _setup(level=2)
    F = factor_local(op)
    c = 5
    cell = np.zeros((op.n_cells, op.cell_size))
    cell[c] = np.random.default_rng(1).standard_normal(op.cell_size)
    b = reduce_rhs(op, F, BlockVector(cell.ravel(), np.zeros(op.n_face)))
    own = set(op.face_map[c][op.face_map[c] >= 0])
    assert set(np.flatnonzero(b)) <= own
    assert np.any(b)


def test_reduce_rhs_dense():
    _, _, op = _setup(level=1)
    F = factor_local(op)
    rng = np.random.default_rng(2)
    f = BlockVector(rng.standard_normal(op.n_cell), rng.standard_normal(op.n_face))
    M = op.to_dense()
    n1 = op.n_cell
    ref = f.face - M[n1:, :n1] @ np.linalg.solve(M[:n1, :n1], f.cell)
    assert np.abs(reduce_rhs(op, F, f) - ref).max() <= 1e-11 * np.abs(ref).max()


def test_reduce_rhs_type_check():
    _, _, op = _setup()
    with pytest.raises(TypeError):
        reduce_rhs(op, factor_local(op), np.zeros(op.n_cell + op.n_face))


def _bordered_solve(M, e, b):
    n = len(b)
    K = np.block([[M, e[:, None]], [e[None, :], np.zeros((1, 1))]])
    return np.linalg.solve(K, np.append(b, 0.0))[:n]


@pytest.mark.parametrize("level", [0, 1, 2])
def test_condensation_reproduces_full_solve(level):
    m, d, op = _setup(level=level)
    F = factor_local(op)
    S = build_schur(op, F).matrix.toarray()
    rng = np.random.default_rng(level)
    e_full = deflation_vector(d, "full")
    v = rng.standard_normal(op.n_cell + op.n_face)
    v -= e_full * (e_full @ v)
    rhs = BlockVector(v[:op.n_cell], v[op.n_cell:])
    ref = _bordered_solve(op.to_dense(), e_full, v)

    xf = _bordered_solve(S, deflation_vector(d, "reduced"), reduce_rhs(op, F, rhs))
    x = np.concatenate([back_substitute(op, F, rhs, xf), xf])
    x -= e_full * (e_full @ x)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


def test_recovered_velocity_is_divergence_free():
    m = perturb_mesh(generate_unit_square(2), 0.15, seed=8)
    p = FormParams()
    _, _, f = manufactured_solution(p.nu, p.tau)
    sol = solve_stokes(m, p, source=f, tol=1e-10)
    assert sol.report.converged
    assert divergence_norm(m, sol.dofmap, sol.cell) <= 1e-10 * velocity_l2_norm(m, sol.dofmap, sol.cell)


# --- spectral equivalence of the condensed velocity blocks ------------------

def test_hat_and_bar_velocity_blocks_equivalent_uniformly():
    lo, hi = [], []
    for level in (2, 3, 4):
        m = generate_unit_square(level)
        d = DofMap(m, 2)
        for nu in (1.0, 1e-3):
            for tau in (1.0, 1e3):
                p = FormParams(nu=nu, tau=tau)
                Shat = build_schur(assemble(m, d, p, "velocity_tilde_d")).matrix
                Sbar = build_schur(assemble(m, d, p, "velocity_Pu")).matrix
                eig = generalized_extreme_eigs(Shat, Sbar, method="iterative")
                assert eig.lmin > 0
                lo.append(eig.lmin)
                hi.append(eig.lmax)
    assert max(lo) / min(lo) <= 2.0
    assert max(hi) / min(hi) <= 2.0
