from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdgprec.fe import (DegenerateCellError, FormParams, build_local_blocks, cell_integrals, dim_triangle,
                        eval_basis, quadrature_rule)
from hdgprec.mesh import Mesh, generate_unit_square, perturb_mesh

from oracles import CellOracle, bh, bh_ibp, dh, mass, sip_scalar


# --- quadrature -------------------------------------------------------------

@pytest.mark.parametrize("deg", range(1, 21))
def test_triangle_area(deg):
    q = quadrature_rule(deg, "triangle")
    assert q.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert np.all(q.weights > 0)


def test_monomial_x2y2():
    q = quadrature_rule(6, "triangle")
    val = np.sum(q.weights * q.points[:, 0] ** 2 * q.points[:, 1] ** 2)
    assert val == pytest.approx(1.0 / 180.0, rel=1e-13)


@pytest.mark.parametrize("deg", [1, 4, 7, 10, 15, 20])
def test_triangle_exactness(deg):
    q = quadrature_rule(deg, "triangle")
    x, y = q.points.T
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert np.sum(q.weights * x ** a * y ** b) == pytest.approx(exact, rel=1e-12, abs=1e-16)


def test_segment_x5():
    q = quadrature_rule(5, "segment")
    assert abs(np.sum(q.weights * q.points ** 5) - 1.0 / 6.0) < 1e-14


@pytest.mark.parametrize("deg", [0, 21])
def test_unsupported_degree(deg):
    with pytest.raises(ValueError):
        quadrature_rule(deg, "triangle")


# --- basis ----------------------------------------------------------------------

@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_basis_dimension_and_gram(k):
    q = quadrature_rule(2 * k + 2, "triangle")
    b = eval_basis(k, "triangle", q)
    assert b.dim == dim_triangle(k) == (k + 1) * (k + 2) // 2
    G = b.values.T @ (q.weights[:, None] * b.values)
    assert np.abs(G - np.eye(b.dim)).max() < 1e-13
    s = quadrature_rule(2 * k + 2, "segment")
    bs = eval_basis(k, "segment", s)
    assert bs.dim == k + 1
    assert np.abs(bs.values.T @ (s.weights[:, None] * bs.values) - np.eye(k + 1)).max() < 1e-13


@pytest.mark.parametrize("k", [1, 2, 3])
def test_gradients_match_finite_differences(k):
    rng = np.random.default_rng(k)
    pts = rng.uniform(0.05, 0.45, size=(10, 2))
    step = 1e-6
    g = eval_basis(k, "triangle", pts).grads
    for d in range(2):
        e = np.zeros(2)
        e[d] = step
        fd = (eval_basis(k, "triangle", pts + e).values - eval_basis(k, "triangle", pts - e).values) / (2 * step)
        assert np.abs(fd - g[:, :, d]).max() < 1e-7


# --- local blocks --------------------------------------------------------------------

def _mesh():
    return perturb_mesh(generate_unit_square(1), 0.2, seed=1)


def _full_vel(lb, c):
    return np.block([[lb.dh_cc[c], lb.dh_cf[c]], [lb.dh_cf[c].T, lb.dh_ff[c]]])


def test_dh_vanishes_on_constants():
    m = _mesh()
    ci = cell_integrals(m, 2)
    lb = build_local_blocks(ci, FormParams(nu=1.3, eta=16))
    nub, nF = ci.mass_u.shape[1], 3
    for cvec in ([1.0, 0.0], [0.3, -2.0]):
        U = np.zeros((2, nub))
        U[:, 0] = np.array(cvec) / np.sqrt(2.0)  # phi_0 = sqrt(2)
        Ub = np.zeros((3, 2, nF))
        Ub[:, :, 0] = cvec
        x = np.concatenate([U.ravel(), Ub.ravel()])
        for c in range(m.n_cells):
            assert abs(x @ _full_vel(lb, c) @ x) < 1e-12
            assert np.abs(_full_vel(lb, c) @ x).max() < 1e-11


def test_bh_annihilates_constant_pressure():
    m = _mesh()
    ci = cell_integrals(m, 2)
    lb = build_local_blocks(ci, FormParams())
    npb = ci.mass_p.shape[1]
    q = np.zeros(npb)
    q[0] = 1.0 / np.sqrt(2.0)
    qb = np.tile([1.0, 0.0, 0.0], 3)
    res = np.einsum("i,cij->cj", q, lb.b_cell) + np.einsum("i,cij->cj", qb, lb.b_face)
    assert np.abs(res).max() < 1e-13


@pytest.mark.parametrize("k", [1, 2])
def test_local_blocks_against_quadrature_oracle(k):
    m = _mesh()
    rng = np.random.default_rng(7)
    p = FormParams(nu=0.7, tau=2.5, eta=12.0, k=k)
    ci = cell_integrals(m, k)
    lb = build_local_blocks(ci, p)
    nub, npb, nF = ci.mass_u.shape[1], ci.mass_p.shape[1], k + 1
    for c in range(m.n_cells):
        o = CellOracle(m, c, k)
        U, V = rng.standard_normal((2, 2, nub))
        Ub, Vb = rng.standard_normal((2, 3, 2, nF))
        Q, Qb = rng.standard_normal(npb), rng.standard_normal((3, nF))
        P, Pb = rng.standard_normal(npb), rng.standard_normal((3, nF))
        x = np.concatenate([U.ravel(), Ub.ravel()])
        y = np.concatenate([V.ravel(), Vb.ravel()])
        ref = dh(o, p.nu, p.eta, U, Ub, V, Vb)
        assert x @ _full_vel(lb, c) @ y == pytest.approx(ref, rel=1e-12, abs=1e-12)
        assert U.ravel() @ lb.mass_v[c] @ V.ravel() == pytest.approx(mass(o, U, V), rel=1e-12)
        got = Q @ lb.b_cell[c] @ V.ravel() + Qb.ravel() @ lb.b_face[c] @ V.ravel()
        assert got == pytest.approx(bh(o, V, Q, Qb), rel=1e-12, abs=1e-12)
        ta = np.block([[lb.ta_cc[c], lb.ta_cf[c]], [lb.ta_cf[c].T, lb.ta_ff[c]]])
        pa, qa = np.concatenate([P, Pb.ravel()]), np.concatenate([Q, Qb.ravel()])
        assert pa @ ta @ qa == pytest.approx(sip_scalar(o, p.eta, P, Pb, Q, Qb) / p.tau, rel=1e-12, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_bh_integration_by_parts(seed):
    m = perturb_mesh(generate_unit_square(1), 0.25, seed=seed % 97)
    rng = np.random.default_rng(seed)
    c = int(rng.integers(m.n_cells))
    o = CellOracle(m, c, 2)
    V = rng.standard_normal((2, 6))
    Q, Qb = rng.standard_normal(3), rng.standard_normal((3, 3))
    assert bh(o, V, Q, Qb) == pytest.approx(bh_ibp(o, V, Q, Qb), rel=1e-12, abs=1e-12)


def test_nu_linearity_and_tilde_d():
    ci = cell_integrals(_mesh(), 2)
    a = build_local_blocks(ci, FormParams(nu=1.0, tau=3.0))
    b = build_local_blocks(ci, FormParams(nu=2.0, tau=3.0))
    for name in ("dh_cc", "dh_cf", "dh_ff"):
        assert np.array_equal(2.0 * getattr(a, name), getattr(b, name))
    assert np.array_equal(a.td_cc, a.dh_cc + 3.0 * a.mass_v)
    assert np.array_equal(a.td_cf, a.dh_cf)


def test_gram_blocks_symmetric_and_semidefinite():
    ci = cell_integrals(_mesh(), 2)
    lb = build_local_blocks(ci, FormParams())
    for c in range(ci.n_cells):
        for blk in (_full_vel(lb, c), np.block([[lb.v1_cc[c], lb.v1_cf[c]], [lb.v1_cf[c].T, lb.v1_ff[c]]])):
            assert np.abs(blk - blk.T).max() < 1e-12 * np.abs(blk).max()
            assert np.linalg.eigvalsh(blk).min() > -1e-10 * np.abs(blk).max()
        assert np.abs(lb.dh_ff[c] - lb.dh_ff[c].T).max() == 0.0


def test_q1_vanishes_on_constant_pair():
    ci = cell_integrals(_mesh(), 2)
    lb = build_local_blocks(ci, FormParams())
    x = np.concatenate([[1.0 / np.sqrt(2.0), 0.0, 0.0], np.tile([1.0, 0.0, 0.0], 3)])
    for c in range(ci.n_cells):
        blk = np.block([[lb.q1_cc[c], lb.q1_cf[c]], [lb.q1_cf[c].T, lb.q1_ff[c]]])
        assert np.abs(blk @ x).max() < 1e-12


def test_q0_and_q0star_equivalent_independent_of_parameters():
    ci = cell_integrals(generate_unit_square(1), 2)
    ranges = []
    for nu, tau in ((1.0, 1.0), (1e-3, 1e3)):
        lb = build_local_blocks(ci, FormParams(nu=nu, tau=tau))
        for c in range(2):
            A = np.block([[lb.q0_cc[c], np.zeros((3, 9))], [np.zeros((9, 3)), lb.q0_ff[c]]])
            B = np.block([[lb.q0s_cc[c], lb.q0s_cf[c]], [lb.q0s_cf[c].T, lb.q0s_ff[c]]])
            lam = np.linalg.eigvals(np.linalg.solve(A, B)).real
            assert lam.min() > 0
            ranges.append((lam.min(), lam.max()))
    assert np.allclose(ranges[:2], ranges[2:], rtol=1e-12)


def test_degenerate_cell():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1e-15]])
    m = Mesh(v, np.array([[0, 1, 2]]), np.array([[0, 1], [0, 2], [1, 2]]), np.array([[0, -1]] * 3),
             np.array([[2, -1], [1, -1], [0, -1]]), np.array([[2, 1, 0]]), np.zeros((1, 3), bool))
    with pytest.raises(DegenerateCellError):
        cell_integrals(m, 2)


def test_form_params_validation():
    with pytest.raises(ValueError):
        FormParams(eta=1.0)
    with pytest.raises(ValueError):
        FormParams(nu=-1.0)
    with pytest.raises(ValueError):
        FormParams(length_scale="inradius")


def test_length_scale_choice():
    ci = cell_integrals(generate_unit_square(1), 2)
    assert np.allclose(FormParams().cell_size(ci), np.sqrt(2 * ci.area))
    assert np.array_equal(FormParams(length_scale="diameter").cell_size(ci), ci.h)
