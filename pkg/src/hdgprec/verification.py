"""Verification suite: measured constants checked against frozen regression bands.

Each check is a pure function of (mesh, parameters) returning records and
the raw measurements needed to freeze a baseline.  ``run_checks`` either
freezes new baselines or compares against the stored ones.
"""
import numpy as np

from .condense import SingularBlockError
from .fe import FormParams
from .mesh import generate_unit_square
from .precon import build_preconditioner
from .spectral import (Problem, SpectralRecord, SpectralReport, c_l_violation, condition_number,
                       face_norm_constants, infsup_bh, load_baselines,
                       save_baselines, verify_aux_bounds, verify_theorem_A)
from .system import constant_mode

__all__ = ["SWEEP_NU", "SWEEP_TAU", "BaselineMissing", "run_checks", "random_two_block",
           "kappa_sweep", "infsup_sweep", "face_condition_sweep", "aux_sweep", "sandwich_checks"]

SWEEP_NU = (1.0, 1e-2, 1e-3)
SWEEP_TAU = (1.0, 1e2, 1e3)
INFSUP_NU = (1.0, 1e-2, 1e-4)
INFSUP_TAU = (1.0, 1e2, 1e4)
CU_GRID = ((1.0, 1.0), (1.0, 1e3), (1e-3, 1.0), (1e-3, 1e3))
BAND_SLACK = 0.05


class BaselineMissing(FileNotFoundError):
    pass


def _grid(nus, taus):
    return [(nu, tau) for nu in nus for tau in taus]


# --- measurements -------------------------------------------------------

def kappa_sweep(level=3, kind="hat", eta=16.0, k=2, grid=None):
    """Dense kappa of the preconditioned reduced operator over a (nu, tau) grid."""
    from .condense import build_schur
    from .system import DofMap, assemble
    mesh = generate_unit_square(level)
    dm = DofMap(mesh, k)
    out = []
    for nu, tau in (grid or _grid(SWEEP_NU, SWEEP_TAU)):
        p = FormParams(nu=nu, tau=tau, eta=eta, k=k)
        S = build_schur(assemble(mesh, dm, p, "stokes_a"))
        out.append(condition_number(build_preconditioner(kind, mesh, dm, p), S))
    return out


def infsup_sweep(level=2, eta=16.0, k=2, grid=None):
    from .system import DofMap
    mesh = generate_unit_square(level)
    dm = DofMap(mesh, k)
    return [infsup_bh(mesh, FormParams(nu=nu, tau=tau, eta=eta, k=k), dm)
            for nu, tau in (grid or _grid(INFSUP_NU, INFSUP_TAU))]


def face_condition_sweep(level=2, eta=16.0, k=2, grid=CU_GRID):
    from .system import DofMap
    mesh = generate_unit_square(level)
    dm = DofMap(mesh, k)
    return [face_norm_constants(mesh, FormParams(nu=nu, tau=tau, eta=eta, k=k), dm)[0] for nu, tau in grid]


def aux_sweep(levels=(1, 2, 3), eta=16.0, k=2, nu=1.0, tau=1.0):
    """Auxiliary constants per level as {name: [value per level]}; pairs are split into _lo/_hi."""
    out = {}
    for lv in levels:
        for r in verify_aux_bounds(generate_unit_square(lv), FormParams(nu=nu, tau=tau, eta=eta, k=k)):
            if isinstance(r.value, tuple):
                out.setdefault(r.name + "_lo", []).append(float(r.value[0]))
                out.setdefault(r.name + "_hi", []).append(float(r.value[1]))
            else:
                out.setdefault(r.name, []).append(float(r.value))
    return out


def random_two_block(rng, n=8, n1=None):
    """Random SPD pair (A, P) with a random two-block split after ``n1`` rows."""
    n1 = int(rng.integers(2, n - 1)) if n1 is None else n1

    def spd():
        X = rng.standard_normal((n, n))
        return X @ X.T + n * np.eye(n) * rng.uniform(0.1, 1.0)

    return spd(), spd(), n1


def sandwich_checks(n_random=50, seed=0, eta=16.0, k=2):
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(n_random):
        A, P, n1 = random_two_block(rng)
        recs.append(verify_theorem_A(A, P, n1, name=f"schur_sandwich_random_{i}"))
    pb = Problem(generate_unit_square(1), FormParams(nu=1.0, tau=1.0, eta=eta, k=k))
    recs.append(verify_theorem_A(pb.op("velocity_tilde_d"), pb.op("velocity_Pu"),
                                 name="schur_sandwich_stokes_velocity"))
    recs.append(verify_theorem_A(pb.op("pressure_tilde_a"), pb.op("pressure_Pd"),
                                 kernel=constant_mode(pb.dofmap, "pressure_full"),
                                 name="schur_sandwich_stokes_pressure"))
    return recs


# --- the suite ---------------------------------------------------------------

def _ratio(v):
    v = np.asarray(v, dtype=float)
    return float(v.max() / v.min())


def _safe(fn, *args):
    try:
        return fn(*args), None
    except (np.linalg.LinAlgError, ValueError) as exc:
        return None, str(exc)


def _c_u_eta():
    mesh8 = generate_unit_square(1)
    out = {}
    for e in (4.0, 16.0, 64.0):
        try:
            out[str(e)] = face_norm_constants(mesh8, FormParams(eta=e))[0]
        except SingularBlockError:
            out[str(e)] = None  # below the coercivity threshold
    return out


def _measure(eta, seed):
    """All measurements used by the suite as {name: (value, error)}."""
    mesh8 = generate_unit_square(1)
    return {
        "kappa_hat_128": _safe(kappa_sweep, 3, "hat", eta),
        "c3_32": _safe(infsup_sweep, 2, eta),
        "c3_levels": _safe(lambda: [infsup_bh(generate_unit_square(lv), FormParams(eta=eta)) for lv in (1, 2, 3)]),
        "c_u_32": _safe(face_condition_sweep, 2, eta),
        "c_l_8": _safe(lambda: [c_l_violation(mesh8, FormParams(nu=nu, tau=tau, eta=eta), 500, seed)
                                for nu, tau in _grid(SWEEP_NU, SWEEP_TAU)]),
        "c_u_eta": _safe(_c_u_eta),
        "aux": _safe(aux_sweep, (1, 2, 3), eta),
    }


def _freeze_data(meas, eta):
    bad = [k for k, (_, err) in meas.items() if err is not None]
    if bad:
        raise ValueError(f"cannot freeze baselines, failed measurements: {bad}")
    m = {k: v for k, (v, _) in meas.items()}
    return {
        "kappa_hat_128": {"grid": _grid(SWEEP_NU, SWEEP_TAU), "values": m["kappa_hat_128"],
                          "max": max(m["kappa_hat_128"])},
        "c_u_32": {"grid": list(CU_GRID), "values": m["c_u_32"]},
        "c3_32": {"grid": _grid(INFSUP_NU, INFSUP_TAU), "values": m["c3_32"]},
        "aux_bands": {name: [min(v), max(v)] for name, v in m["aux"].items()},
        "c_u_eta": m["c_u_eta"],
        "settings": {"eta": eta, "k": 2},
    }


def run_checks(eta=16.0, seed=0, freeze=False, baseline_path=None, n_random=50):
    """Run the suite; returns a SpectralReport.

    With ``freeze`` the measured values are written as the new baseline
    first.  Without it a missing baseline raises BaselineMissing.
    """
    if not freeze:
        try:
            base = load_baselines(baseline_path)
        except FileNotFoundError:
            raise BaselineMissing("no spectral baseline found; run 'verify --freeze' first") from None
    m = _measure(eta, seed)
    if freeze:
        base = _freeze_data(m, eta)
        save_baselines(base, baseline_path)
    rep = SpectralReport()
    info = {"eta": eta, "k": 2}

    def failed(name, err, params):
        rep.add(SpectralRecord(name, None, params, False, None, err))

    kap, err = m["kappa_hat_128"]
    if err:
        failed("kappa_hat", err, dict(info, cells=128))
    else:
        kmax = base["kappa_hat_128"]["max"]
        rep.add(SpectralRecord("kappa_hat_ratio", _ratio(kap), dict(info, cells=128), _ratio(kap) <= 10.0, 10.0),
                SpectralRecord("kappa_hat_max", max(kap), dict(info, cells=128), max(kap) <= 1.05 * kmax,
                               1.05 * kmax))

    c3, err = m["c3_32"]
    if err:
        failed("c3", err, dict(info, cells=32))
    else:
        rep.add(SpectralRecord("c3_min", min(c3), dict(info, cells=32), min(c3) > 0, 0.0),
                SpectralRecord("c3_ratio", _ratio(c3), dict(info, cells=32), _ratio(c3) <= 3.0, 3.0))
    c3l, err = m["c3_levels"]
    if err:
        failed("c3_level_variation", err, dict(info, levels="1-3"))
    else:
        var = _ratio(c3l) - 1.0
        rep.add(SpectralRecord("c3_level_variation", var, dict(info, levels="1-3"), var <= 0.25, 0.25))

    cl, err = m["c_l_8"]
    if err:
        failed("c_l_violation", err, dict(info, cells=8))
    else:
        rep.add(SpectralRecord("c_l_violation", max(cl), dict(info, cells=8, samples=500), max(cl) <= 1e-10, 1e-10))

    cu, err = m["c_u_32"]
    if err:
        failed("c_u_band", err, dict(info, cells=32))
    else:
        frozen = base["c_u_32"]["values"]
        ok = len(cu) == len(frozen) and all(abs(a - b) <= BAND_SLACK * b for a, b in zip(cu, frozen))
        rep.add(SpectralRecord("c_u_band", cu, dict(info, cells=32), ok, frozen),
                SpectralRecord("c_u_ratio", _ratio(cu), dict(info, cells=32), _ratio(cu) <= 5.0, 5.0))
    cue, _ = m["c_u_eta"]
    rep.add(SpectralRecord("c_u_eta", cue, dict(info, cells=8), True, None,
                           "recorded only; None marks a non-coercive penalty"))

    aux, err = m["aux"]
    if err:
        failed("aux", err, dict(info, levels="1-3"))
    else:
        for name, vals in aux.items():
            lo, hi = base["aux_bands"][name]
            lo_b, hi_b = lo - BAND_SLACK * abs(lo), hi + BAND_SLACK * abs(hi)
            ok = all(lo_b <= v <= hi_b for v in vals)
            rep.add(SpectralRecord(f"aux_{name}", vals, dict(info, levels="1-3"), ok, (lo_b, hi_b)))

    rep.add(*sandwich_checks(n_random, seed, eta))
    return rep
