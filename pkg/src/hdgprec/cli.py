"""Command line driver for solver sweeps, spectral measurements and the verification suite.

Exit codes: 0 success, 1 solver or check failure, 2 configuration error,
4 baseline file missing.
"""
import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .condense import SingularBlockError
from .errors import CellField, divergence_norm, l2_error_pressure, l2_error_velocity
from .fe import FormParams
from .mesh import generate_square, generate_unit_square
from .solver import brinkman_tau, cavity_lid, manufactured_solution, solve_stokes
from .spectral import condition_number, preconditioned_spectrum

__all__ = ["RunConfig", "ConfigError", "CSV_COLUMNS", "SPECTRUM_COLUMNS", "run_case", "run_brinkman",
           "run_spectrum", "run_verify", "rows_to_csv", "rows_to_markdown", "main",
           "EXIT_OK", "EXIT_FAILURE", "EXIT_CONFIG", "EXIT_BASELINE"]

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_BASELINE = 0, 1, 2, 4

CSV_COLUMNS = ["case", "level", "cells", "face_dofs", "nu", "tau", "eta", "k", "precon", "iters", "converged",
               "kappa", "err_u_l2", "err_p_l2", "div_norm", "seconds"]
SPECTRUM_COLUMNS = ["case", "level", "cells", "face_dofs", "nu", "tau", "eta", "k", "precon",
                    "lmin", "lmax", "amin", "amax", "kappa", "method"]
CASES = ("manufactured", "cavity", "brinkman", "verify", "spectrum")
DEFAULT_ETA = {"manufactured": 4.0, "cavity": 6.0, "brinkman": 4.0}  # times k^2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Settings of one sweep.  ``tau`` entries are numbers or the name ``brinkman``."""

    case: str = "manufactured"
    k: int = 2
    eta: float = None  # default depends on the case
    nu: list = field(default_factory=lambda: [1.0])
    tau: list = field(default_factory=lambda: [1.0])
    levels: list = field(default_factory=lambda: [4])
    precon: str = "hat"
    tol: float = 1e-8
    maxit: int = 2000
    out: str = None
    markdown: str = None
    seed: int = 0
    kappa: bool = False
    timings: bool = True
    workers: int = 1
    freeze: bool = False
    baseline: str = None
    spectrum_method: str = "dense"

    def __post_init__(self):
        self.nu = _as_list(self.nu)
        self.tau = _as_list(self.tau)
        self.levels = [int(v) for v in _as_list(self.levels)]
        if self.eta is None and self.case in DEFAULT_ETA:
            self.eta = DEFAULT_ETA[self.case] * self.k ** 2
        self.validate()

    def validate(self):
        if self.case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}; choose from {CASES}")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError("k must be an integer >= 1")
        if self.eta is not None and not self.eta > 1:
            raise ConfigError("eta must be > 1")
        if not 0 < self.tol < 1:
            raise ConfigError("tol must lie in (0, 1)")
        if self.precon not in ("bar", "hat"):
            raise ConfigError("precon must be 'bar' or 'hat'")
        if any(lv < 0 for lv in self.levels):
            raise ConfigError("levels must be nonnegative")
        if any(v <= 0 for v in self.nu):
            raise ConfigError("nu must be positive")
        for t in self.tau:
            if isinstance(t, str):
                if t != "brinkman":
                    raise ConfigError(f"unknown tau field {t!r}")
            elif t <= 0:
                raise ConfigError("tau must be positive")
        if self.spectrum_method not in ("dense", "iterative"):
            raise ConfigError("spectrum_method must be 'dense' or 'iterative'")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(**d)


def _as_list(v):
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    return [_num(v)]


def _num(x):
    if isinstance(x, str):
        try:
            return float(x)
        except ValueError:
            return x
    return x


def _worker_count(cfg):
    cap = os.environ.get("HDG_THREADS")
    n = cfg.workers
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError("HDG_THREADS must be an integer") from None
    return max(1, n)


# --- solver sweeps ---------------------------------------------------------------

def _mesh_for(case, level):
    if case == "cavity":
        return generate_square(level, (-1.0, -1.0), (1.0, 1.0))
    return generate_unit_square(level)


def _sweep_points(cfg):
    return [(lv, nu, tau) for lv in cfg.levels for nu in cfg.nu for tau in cfg.tau]


def _params(cfg, mesh, nu, tau):
    if tau == "brinkman":
        tau = brinkman_tau(mesh.cell_midpoints)
    return FormParams(nu=float(nu), tau=tau, eta=float(cfg.eta), k=cfg.k)


def _fmt_tau(tau):
    return tau if isinstance(tau, str) else float(tau)


def _solve_point(args):
    cfg, case, (level, nu, tau) = args
    mesh = _mesh_for(case, level)
    params = _params(cfg, mesh, nu, tau)
    row = dict(case=case, level=level, cells=mesh.n_cells, nu=float(nu), tau=_fmt_tau(tau), eta=float(cfg.eta),
               k=cfg.k, precon=cfg.precon, kappa="", err_u_l2="", err_p_l2="", div_norm="")
    if case == "manufactured":
        u, p, f = manufactured_solution(float(nu), float(tau))
        g = u
    elif case == "cavity":
        u = p = None
        f, g = None, cavity_lid(1.0)
    else:
        u = p = None
        f, g = (lambda x: np.ones((len(x), 2))), None
    sol = solve_stokes(mesh, params, f, g, cfg.precon, cfg.tol, cfg.maxit, keep_operators=cfg.kappa)
    rep = sol.report
    row.update(face_dofs=len(sol.face), iters=rep.iterations, converged=bool(rep.converged))
    t = sum(sol.timings.values())
    row["seconds"] = f"{t:.3f}" if cfg.timings else ""
    cf = CellField(mesh, cfg.k)
    if u is not None:
        row["err_u_l2"] = l2_error_velocity(mesh, sol.dofmap, sol.cell, u, cf)
        row["err_p_l2"] = l2_error_pressure(mesh, sol.dofmap, sol.cell, p, cf)
    row["div_norm"] = divergence_norm(mesh, sol.dofmap, sol.cell, cf)
    if cfg.kappa:
        row["kappa"] = condition_number(sol.preconditioner, sol.reduced, cfg.spectrum_method)
    return {c: row.get(c, "") for c in CSV_COLUMNS}


def _run_points(cfg, fn, case):
    jobs = [(cfg, case, pt) for pt in _sweep_points(cfg)]
    n = _worker_count(cfg)
    if n == 1 or len(jobs) == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, jobs))  # map keeps the sweep order


def run_case(cfg):
    """Solver sweep over (level, nu, tau) for the manufactured, cavity or Brinkman case."""
    if cfg.case not in ("manufactured", "cavity", "brinkman"):
        raise ConfigError(f"run_case does not handle case {cfg.case!r}")
    if cfg.case == "manufactured" and any(isinstance(t, str) for t in cfg.tau):
        raise ConfigError("the manufactured case needs numeric tau")
    return _run_points(cfg, _solve_point, cfg.case)


def run_brinkman(cfg):
    """Brinkman sweep: f = (1, 1), zero boundary data, heterogeneous tau at cell midpoints."""
    cfg = RunConfig.from_dict(dict(asdict(cfg), case="brinkman", tau=["brinkman"]))
    return run_case(cfg)


def _spectrum_point(args):
    cfg, case, (level, nu, tau) = args
    from .condense import build_schur
    from .precon import build_preconditioner
    from .system import DofMap, assemble
    mesh = _mesh_for(case, level)
    params = _params(cfg, mesh, nu, tau)
    dm = DofMap(mesh, cfg.k)
    S = build_schur(assemble(mesh, dm, params, "stokes_a"))
    P = build_preconditioner(cfg.precon, mesh, dm, params)
    sp = preconditioned_spectrum(P, S, cfg.spectrum_method)
    return dict(case=case, level=level, cells=mesh.n_cells, face_dofs=S.shape[0], nu=float(nu),
                tau=_fmt_tau(tau), eta=float(cfg.eta), k=cfg.k, precon=cfg.precon, lmin=sp.lmin, lmax=sp.lmax,
                amin=sp.amin, amax=sp.amax, kappa=sp.kappa, method=cfg.spectrum_method)


def run_spectrum(cfg, case="manufactured"):
    """Spectrum of the preconditioned reduced operator per sweep point."""
    if cfg.eta is None:
        cfg.eta = DEFAULT_ETA.get(case, 4.0) * cfg.k ** 2
    return _run_points(cfg, _spectrum_point, case)


def run_verify(cfg):
    """Run the verification suite; returns (report, exit status)."""
    from .verification import BaselineMissing, run_checks
    try:
        rep = run_checks(eta=16.0 if cfg.eta is None else cfg.eta, seed=cfg.seed, freeze=cfg.freeze,
                         baseline_path=cfg.baseline)
    except BaselineMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None, EXIT_BASELINE
    return rep, (EXIT_OK if rep.passed else EXIT_FAILURE)


# --- output ---------------------------------------------------------------------------

def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows, columns=CSV_COLUMNS):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.4g}"
    return str(v)


def _iters_cell(r):
    return f"{r['iters']}" + ("" if r["converged"] else "*")


def rows_to_markdown(rows, value=_iters_cell, title=None):
    """Markdown tables: a nu x tau grid per level when several pairs are swept, else a list."""
    out = [f"### {title}", ""] if title else []
    if not rows:
        return "\n".join(out + ["(no rows)", ""])
    levels = sorted({r["level"] for r in rows})
    nus = list(dict.fromkeys(r["nu"] for r in rows))
    taus = list(dict.fromkeys(str(r["tau"]) for r in rows))
    if len(nus) * len(taus) > 1:
        for lv in levels:
            sub = [r for r in rows if r["level"] == lv]
            out += [f"level {lv}, {sub[0]['cells']} cells, {sub[0]['face_dofs']} face DOFs", "",
                    "| nu \\ tau | " + " | ".join(taus) + " |", "|---" * (len(taus) + 1) + "|"]
            for nu in nus:
                cells = []
                for t in taus:
                    hit = [r for r in sub if r["nu"] == nu and str(r["tau"]) == t]
                    cells.append(value(hit[0]) if hit else "")
                out.append(f"| {_short(nu)} | " + " | ".join(cells) + " |")
            out.append("")
    else:
        cols = ["level", "cells", "face_dofs", "iters", "err_u_l2", "err_p_l2", "div_norm"]
        cols = [c for c in cols if any(r.get(c, "") != "" for r in rows)]
        out += ["| " + " | ".join(cols) + " |", "|---" * len(cols) + "|"]
        for r in rows:
            out.append("| " + " | ".join(_iters_cell(r) if c == "iters" else _short(r.get(c, "")) for c in cols)
                       + " |")
        out.append("")
    out.append("`*` marks a run that did not reach the tolerance.")
    return "\n".join(out) + "\n"


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


# --- argument parsing -----------------------------------------------------------------

def parse_levels(text):
    """``"4..6"``, ``"4,5,6"`` or ``"4"`` to a list of levels."""
    text = str(text).strip()
    try:
        if ".." in text:
            a, b = text.split("..")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ConfigError(f"empty level range {text!r}")
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse levels {text!r}") from None


def _levels_arg(text):
    try:
        return parse_levels(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(f"configuration error: {exc}") from None


def _list_arg(text):
    return [_num(v.strip()) for v in str(text).split(",")]


def build_parser():
    p = argparse.ArgumentParser(prog="hdgprec", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file with RunConfig fields; explicit options override it")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--case", choices=("manufactured", "cavity", "brinkman"))
        sp.add_argument("--levels", type=_levels_arg)
        sp.add_argument("--nu", type=_list_arg)
        sp.add_argument("--tau", type=_list_arg, help="comma list of numbers, or 'brinkman'")
        sp.add_argument("--eta", type=float)
        sp.add_argument("--k", type=int)
        sp.add_argument("--precon", choices=("bar", "hat"))
        sp.add_argument("--out", help="CSV output path ('-' for stdout)")
        sp.add_argument("--markdown", help="Markdown table output path")
        sp.add_argument("--workers", type=int)

    s = sub.add_parser("solve", help="MINRES solves over a sweep")
    common(s)
    s.add_argument("--tol", type=float)
    s.add_argument("--maxit", type=int)
    s.add_argument("--kappa", action="store_true", default=None, help="also compute the condition number")
    s.add_argument("--no-timings", dest="timings", action="store_false", default=None,
                   help="leave the seconds column empty (byte-reproducible output)")

    sp = sub.add_parser("spectrum", help="spectrum of the preconditioned reduced operator")
    common(sp)
    sp.add_argument("--method", dest="spectrum_method", choices=("dense", "iterative"))

    v = sub.add_parser("verify", help="verification suite against frozen baselines")
    v.add_argument("--freeze", action="store_true", default=None, help="write new baselines first")
    v.add_argument("--eta", type=float)
    v.add_argument("--seed", type=int)
    v.add_argument("--baseline", help="baseline JSON path (default: packaged file)")
    v.add_argument("--out", help="JSON report path; a Markdown summary is written next to it")
    return p


def config_from_args(args):
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    over = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command")}
    merged = dict(base, **over)
    if args.command == "verify":
        merged["case"] = "verify"
    elif args.command == "spectrum":
        merged.setdefault("case", "manufactured")
    return RunConfig.from_dict(merged)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2, the config-error code
        return exc.code
    try:
        cfg = config_from_args(args)
        if args.command == "verify":
            rep, status = run_verify(cfg)
            if rep is not None:
                md = rep.to_markdown()
                if cfg.out:
                    _write(cfg.out, rep.to_json() + "\n")
                    _write(str(Path(cfg.out).with_suffix(".md")), md)
                sys.stdout.write(md)
            return status
        if args.command == "spectrum":
            case = cfg.case
            rows = run_spectrum(RunConfig.from_dict(dict(asdict(cfg), case="spectrum")), case)
            _write(cfg.out, rows_to_csv(rows, SPECTRUM_COLUMNS))
            if cfg.markdown:
                _write(cfg.markdown, rows_to_markdown(rows, lambda r: f"{r['kappa']:.4g}", "kappa"))
            return EXIT_OK
        rows = run_brinkman(cfg) if cfg.case == "brinkman" else run_case(cfg)
        _write(cfg.out, rows_to_csv(rows))
        if cfg.markdown:
            _write(cfg.markdown, rows_to_markdown(rows, title=f"MINRES iterations, {cfg.case}"))
        return EXIT_OK if all(r["converged"] for r in rows) else EXIT_FAILURE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SingularBlockError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
