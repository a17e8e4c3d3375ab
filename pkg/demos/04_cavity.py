"""Lid-driven cavity on (-1, 1)^2 with lid velocity (1 - x^4, 0).

This is a qualitative run: the mesh is a structured refinement of 8192
cells, much coarser than a production cavity mesh, and only the
iteration counts and the discrete incompressibility are reported.
"""
from hdgprec.cli import RunConfig, run_case

rows = run_case(RunConfig(case="cavity", levels=[4, 5, 6], eta=24.0, precon="hat", timings=True))
print("qualitative comparison only (structured mesh, reduced size)")
print(f"{'cells':>6} {'face dofs':>10} {'iters':>6} {'|div u_h|':>10} {'seconds':>8}")
for r in rows:
    print(f"{r['cells']:>6} {r['face_dofs']:>10} {r['iters']:>6} {r['div_norm']:>10.1e} {r['seconds']:>8}")
