"""Mesh-independence of the preconditioned MINRES iteration count.

The manufactured Stokes problem (nu = tau = 1, k = 2, eta = 16) is solved
on four uniform refinements with both face preconditioners.  The
iteration counts stay flat while the velocity error drops at third order.
"""
import numpy as np

from hdgprec.cli import RunConfig, run_case

LEVELS = [3, 4, 5, 6]

rows = {kind: run_case(RunConfig(levels=LEVELS, eta=16.0, precon=kind, timings=False)) for kind in ("hat", "bar")}

print(f"{'cells':>6} {'face dofs':>10} {'hat':>5} {'bar':>5} {'|u-u_h|':>11} {'rate':>6} {'|div u_h|':>10}")
prev = None
for r_hat, r_bar in zip(rows["hat"], rows["bar"]):
    err = r_hat["err_u_l2"]
    rate = "" if prev is None else f"{np.log2(prev / err):.2f}"
    prev = err
    print(f"{r_hat['cells']:>6} {r_hat['face_dofs']:>10} {r_hat['iters']:>5} {r_bar['iters']:>5} "
          f"{err:>11.3e} {rate:>6} {r_hat['div_norm']:>10.1e}")
