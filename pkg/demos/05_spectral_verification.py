"""Measured stability constants behind the iteration counts.

Runs the verification suite against the packaged baselines: condition
numbers of the preconditioned face operator, the inf-sup constant of the
coupling, the face-norm conditions, auxiliary coercivity and boundedness
constants and the Schur complement sandwich property.  Takes about a
minute.
"""
import sys

from hdgprec.verification import run_checks

report = run_checks(eta=16.0)
print(report.to_markdown())
print("all checks passed" if report.passed else "some checks FAILED")
sys.exit(0 if report.passed else 1)
