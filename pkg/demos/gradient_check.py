"""Finite-difference check of every hand-written gradient on a few seeds.

    python3 demos/gradient_check.py
"""

from mardpg import gradsuite

for name, per_seed in gradsuite.run_suite(seeds=range(3)).items():
    worst = max(r.max_error for r in per_seed.values())
    status = "ok" if all(r.passed for r in per_seed.values()) else "FAILED"
    print(f"{name:20s} worst relative error {worst:.2e}  {status}")
