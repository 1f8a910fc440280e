"""P(0) from the ODE solver, the direct regression sweep and the feedback fixed point."""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from conftest import heat_deterministic, heat_noisy, scalar_benchmark, wonham_random  # noqa: E402

from stochlq.riccati import solve_riccati_bsde_direct, solve_riccati_ode, theta_fixed_point  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cases = {"scalar": scalar_benchmark(steps=args.steps), "heat N=8": heat_deterministic(N=8, steps=args.steps),
             "noisy N=4": heat_noisy(N=4, steps=args.steps), "wonham": wonham_random(steps=args.steps)}
    for name, pr in cases.items():
        ref = solve_riccati_ode(pr).P0() if pr.deterministic else None
        for label, fn in (("direct", solve_riccati_bsde_direct), ("fixed-point", theta_fixed_point)):
            t0 = time.perf_counter()
            sol = fn(pr, paths=args.paths, seed=args.seed)
            secs = time.perf_counter() - t0
            P0 = sol.P0()
            gap = "" if ref is None else f"  max|dP0| {np.abs(P0 - ref).max():.2e}"
            iters = sol.diagnostics.get("iterations", 1)
            print(f"{name:10s} {label:12s} P0[0,0]={P0[0, 0]:.5f}{gap}  iters={iters}  {secs:.1f}s")


if __name__ == "__main__":
    main()
