"""Time-step convergence of the deterministic solver and of the closed-loop value identity.

Prints P(0) error of the ODE solver on the scalar benchmark, and the gap
between the Monte Carlo closed-loop cost and 1/2 <P(0) eta, eta> on the
heat instances (left-endpoint cost rule, so the gap shrinks like dt).
"""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from conftest import heat_deterministic, heat_noisy, scalar_benchmark  # noqa: E402

from stochlq.riccati import solve_riccati_ode  # noqa: E402
from stochlq.verify import check_value_identity  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("scalar ODE: steps, |P(0) - 0.5|")
    for steps in (10, 20, 50, 100, 1000):
        P0 = solve_riccati_ode(scalar_benchmark(steps=steps)).P0()[0, 0]
        print(f"  {steps:5d}  {abs(P0 - 0.5):.3e}")

    for name, make in (("heat N=8", lambda s: heat_deterministic(N=8, steps=s)),
                       ("noisy N=4", lambda s: heat_noisy(N=4, steps=s))):
        print(f"{name}: steps, mode, MC cost, value, rel gap")
        for steps in (50, 100, 200, 400):
            pr = make(steps)
            sol = solve_riccati_ode(pr)
            for mode in (0, pr.modes - 1):
                eta = np.eye(pr.modes)[mode]
                rep = check_value_identity(pr, sol.theta, sol.P, eta, args.paths, args.seed)
                print(f"  {steps:5d}  e{mode + 1}  {rep.lhs:.5f}+-{rep.lhs_se:.1e}  {rep.rhs:.5f}  "
                      f"{(rep.lhs - rep.rhs) / rep.rhs:+.3f}")


if __name__ == "__main__":
    main()
