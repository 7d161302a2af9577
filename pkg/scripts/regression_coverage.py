"""Monte Carlo coverage of HAC intervals on the contemporaneous return equation.

Simulates the equation with known coefficients and reports, per coefficient,
how often the estimate lies within ``--width`` HAC standard errors of the
truth.  Classical OLS intervals on the same draws are shown for reference.

    python3 scripts/regression_coverage.py --replications 1000
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from simulation import TRUE_COEF, simulate_store  # noqa: E402

from memealert.econometrics import AR_CONTEMPORANEOUS, build_design, ols_hac  # noqa: E402


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--replications", type=int, default=200)
    parser.add_argument("--n-obs", type=int, default=166)
    parser.add_argument("--width", type=float, default=2.0)
    parser.add_argument("--seed", type=int, default=2021)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    hac = np.zeros(len(TRUE_COEF))
    classical = np.zeros(len(TRUE_COEF))
    for _ in range(args.replications):
        d = build_design(simulate_store(rng, args.n_obs), AR_CONTEMPORANEOUS)
        truth = np.array([TRUE_COEF[n] for n in d.names])
        res = ols_hac(d.X, d.y)
        hac += np.abs(res.coef - truth) <= args.width * res.se
        s2 = res.resid @ res.resid / (len(d.y) - d.X.shape[1])
        se = np.sqrt(np.diag(s2 * np.linalg.inv(d.X.T @ d.X)))
        classical += np.abs(res.coef - truth) <= args.width * se
    print(f"{'coefficient':18} {'hac':>6} {'ols':>6}")
    for name, h, c in zip(d.names, hac, classical):
        print(f"{name:18} {h / args.replications:6.3f} {c / args.replications:6.3f}")
    print(f"{'mean':18} {hac.mean() / args.replications:6.3f} "
          f"{classical.mean() / args.replications:6.3f}")


if __name__ == "__main__":
    main()
