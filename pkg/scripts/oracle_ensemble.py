"""Compare the LMI value of J0 with a frequency sweep of the weighted
H-infinity norm and check J0 <= J on a seeded random ensemble of
impulse-free descriptor plants.

    python3 scripts/oracle_ensemble.py [--count N] [--seed S]
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from conftest import random_plant  # noqa: E402
from dhinf import Measure, compute_measure, freq_sweep_j0, reduce  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    worst, ordered = 0.0, True
    print(f"{'n':>3} {'r':>3} {'J0 (LMI)':>12} {'J0 (sweep)':>12} {'rel. diff':>10} {'J':>12}")
    for _ in range(args.count):
        plant, weights = random_plant(rng)
        sys_ = reduce(plant, weights).open_loop()
        j0 = compute_measure(sys_, weights, Measure.J0)
        j = compute_measure(sys_, weights, Measure.J)
        sweep = freq_sweep_j0(sys_, weights)
        rel = abs(sweep - j0.value) / j0.value
        worst = max(worst, rel)
        ordered &= j0.gamma_infeasible <= j.gamma_feasible
        print(f"{plant.n:>3} {sys_.order:>3} {j0.value:>12.6f} {sweep:>12.6f} {rel:>10.1e} {j.value:>12.6f}")
    print(f"worst relative discrepancy {worst:.1e}; J0 <= J on all plants: {ordered}")
    return 0 if worst <= 1e-4 and ordered else 1


if __name__ == "__main__":
    sys.exit(main())
