"""Coverage and regret of UCB1 against conformal policies in a small-gap problem.

Runs a reduced Monte-Carlo study of one built-in scenario and prints, per
policy, the optimal arm's interval coverage and width and the time-averaged
regret at the horizon with its 95% Monte-Carlo band.
"""

import argparse
import time

from conformal_bandits.harness import run_monte_carlo
from conformal_bandits.scenarios import builtin_scenarios, load_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="small_gap_gaussian", choices=builtin_scenarios())
    ap.add_argument("--M", type=int, default=50, help="replicates (the scenario file uses 1000)")
    ap.add_argument("--T", type=int, default=2000)
    args = ap.parse_args()

    sc = load_scenario(args.scenario)
    print(f"{sc.name}: means {list(sc.model.means)}, scale {sc.model.scale}, M={args.M}, T={args.T}")
    print(f"{'policy':<24}{'coverage %':>11}{'width':>8}{'regret@T':>10}   95% band")
    for label, spec in zip(sc.labels, sc.policies):
        t0 = time.perf_counter()
        s = run_monte_carlo(sc.model, spec, args.T, args.M, sc.seed, sc.feedback, sc.cp)
        print(
            f"{spec.describe():<24}{100 * s.coverage_mean[0]:>11.2f}{s.width_mean[0]:>8.3f}"
            f"{s.regret_mean[-1]:>10.4f}   [{s.regret_lo[-1]:.4f}, {s.regret_hi[-1]:.4f}]"
            f"  ({time.perf_counter() - t0:.0f}s)"
        )


if __name__ == "__main__":
    main()
