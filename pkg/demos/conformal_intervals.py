"""Conformal intervals for one arm as its history grows.

Feeds skewed rewards to an arm one at a time and prints the CQR interval,
its width and the running coverage of the next reward, with and without the
adaptive miscoverage update.
"""

import argparse

import numpy as np

from conformal_bandits.conformal import ArmState, aci_update, predict_interval


def run(n: int, alpha: float, seed: int, aci: bool) -> None:
    rng = np.random.default_rng(seed)
    rewards = rng.gamma(2.0, 0.05, n) - 0.1  # right-skewed, mean zero
    state = ArmState(0, alpha=alpha)
    hits = tried = 0
    print(f"{'n':>5} {'lower':>9} {'upper':>9} {'width':>7} {'alpha_t':>8} {'coverage':>9}")
    for t, y in enumerate(rewards):
        if state.pull_count >= 2:
            iv = predict_interval(state, alpha=None if aci else alpha)
            covered = y in iv
            hits += covered
            tried += 1
            if aci:
                state = aci_update(state, covered, target_alpha=alpha)
            if t in (5, 10, 25, 50, 100, 250, 500, 1000, 2000) or t == n - 1:
                print(f"{t:>5} {iv.lower:>9.4f} {iv.upper:>9.4f} {iv.width:>7.4f} {state.aci_alpha:>8.4f} {hits / tried:>9.4f}")
        state.add(y)
    print(f"target coverage {1 - alpha:.2f}; interval is asymmetric because the rewards are skewed")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--alpha", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-aci", action="store_true")
    args = ap.parse_args()
    run(args.n, args.alpha, args.seed, not args.no_aci)


if __name__ == "__main__":
    main()
