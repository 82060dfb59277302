"""Per-round time and saving for the light and heavy presets.

Usage: python scripts/timing_table.py [--rounds N]
"""
import argparse

from flsim import compare, load_config, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rounds", type=int, default=5)
    args = ap.parse_args()
    print(f"{'preset':<8}{'fedavg s/round':>16}{'overlap s/round':>17}{'saving':>9}")
    for name in ("light", "heavy"):
        logs = []
        for strategy in ("fedavg", "overlap"):
            config = load_config(f"{name}-{strategy}")
            config.rounds = args.rounds
            logs.append(run(config))
        rep = compare(*logs)
        print(f"{name:<8}{rep.baseline_mean_time:>16.2f}{rep.candidate_mean_time:>17.2f}"
              f"{rep.saving_percent:>8.2f}%")


if __name__ == "__main__":
    main()
