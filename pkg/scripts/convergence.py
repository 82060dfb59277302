"""Final loss and rounds-to-baseline for FedAvg, compensated overlap and
overlap with server momentum on the Non-IID presets, over several seeds.

Usage: python scripts/convergence.py [--seeds 5] [--rounds 500]
"""
import argparse
import dataclasses

from flsim import load_config, rounds_to_reach, run

PRESETS = ("noniid-fedavg", "noniid-overlap", "noniid-overlap-nag")


def seeded(name, seed, rounds):
    config = load_config(name)
    config.rounds = rounds
    config.seeds = dataclasses.replace(config.seeds, data=seed, partition=seed, init=seed,
                                       sampling=seed, jitter=seed)
    return config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--rounds", type=int, default=500)
    args = ap.parse_args()
    print("seed  " + "".join(f"{p:>22}" for p in PRESETS))
    for seed in range(args.seeds):
        logs = [run(seeded(p, seed, args.rounds)) for p in PRESETS]
        target = logs[0].rounds[-1].train_loss
        cells = [f"{log.rounds[-1].train_loss:.5f} @{rounds_to_reach(log, target):>4}"
                 for log in logs]
        print(f"{seed:<6}" + "".join(f"{c:>22}" for c in cells))
    print("cells: final training loss @ first round reaching the FedAvg final loss")


if __name__ == "__main__":
    main()
