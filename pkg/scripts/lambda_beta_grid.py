"""Final loss and accuracy over a grid of compensation strengths (lambda) at
beta = 0, then over momentum values (beta) at lambda = 0.2.

Usage: python scripts/lambda_beta_grid.py [--preset noniid-overlap] [--rounds 200]
"""
import argparse
import dataclasses

from flsim import load_config, run

LAMBDAS = (0.0, 0.2, 0.5, 0.8)
BETAS = (0.0, 0.2, 0.5, 0.8)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="noniid-overlap")
    ap.add_argument("--rounds", type=int, default=200)
    args = ap.parse_args()
    base = load_config(args.preset)
    base.rounds = args.rounds
    grid = [("lambda", lam, 0.0) for lam in LAMBDAS] + [("beta", beta, 0.2) for beta in BETAS]
    print(f"{'swept':<8}{'value':>7}{'final loss':>12}{'accuracy':>10}")
    for swept, value, fixed in grid:
        lam, beta = (value, 0.0) if swept == "lambda" else (fixed, value)
        config = dataclasses.replace(
            base, optimizer=dataclasses.replace(base.optimizer, lam=lam, beta=beta))
        last = run(config.validate()).rounds[-1]
        print(f"{swept:<8}{value:>7.1f}{last.train_loss:>12.5f}{last.eval_metric:>10.4f}")


if __name__ == "__main__":
    main()
