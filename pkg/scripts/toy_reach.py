"""Train PPO on the 2-link reach toy and print the learning curve.

A quick sanity check of the trainer that needs no physics: the mean step
reward should climb well above its epoch-0 value within a few seconds.
"""

import argparse

import numpy as np

from handgrid.envs import ReachEnv
from handgrid.trainer import reach_train_config, train


def run(epochs, seed, every):
    def progress(epoch, reward, successes, report):
        if epoch % every == 0 or epoch == epochs - 1:
            print(f"epoch {epoch:4d}  mean reward {reward:.4f}  value loss {report.get('value_loss', float('nan')):.4f}")

    res = train(None, None, None, reach_train_config(epochs, seed), env_factory=lambda i: ReachEnv(), progress=progress)
    curve = np.array([r for _, r, _ in res.curve])
    tail = curve[-10:].mean()
    print(f"epoch-0 {curve[0]:.4f}  last-10 mean {tail:.4f}  ratio {tail / curve[0]:.2f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=20)
    a = ap.parse_args()
    run(a.epochs, a.seed, a.every)
