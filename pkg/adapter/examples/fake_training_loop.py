#!/usr/bin/env python3
"""Scripted stand-in for a real training loop, wired through the adapter.

Accepts the harness launch arguments and reports a saturating accuracy
curve; checks for the cooperative stop command between epochs.
"""

import argparse
import math
import sys

from traineff_adapter import AdapterSession


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=1)
    parser.add_argument("--task", default="fake")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-epochs", type=int, default=10_000)
    args = parser.parse_args()

    session = AdapterSession()
    train_acc = eval_acc = 0.0
    for epoch in range(args.max_epochs):
        if session.poll_stop():
            break
        # pretend to train for one epoch
        train_acc = 0.95 * (1.0 - math.exp(-(epoch + 1) / (3.0 * args.size)))
        eval_acc = 0.97 * train_acc
        session.on_epoch_end(train_acc, eval_acc)
    session.final(train_acc, eval_acc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
