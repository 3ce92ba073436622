"""Memorize fifty straight walkers and watch the error melt.

Quick sanity run for the deterministic trainer: a batch of single-walker
scenes marching along +x is about the easiest dataset imaginable, so the
average displacement error should fall well under 5 cm within a couple of
hundred epochs. Prints a short convergence table and the final report.

    python demos/overfit_straight_walkers.py --epochs 60
"""

import argparse
import time

from scantraj import data as sd
from scantraj import model as sm
from scantraj import training as tr


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    cfg = sm.ModelConfig(variant="vanilla")
    scenes = sd.synth_scenarios("straight", args.scenes, seed=args.seed)
    print(f"{len(scenes)} scenes, {cfg.obs_len} observed + "
          f"{cfg.pred_len} predicted steps each")

    state, start = None, time.monotonic()
    stage = max(args.epochs // 6, 1)
    for upto in range(stage, args.epochs + 1, stage):
        conf = tr.TrainConfig(batch_size=32, lr=args.lr, epochs=upto, seed=1)
        state, curve = tr.train_deterministic(scenes, cfg, conf, state=state)
        report = tr.evaluate(cfg, state.params, scenes, k=1)
        print(f"epoch {state.epoch:4d}  loss {curve[-1][2]:10.6f}  "
              f"ade {report.ade:8.5f}  fde {report.fde:8.5f}  "
              f"[{time.monotonic() - start:5.1f}s]")

    print()
    print(tr.evaluate(cfg, state.params, scenes, k=1).to_csv(), end="")


if __name__ == "__main__":
    main()
