"""Pilot the hardened goal distribution."""
import logging, sys, time
logging.basicConfig(level=logging.ERROR)
from dialoglab import harness as H

variants = ("dqn", "lu", "lh", "lhu", "lhua")
seeds = (0, 1, 2)
aucs = {v: [] for v in variants}
for seed in seeds:
    for v in variants:
        t0 = time.time()
        state, curve = H.run_training(
            H.RunConfig(variant=v, seed=seed, episodes=150))
        a = H.auc(curve)
        aucs[v].append(a)
        srs = curve.column("eval_sr")
        lift = next((i + 1 for i, x in enumerate(srs) if x >= 0.5), -1)
        print("seed %d %-5s auc=%.4f lift@%-3d %.0fs" %
              (seed, v, a, lift, time.time() - t0), flush=True)
print(flush=True)
for v in variants:
    xs = aucs[v]
    print("%-5s mean=%.4f  per-seed: %s" %
          (v, sum(xs) / len(xs), " ".join("%.3f" % x for x in xs)), flush=True)
