"""Train the pattern-plus-precoder network briefly and compare it with the baselines.

A short run (few samples, few epochs) so it finishes in well under a minute;
the acceptance suite runs the full desk-scale schedule.
"""

import numpy as np

from rpahbf import PrHbfNetConfig, SystemConfig, evaluate, generate_samples, train

cfg = SystemConfig()
train_set = generate_samples(cfg, 512, 1)
val_set = generate_samples(cfg, 64, 2)

result = train(train_set, val_set, cfg, PrHbfNetConfig(epochs=5), log=print)
print(f"validation SE before training {result.history.initial_val_se:.3f}, best {result.best_val_se:.3f}")

for solver in ("fixed", "random", "greedy", "prhbfnet"):
    r = evaluate(val_set, solver, cfg, result.model)
    print(f"{solver:>9}: mean {r.mean:7.3f}  std {r.std:6.3f}  {1e3 * r.seconds / r.n:7.3f} ms/sample")

print("chosen patterns, first three samples:")
print(np.array(evaluate(val_set[:3], "prhbfnet", cfg, result.model).patterns))
