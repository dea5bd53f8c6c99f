"""Meta-train the LSTM optimizer and race it against hand-tuned baselines.

Run:  python demos/04_learned_optimizer.py          (quick budget)
      python demos/04_learned_optimizer.py --full   (shipped recipe)
"""

import sys

import numpy as np

from epturbo.metaopt import (
    QuadraticTask,
    adam_minimize,
    apply_optimizer,
    meta_train,
    meta_train_recipe,
)

rng = np.random.default_rng(2)
if "--full" in sys.argv:
    theta, curve = meta_train_recipe(rng=rng)
else:
    theta, curve = meta_train(epochs=1500, lr=3e-3, rng=rng)
print(f"meta-training loss: {curve[0]:.2f} -> {np.mean(curve[-50:]):.2f}")

# Fresh quadratic tasks the optimizer has never seen. Twenty update steps
# for everyone: the learned rule, plain gradient descent, and Adam.
eval_rng = np.random.default_rng(99)
table = []
for _ in range(200):
    task = QuadraticTask.sample(5, eval_rng)
    lstm = apply_optimizer(theta, task.value, task.grad, np.ones(5), 20)
    adam = adam_minimize(task.value, task.grad, np.ones(5), 20, lr=0.1)
    gd_best = np.inf
    for lr in (0.1, 0.03, 0.01):
        b = np.ones(5)
        best = task.value(b)
        for _ in range(20):
            b = b - lr * task.grad(b)
            v = task.value(b)
            if np.isfinite(v):
                best = min(best, v)
        gd_best = min(gd_best, best)
    table.append((lstm.best_loss, adam.best_loss, gd_best))

table = np.array(table)
names = ("LSTM optimizer", "Adam(0.1)", "best fixed GD")
print(f"\nmedian loss after 20 steps on 200 held-out tasks (start f = "
      f"{np.median([QuadraticTask.sample(5, np.random.default_rng(7)).value(np.ones(5)) for _ in range(1)]):.1f}):")
for i, name in enumerate(names):
    print(f"  {name:>15}: {np.median(table[:, i]):.3f}")
wins_gd = np.mean(table[:, 0] <= table[:, 2]) * 100
wins_adam = np.mean(table[:, 0] <= table[:, 1]) * 100
print(f"\nLSTM matches or beats best fixed GD on {wins_gd:.0f}% of tasks")
print(f"LSTM matches or beats Adam(0.1)     on {wins_adam:.0f}% of tasks")
