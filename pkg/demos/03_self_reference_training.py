"""
A short self-reference distillation run
=======================================

Epoch 1 trains on photometric error alone. From epoch 2 the previous
epoch's snapshot is loaded as a teacher, its depths are filtered by the
multiview check and used as extra supervision. A few minutes on one core.
"""
import logging

from srdepth.distill import TrainConfig, train
from srdepth.synthscene import generate_dataset

logging.basicConfig(level=logging.WARNING)

train_set = generate_dataset(n_scenes=6, n_triplets=5, size=(32, 96), seed=100)
val_set = generate_dataset(n_scenes=2, n_triplets=3, size=(32, 96), seed=200)
print("%d training triplets, %d validation triplets" % (len(train_set), len(val_set)))

history = []


def report(state):
    row = state.stats
    active = state.teacher is not None and row["L_d"] > 0
    teacher = "epoch %d snapshot" % state.teacher.epoch if active else "-"
    print("epoch %d  teacher %-16s  L_pe %.4f  L_d %.4f  mask %.2f  val abs_rel %.4f"
          % (state.epoch, teacher, row["L_pe"], row["L_d"], row["mask_coverage"], row["val_abs_rel"]))


for gamma in (0.1, 0.0):
    print("\ngamma = %.1f" % gamma)
    cfg = TrainConfig(epochs=3, batch_size=2, lr=1e-3, gamma=gamma, seed=0)
    result = train(train_set.triplets, cfg, val=val_set.triplets, on_epoch=report)
    history.append(result.history[-1]["val_abs_rel"])

print("\nfinal val abs_rel: distillation %.4f, baseline %.4f" % tuple(history))
