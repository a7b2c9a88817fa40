"""Train the baseline and the auxiliary variants on a small dataset and compare.

    python demos/04_train_compare.py            # about a minute
    python demos/04_train_compare.py --full     # full-size setting, several minutes per run
"""

import sys

from auxseg.data import make_splits
from auxseg.models import build, param_count
from auxseg.trainer import TrainConfig, train

full = "--full" in sys.argv
n_train, n_val, epochs = (512, 128, 30) if full else (256, 64, 12)
train_set, val_set = make_splits(7, n_train, n_val, 32, 48)

for kind in ("segnet", "auxnet", "fusenet"):
    m = build(kind)
    print(f"{kind:8s} params: training {param_count(m):6d}, inference {param_count(m, 'inference'):6d}")

print(f"\n{n_train} train / {n_val} val scenes, {epochs} epochs")
for variant in ("segnet", "aux400", "auxtwb", "auxftwb"):
    model, report = train(TrainConfig(variant=variant, epochs=epochs, seed=1), train_set, val_set)
    best = report.rows[report.best_epoch - 1]
    ious = " ".join("  -  " if v is None else f"{v:.3f}" for v in best.val_iou)
    print(f"{variant:8s} best epoch {report.best_epoch:2d}  val mIoU {best.val_miou:.4f}  per class {ious}")
