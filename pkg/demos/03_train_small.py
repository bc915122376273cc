"""
Training the safety-aware network (small)
=========================================

A short run on a few hundred scenes, enough to watch the loss terms move and to
compare the model against a physical baseline. The full desk experiment is
``tests/test_acceptance.py``; it takes about half an hour per model.
"""
import logging

from eomap.metrics import format_table
from eomap.net import NetConfig
from eomap.trainer import DatasetSpec, RunConfig, build_split, evaluate, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

spec = DatasetSpec(n_train=300, n_val=60, seed=0)
cfg = RunConfig(dataset=spec, net=NetConfig(base_channels=4), epochs=3, lr=1e-3)
train_set, val_set = build_split(spec, "train", keep_scenes=False), build_split(spec, "val")

###############################################################################
# ``progress`` is called after every epoch with the log rows so far.
def show(epoch, rows):
    last = [r for r in rows if r["epoch"] == epoch]
    mean = {k: sum(r[k] for r in last) / len(last) for k in ("L_rec", "L_h", "L_s", "L_u")}
    print(f"epoch {epoch}: " + "  ".join(f"{k}={v:.4g}" for k, v in mean.items()))


result = train(cfg, train_set, run_dir="demo_out/run", progress=show)

###############################################################################
# Compare with constant velocity on the validation split.
reports = [evaluate(result.net, val_set, spec.region, spec.horizon, name="unet"),
           evaluate("cv", val_set, spec.region, spec.horizon, name="cv")]
print(format_table(reports))
