"""
Physical baselines and the unseen-vehicle blind spot
====================================================

Kinematic models extrapolate the agents that are visible now. They are
accurate for them and blind to vehicles that have not entered the region yet.
Injecting random boundary vehicles (a Poisson protocol) helps unseen recall at
the cost of aggressiveness.
"""
from eomap.baselines import MODELS
from eomap.geometry import CriticalRegion
from eomap.metrics import format_table
from eomap.scene import Horizon
from eomap.trainer import DatasetSpec, build_split, evaluate

region, horizon = CriticalRegion.desk(), Horizon()
spec = DatasetSpec(n_train=1, n_val=60, seed=5, region=region, horizon=horizon)
val = build_split(spec, "val")
print(sum(s.has_unseen for s in val), "of", len(val), "scenes contain an unseen vehicle")

reports = [evaluate("oracle", val, region, horizon), evaluate("zeros", val, region, horizon)]
reports += [evaluate(m, val, region, horizon, name=m) for m in MODELS]
reports += [evaluate("cv", val, region, horizon, name="cv+poisson2", inject_lambda=2.0)]
print(format_table(reports))
