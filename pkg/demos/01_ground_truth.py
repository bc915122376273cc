"""
Ground truth from a synthetic scene
===================================

Generate one intersection scene, render its history raster, and build the
two training targets: the earliest occupancy map E and the unseen mask M.
Images land in ``demo_out/``.
"""
import os

import numpy as np

from eomap import io
from eomap.geometry import CriticalRegion
from eomap.occupancy import earliest_occupancy, unseen_mask
from eomap.raster import rasterize_history
from eomap.scene import GeneratorConfig, Horizon, synth_generate, unseen_agent_ids

out = "demo_out"
os.makedirs(out, exist_ok=True)
region, horizon = CriticalRegion.desk(), Horizon()

###############################################################################
# Ask the generator for scenes that always contain an unseen vehicle, and pick
# the first one.
scene = synth_generate(GeneratorConfig(n_scenes=1, unseen_prob=1.0), seed=3)[0]
print(scene.id, "agents:", [a.id for a in scene.agents])

###############################################################################
# The raster has five channels. History frames fade with age, so the newest
# footprint of each agent is the brightest.
img = rasterize_history(scene, region, horizon)
io.write_ppm(os.path.join(out, "raster.ppm"), img.to_rgb())

###############################################################################
# E holds, per pixel, the first future step at which it is occupied. Off-road
# pixels are 0, pixels never reached in the horizon hold T.
E = earliest_occupancy(scene, region, horizon).data
print("E: off-road", np.mean(E == 0).round(3), "free", np.mean(E == horizon.T).round(3))
io.write_pgm(os.path.join(out, "eom.pgm"), io.eom_to_gray(E, horizon.T))

###############################################################################
# The unseen mask marks where vehicles that are not visible now will drive.
ids = unseen_agent_ids(scene, region, horizon)
M = unseen_mask(scene, region, horizon, ids).data
print("unseen vehicles:", sorted(ids), "mask pixels:", int(M.sum()))
io.write_pgm(os.path.join(out, "unseen.pgm"), io.mask_to_gray(M))
