"""
Filtering planned trajectories with an earliest occupancy map
=============================================================

A candidate ego trajectory is a list of (future step, footprint pixels). It
is unsafe when some footprint pixel may already be occupied by the time the
ego gets there. A margin makes the check stricter.
"""
import numpy as np

from eomap.geometry import CriticalRegion, box_pixels
from eomap.occupancy import earliest_occupancy
from eomap.planner import CandidateTrajectory, filter_safe
from eomap.scene import GeneratorConfig, Horizon, synth_generate

region, horizon = CriticalRegion.desk(), Horizon()
scene = synth_generate(GeneratorConfig(n_scenes=1, templates=("cross",)), seed=6)[0]
E = earliest_occupancy(scene, region, horizon).data


###############################################################################
# Straight-ahead candidates at four speeds, from standing still to 12 m/s. The
# ego box is 4.5 x 2 m and the ego frame has +y forward.
def candidate(speed, name):
    steps = list(range(1, horizon.T + 1))
    fps = [np.stack(box_pixels(region, 0.0, speed * s * 0.1, np.pi / 2, 4.5, 2.0), axis=1)
           for s in steps]
    return CandidateTrajectory(steps, fps, name)


cands = [candidate(v, f"{v:g} m/s") for v in (0.0, 4.0, 8.0, 12.0)]

###############################################################################
# At 8 m/s the ego reaches the crossing lane around the time crossing traffic
# does. At 12 m/s it gets there 0.7 s sooner, ahead of that traffic, and only fails once
# the margin asks for more slack than that.
for margin in (0, 3, 8):
    safe, unsafe = filter_safe(cands, E, margin)
    print(f"margin {margin}: safe {[c.name for c in safe]}")
    for c, k in unsafe:
        print(f"   {c.name} conflicts at step {k.step}, cell {k.cell}")
