"""
Traffic model of a single PETC loop
===================================

A periodic event-triggered loop checks its triggering condition every h
seconds and samples when the condition fires or when the heartbeat
``kmax`` expires.  The sequence of inter-sample times depends only on the
direction of the sampled state, so the state space splits into cones
labelled by the next few inter-sample times.  This script builds those
cones for a planar loop and prints the resulting finite model.
"""
import numpy as np

from etctraffic import LtiPlant, PetcLoop, QuadraticTrigger, build_traffic_model, relative_trigger
from etctraffic.abstraction import region_labels
from etctraffic.io import export_uppaal

###############################################################################
# The loop: an unstable plant under state feedback, sampled when the error
# exceeds 5 % of the state, i.e. |x - x_held|^2 > 0.05 |x|^2.

plant = LtiPlant([[-0.5, 0], [0, 3.5]], [[1], [1]], [[1.02, -5.62]])
loop = PetcLoop(plant, QuadraticTrigger(relative_trigger(2, 0.05), h=0.01, kmax=20))

###############################################################################
# Walk once around the unit circle and record the first inter-sample time.
# Each run of equal values is an arc of one depth-1 region.

theta = np.linspace(0, np.pi, 721)
ks = region_labels(np.column_stack([np.cos(theta), np.sin(theta)]), loop, 1)[:, 0]
cuts = np.flatnonzero(np.diff(ks)) + 1
for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, len(ks)]):
    print(f"angle {np.degrees(theta[lo]):6.1f} .. {np.degrees(theta[hi - 1]):6.1f} deg: k = {ks[lo]}")

###############################################################################
# Depth 1 keeps one inter-sample time per region; depth 2 splits each
# region by the next one too, which removes spurious transitions.

for depth in (1, 2):
    model = build_traffic_model(loop, depth)
    print(f"\ndepth {depth}: {len(model.states)} regions, {len(model.edges)} transitions")
    for x in model.states[:6]:
        print(f"  {x} -> {sorted({y for y in model.post(x, x[0])})}")

###############################################################################
# The model is a timed automaton with one clock; UPPAAL reads this export.

xml = export_uppaal(build_traffic_model(loop, 1))
print("\n" + "\n".join(xml.splitlines()[:14]))
