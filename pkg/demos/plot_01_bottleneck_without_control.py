"""
A motorway bottleneck without ramp metering
===========================================

Twenty cells of two-lane motorway, an on-ramp at cell 15 and a morning and an
afternoon ramp peak. Halfway through the day the road's capacity drops (think
rain), so the density at which flow peaks moves down too.

Run with ``python3 demos/plot_01_bottleneck_without_control.py``.
"""

import numpy as np

from ramplab import run_scenario, scenario_config
from ramplab.scenarios import congestion_episodes, demand_profile, empirical_critical

###############################################################################
# The demand. Mainstream traffic is flat until late in the day, the ramp has
# two trapezoidal peaks.

for t in (0, 25, 60, 140, 200, 230):
    d_main, d_ramp = demand_profile(t)
    print(f"t={t:5.0f} min  mainstream {d_main:6.0f} veh/h  ramp {d_ramp:6.0f} veh/h")

###############################################################################
# No control: the ramp discharges up to its capacity.

s1 = run_scenario(scenario_config("S1"))
print(f"\nTTS without control: {s1.tts:.1f} veh.h")

###############################################################################
# Each ramp peak pushes the bottleneck cell well past its critical density and
# the slow-down travels upstream.

for ep in congestion_episodes(s1):
    print(
        f"jam {ep.start_min:5.1f}-{ep.end_min:5.1f} min, peak {ep.peak_density:.1f} veh/km/lane, "
        f"{ep.spill_cells} cells of spill-back"
    )

###############################################################################
# A coarse space-time picture of speed, one row every 15 minutes.
# ``#`` is below 50 km/h, ``+`` below 80, ``.`` anything faster.

glyph = np.array([".", "+", "#"])
for k in range(0, len(s1.w_ramp), 90):
    v = s1.v[k]
    row = "".join(glyph[(v < 80).astype(int) + (v < 50).astype(int)])
    print(f"{s1.t_min[k]:5.0f} min |{row}|")

###############################################################################
# Where does the bottleneck actually deliver its highest flow? That density is
# what a metering controller should aim for.

c1, c2 = empirical_critical(s1)
print(f"\nbest density at cell 15: {c1:.2f} before the drop, {c2:.2f} after")
