"""
ALINEA with a hand-picked set-point
===================================

ALINEA nudges the ramp rate up or down in proportion to how far the measured
density sits from a set-point. The catch is choosing the set-point: the best
value moves when the capacity drops.
"""

from ramplab import run_suite

###############################################################################
# Run the uncontrolled baseline and three fixed set-point strategies:
# switching 33 to 28 at the right moment, 33 all day, 28 all day.

res = run_suite(["S1", "S2", "S3a", "S3b"])

print(f"{'run':<6}{'TTS':>10}{'gain':>9}{'peak ramp queue':>18}")
for sid, r in res.items():
    print(f"{sid:<6}{r.tts:>10.1f}{r.improvement:>8.2f}%{r.peak_queue:>14.1f} veh")

###############################################################################
# Metering trades a ramp queue for a free-flowing mainline. Here is the ramp
# queue and the command during the first peak of S2, every 5 minutes.

s2 = res["S2"]
for k in range(90, 300, 30):
    print(
        f"t={s2.t_min[k]:5.1f}  rho15={s2.rho[k, 14]:5.1f}  u={s2.u_cmd[k]:7.1f} veh/h  "
        f"queue={s2.w_ramp[k]:5.1f} veh"
    )
