"""
How much does a late frame cost in pixels?
==========================================

A camera frame and a laser profile are never captured at exactly the same
instant. While the vehicle moves, the delay turns into a displacement, the
displacement into an angle, and the angle into pixels. This script walks
through that chain for the three operating regimes of the rig.
"""

import math

from fishmap.colorizer import MARLIN, budget_table, error_budget, format_budget_table, kmh, profile_spacing

# walking pace along a facade 5 m away
speed = kmh(5.0)
print(f"vehicle speed: {speed:.3f} m/s")
print(f"profile spacing at 10 Hz: {100 * profile_spacing(speed, 10.0):.2f} cm")

# a 30 Hz camera is on average 1/120 s away from the nearest profile
b = error_budget(speed, 0.008, 5.0, MARLIN)
print(f"\n8 ms late: the rig moved {100 * b.displacement:.3f} cm, "
      f"the facade point shifted {math.degrees(b.angular_shift):.4f} deg, "
      f"which is {b.pixel_error:.3f} px on a {MARLIN.pixels_across} px fish-eye")

# the same arithmetic for every regime, with published figures alongside;
# rows whose published value does not follow from the formula carry a note
print()
print(format_budget_table(budget_table()))

# the error grows almost linearly with the delay
print("\ndelay (ms)  pixel error")
for ms in (1, 2, 4, 8, 16, 33, 66):
    print(f"{ms:>10}  {error_budget(speed, ms / 1e3, 5.0, MARLIN).pixel_error:8.3f}")
