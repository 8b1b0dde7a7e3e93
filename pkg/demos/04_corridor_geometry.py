"""Registration and corridor geometry walkthrough.

Aligns three needle marks against the reference lines, builds the corridor
cylinder from the plan, and probes clearance and depth along a simulated
drill path that drifts off axis.
"""

import numpy as np

from pednav import (
    CameraPlacement,
    CalibrationModel,
    SurgicalPlan,
    alignment_residual,
    build_cylinder,
    clearance,
    register,
)

plan = SurgicalPlan(
    line_x=(26.0, 29.6, 33.2),
    entry_point=(29.6, 37.0),
    axis_angle_deg=12.0,
    canal_min_width_cm=0.7,
    canal_length_cm=4.0,
    tip_offset_cm=3.0,
)
calib = CalibrationModel.from_samples([10.8], CameraPlacement(v=56.0, h=77.0))

print("registration: needles must sit on the reference lines")
for offsets in [(0.0, 0.0, 0.0), (0.03, -0.05, 0.08), (0.05, 0.10, 0.20)]:
    needles = [((x + o) * 10.8, 150.0 + 9 * i) for i, (x, o) in enumerate(zip(plan.line_x, offsets))]
    residual = alignment_residual(needles, plan, calib)
    reg = register(needles, plan, calib)
    print(f"  offsets {offsets} cm -> residual {residual:.3f} cm, finalized: {reg.finalized}")

cyl = build_cylinder(plan)
print(
    f"\ncorridor: base {np.round(cyl.base_center, 2)}, axis {np.round(cyl.axis_dir, 3)}, "
    f"radius {cyl.radius} cm, height {cyl.height} cm"
)

print("\ndrill path probe (drifts 0.09 cm sideways per cm of depth):")
normal = np.array((-cyl.axis_dir[1], cyl.axis_dir[0], 0.0))
print(f"  {'depth in':>8} | {'measured':>8} | {'clearance':>9} | inside")
for t in np.linspace(0.0, 4.0, 9):
    p = cyl.base_center + t * cyl.axis_dir + 0.09 * t * normal
    rc, depth, inside = clearance(p, cyl)
    print(f"  {t:8.2f} | {depth:8.2f} | {rc:9.3f} | {inside}")
print("(clearance goes negative exactly where the wall would be breached)")
