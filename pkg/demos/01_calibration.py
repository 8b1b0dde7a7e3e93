"""Camera calibration walkthrough.

Estimates the camera constant from marker-displacement samples, backs world
displacements out of pixel measurements, and fits a full pixel-to-world map
from a rendered dot grid (including a perspective-tilted one).
"""

import math

import numpy as np

from pednav import (
    CameraPlacement,
    CalibrationModel,
    DisplacementSample,
    GridSpec,
    PlanarMap,
    estimate_focal,
    fit_planar_map,
    pixels_to_world,
    render_grid,
)

# One fixed camera position: 56 cm above, 77 cm to the side of the target.
placement = CameraPlacement(v=56.0, h=77.0)
print(f"camera placement: V={placement.v} cm, H={placement.h} cm")
print(f"  axial distance D = {placement.d:.2f} cm, elevation = {placement.theta_deg:.2f} deg")

# Displacement samples: the marker moved a known amount in world cm while its
# image moved a measured amount in pixels. The ratio Pd/Rd times D gives the
# camera constant.
samples = [
    DisplacementSample(world_a=(16.4, 10.6), world_b=(15.0, 9.4), pixel_a=(422, 429), pixel_b=(406, 441)),
    DisplacementSample(world_a=(15.0, 11.9), world_b=(14.0, 10.2), pixel_a=(405, 416), pixel_b=(393, 433)),
    DisplacementSample(world_a=(7.7, 11.8), world_b=(9.0, 10.4), pixel_a=(311, 424), pixel_b=(327, 437)),
]
est = estimate_focal(samples, placement)
print(f"\n{len(samples)} displacement samples:")
for i, (r, fi) in enumerate(zip(est.ratios, est.per_sample_f)):
    print(f"  sample {i}: Pd/Rd = {r:6.3f} px/cm  ->  f = {fi:7.1f}")
print(f"mean f = {est.f:.1f}  (ratio spread {est.ratio_spread:.3f})")

calib = CalibrationModel.from_samples([s.ratio for s in samples], placement)
print(f"\nback-calculating world displacements with f = {calib.f:.1f}:")
for pd in (20.0, 20.6, 12.6):
    print(f"  Pd = {pd:5.1f} px  ->  Rd = {pixels_to_world(pd, calib):.3f} cm")

# Dot-grid calibration: render a 9x7 grid under a known map with a 20-degree
# perspective tilt, then fit a map back from the image alone.
spec = GridSpec(nx=9, ny=7, pitch_cm=3.0, dot_radius_cm=0.5)
s = 10.0
truth = PlanarMap(
    h=np.linalg.inv(
        np.array([
            [s, 0.0, 60.0],
            [0.0, s, 40.0],
            [0.0, math.tan(math.radians(20.0)) * 1e-3, 1.0],
        ])
    )
)
frame = render_grid(spec, truth, size=(640, 480))
fitted = fit_planar_map(frame, spec)
print(f"\ngrid fit: {fitted.n_dots} dots matched, rms residual {fitted.rms_px:.4f} px")
nodes = spec.world_points()
err = np.linalg.norm(fitted.to_pixel(nodes) - truth.to_pixel(nodes), axis=1)
print(f"vs the generating map over all {len(nodes)} nodes: max err {err.max():.4f} px")
grid_calib = CalibrationModel.from_grid_map(fitted, placement)
print(f"full calibration from the grid: f = {grid_calib.f:.1f}, px/cm = {grid_calib.px_per_cm:.3f}")
