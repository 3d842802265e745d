"""
Calibrating the fish-eye camera and the laser-to-camera transform
=================================================================

A simulated session shows a checkerboard to the camera in twenty poses
while the scanner sweeps it. The camera fit compares three distortion
models of increasing order. The rig fit aligns the laser points of each
board with the board plane seen by the camera.
"""

import numpy as np
from scipy.spatial.transform import Rotation

from fishmap.calibration import compare_models, fit_extrinsics
from fishmap.camera import FisheyeIntrinsics
from fishmap.georef import RigidTransform
from fishmap.scene_sim import make_calibration_session

size = (1024, 1024)
truth = FisheyeIntrinsics(order=9, k=(300, -10, 2, -0.5, 0.05), mu=1, mv=1.02, u0=512, v0=500)
rig = RigidTransform(Rotation.from_euler("zyx", [4, -3, 2], degrees=True).as_matrix(), [0.12, -0.04, 0.18])

# 0.4 px of corner noise, similar to a real detector
session = make_calibration_session(truth, size, rig, n_poses=20, pixel_sigma=0.4, range_sigma=0.003,
                                   plane_source="pnp", seed=3)
print(f"{len(session.boards)} board views, {sum(len(b.pixels) for b in session.boards)} corners")

# fit orders 6, 9 and 23; each fit starts from the previous one. The
# recommendation is the lowest order after which the gain drops below 5%,
# so a lens this close to equidistant may well settle for order 6
cmp = compare_models(session.boards, image_size=size)
print()
print(cmp.table())

best = cmp.reports[cmp.recommended].intrinsics
print(f"\nprincipal point: fitted ({best.u0:.2f}, {best.v0:.2f}), true ({truth.u0}, {truth.v0})")

# planes estimated from the noisy board poses feed the rig fit
T, rms = fit_extrinsics(session.planes)
angle = np.degrees(Rotation.from_matrix(T.rotation @ rig.rotation.T).magnitude())
print(f"\nlaser -> camera: rotation off by {angle:.3f} deg, translation off by "
      f"{1e3 * np.linalg.norm(T.translation - rig.translation):.1f} mm, plane rms {1e3 * rms:.2f} mm")
