# DDIM inversion and reconstruction on a toy latent video.
#
# Inversion walks a clean latent up the noise ladder; sampling walks it back.
# With a noise predictor that ignores its input the two directions cancel
# exactly. A real network only approximately agrees with itself across
# neighbouring steps, so reconstruction drifts a little.

import numpy as np

from vidstyle.backends import ConstantPredictor, MockBackbone
from vidstyle.schedule import build_schedule, run_denoising, run_inversion
from vidstyle.synthetic import latent_video

sched = build_schedule(T=50)
print("training timesteps of the first and last ladder positions:", sched.timestep(1), sched.timestep(50))
print("alpha_bar at positions 0, 25, 50:", [round(sched.alpha_bar(p), 4) for p in (0, 25, 50)])

video = latent_video(frames=8, channels=4, h=32, w=32, seed=0)

# constant noise: inversion is undone to rounding error
inv = run_inversion(video, ConstantPredictor(0.1), sched)
back = run_denoising(inv.noise, ConstantPredictor(0.1), sched)
print("constant predictor, max reconstruction error: %.2e" % np.abs(back - video).max())

# the mock attention backbone depends on its input, so the round trip is approximate
bb = MockBackbone(channels=4, patch=4)
inv = run_inversion(video, bb, sched, feature_tap=20)
back = run_denoising(inv.noise, bb, sched)
print("mock backbone, mean reconstruction error: %.3f" % np.abs(back - video).mean())
print("features captured at position 20:", inv.features.shape)
print("trajectory length (positions 0..T):", len(inv.trajectory))
