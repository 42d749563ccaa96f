# Two stylizations chained through the CLI. The first run styles the
# background and keeps the object; the second takes that result and
# styles the object with --invert-masks, keeping the first run's background.

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from vidstyle.formats import read_tensor, write_mask, write_tensor
from vidstyle.synthetic import first_frame_mask, latent_video, style_latent

work = Path(tempfile.mkdtemp(prefix="chain-"))
write_tensor(latent_video(6, 4, 32, 32), work / "video.npy")
write_tensor(style_latent(4, 32, 32, seed=1), work / "style_a.npy")
write_tensor(style_latent(4, 32, 32, seed=7), work / "style_b.npy")
write_mask(first_frame_mask(32, 32), work / "m1.png")
(work / "cfg.json").write_text(json.dumps({"T": 20, "k": 5}))


def vidstyle(*args):
    cmd = [sys.executable, "-m", "vidstyle.cli", *map(str, args), "--config", work / "cfg.json", "--quiet"]
    done = subprocess.run(cmd, capture_output=True, text=True)
    if done.returncode:
        raise SystemExit(done.stderr)
    return done.stdout


vidstyle("invert", "--video", work / "video.npy", "--out", work / "inv")
print(vidstyle("propagate-mask", "--features", work / "inv" / "features.npy", "--mask", work / "m1.png",
               "--out", work / "masks").strip())
vidstyle("stylize", "--video", work / "video.npy", "--style", work / "style_a.npy", "--masks", work / "masks",
         "--out", work / "pass1.npy")
vidstyle("stylize", "--video", work / "pass1.npy", "--style", work / "style_b.npy", "--masks", work / "masks",
         "--out", work / "pass2.npy", "--invert-masks")

video, p1, p2 = (read_tensor(work / n) for n in ("video.npy", "pass1.npy", "pass2.npy"))
print("pass 1 changed the video by %.3f on average" % np.abs(p1 - video).mean())
print("pass 2 changed pass 1 by %.3f on average" % np.abs(p2 - p1).mean())
print("manifests:", sorted(p.name for p in work.glob("*.manifest.json")))
