# AdaIN in the two places the stylization uses it.
#
# Latent shift: the whole edited video is renormalized per channel to the
# style latent's mean and standard deviation. Attention shift: keys and
# values of the edited branch are renormalized per head and channel towards
# the style branch, and blended with plain style keys/values.

import numpy as np

from vidstyle.attention import AttentionPacket
from vidstyle.stylize import StyleSchedule, beta_at, latent_adain, shift_attention
from vidstyle.synthetic import latent_video, style_latent
from vidstyle.tensor import channel_moments

video = latent_video(8, 4, 32, 32)
style = style_latent(4, 32, 32, seed=1)

shifted = latent_adain(video, style)
print("style channel means :", np.round(channel_moments(style, 1, (0, 2, 3)).mean.ravel(), 4))
print("shifted video means :", np.round(channel_moments(shifted, 1, (0, 2, 3)).mean.ravel(), 4))
print("style channel stds  :", np.round(channel_moments(style, 1, (0, 2, 3)).std.ravel(), 4))
print("shifted video stds  :", np.round(channel_moments(shifted, 1, (0, 2, 3)).std.ravel(), 4))

# joint statistics keep the frame-to-frame brightness changes; per-frame statistics flatten them
per = latent_adain(video, style, per_frame=True)
print("frame means, joint    :", np.round(shifted.mean(axis=(1, 2, 3)), 3))
print("frame means, per frame:", np.round(per.mean(axis=(1, 2, 3)), 3))

# the K/V blend weight ramps from 0.9 at the noisiest step down to 0.1
sched = StyleSchedule()
print("beta at steps 50, 35, 20:", [beta_at(t, sched) for t in (50, 35, 20)])

rng = np.random.default_rng(0)
q, k, v = rng.standard_normal((3, 4, 2, 16, 8))
sq, sk, sv = rng.standard_normal((3, 1, 2, 16, 8)) * 2 + 1
pkt = AttentionPacket(q, k, v, content_q=q * 0.5, style_k=sk, style_v=sv)
out = shift_attention(pkt, gamma=0.35, beta=0.0)
print("beta=0 gives plain K-V replacement:", np.array_equal(out.k, np.broadcast_to(sk, k.shape)))
