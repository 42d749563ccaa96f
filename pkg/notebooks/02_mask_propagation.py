# Propagating a first-frame mask by cosine point matching.
#
# The synthetic sequence has a foreground box whose features carry an extra
# code on top of a smooth background field; the whole field translates by
# one grid cell per frame. Each frame is labelled by a k-nearest-neighbour
# vote against sampled points of the first frame and the recent frames.

import time

import numpy as np

from vidstyle.masks import iou_dice, propagate, stratified_sample
from vidstyle.synthetic import box_mask, translation_sequence

feats, truth = translation_sequence(h=32, w=32, d=16, frames=12, shift=(1, 0), seed=0)
print("features:", feats.shape, "foreground fraction: %.2f" % truth[0].mean())

# the sampling budget is split between foreground and background by area
m = box_mask(64, 64, 0, 0, 32, 32)
idx = stratified_sample(m, 0.3, 0)
print("64x64 grid, 25%% foreground, r=0.3: %d samples, %d foreground" % (len(idx), m.ravel()[idx].sum()))

for r in (0.1, 0.3, 1.0):
    t = time.perf_counter()
    masks = propagate(feats, truth[0], r=r, k=15, n=9, seed=0)
    iou, dice = iou_dice(masks, truth)
    print("r=%.1f  IoU %.4f  Dice %.4f  (%.2f s)" % (r, iou, dice, time.perf_counter() - t))

# anchor frames: first frame only vs first frame plus nine recent frames, with drifting features
feats, truth = translation_sequence(24, 24, 16, 10, seed=1, drift=0.3)
for n in (0, 9):
    print("n=%d  IoU %.4f" % (n, iou_dice(propagate(feats, truth[0], n=n, seed=1), truth)[0]))

# a small object on a coarse grid may get fewer foreground samples than a
# k-majority needs, so small k is safer there
small = np.zeros((16, 16), np.uint8)
small[6:9, 6:9] = 1
print("9-cell object, r=0.3: %d foreground samples" % small.ravel()[stratified_sample(small, 0.3, 0)].sum())
