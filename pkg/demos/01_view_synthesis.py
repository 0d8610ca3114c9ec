"""
View synthesis on an analytic scene
===================================

Render a triplet, rebuild the target frame from each source frame using the
true depth and pose, then see how the reconstruction degrades when the depth
is wrong by 20%.
"""
import numpy as np

from srdepth.losses import LossWeights, automask, min_reprojection
from srdepth.synthscene import generate_dataset
from srdepth.warp import synthesize_view

ds = generate_dataset(n_scenes=1, n_triplets=1, size=(32, 96), seed=3)
t = ds.triplets[0]
print("frames", t.frames.shape, "depth range %.2f .. %.2f" % (t.depths[1].min(), t.depths[1].max()))
print("intrinsics", ds.k)

target = t.frames[1][None].astype(np.float64)
sources = [t.frames[0][None].astype(np.float64), t.frames[2][None].astype(np.float64)]
depth = t.depths[1][None, None].astype(np.float64)

# inverse warping: sample each source where the target's 3D points land
for name, src, pose in zip(("prev", "next"), sources, t.poses):
    view = synthesize_view(src, depth, pose, t.k)
    valid = view.validity[0, 0] > 0
    err = np.abs(view.image.data - target)[0][:, valid].mean()
    print("%s -> target: %.1f%% of pixels valid, mean abs error %.4f" % (name, 100 * valid.mean(), err))

print()
w = LossWeights()
for scale in (0.8, 1.0, 1.2):
    views = [synthesize_view(s, depth * scale, p, t.k) for s, p in zip(sources, t.poses)]
    pe = min_reprojection(target, views, w).data
    mu = automask(target, views, sources, w)
    print("depth x %.1f: masked photometric loss %.5f, automask keeps %.1f%%"
          % (scale, (pe * mu).mean(), 100 * mu.mean()))
