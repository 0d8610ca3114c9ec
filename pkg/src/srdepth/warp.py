"""View synthesis and offset-based disparity alignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .geometry import Intrinsics, backproject, pixel_grid, project, transform_points
from .tensorcore import ShapeError, Tensor


@dataclass
class SynthesizedView:
    """Target-aligned reconstruction from a source frame.

    ``validity`` is a constant (B, 1, H, W) array, 0 where sampling left the
    source image or the geometry was degenerate.
    """

    image: Tensor
    validity: np.ndarray


def synthesize_view(source, depth, pose, k: Intrinsics) -> SynthesizedView:
    """Reconstruct the target view by sampling ``source``.

    ``depth`` is the target depth (B, 1, H, W) and ``pose`` maps target-camera
    coordinates to source-camera coordinates (RigidTransform or PoseTensor).
    Differentiable w.r.t. depth and the pose tensors.
    """
    source = source if isinstance(source, Tensor) else Tensor(np.asarray(source))
    depth = depth if isinstance(depth, Tensor) else Tensor(np.asarray(depth, dtype=source.dtype))
    if source.shape[0] != depth.shape[0] or source.shape[2:] != depth.shape[2:]:
        raise ShapeError(f"source {source.shape} and depth {depth.shape} disagree")
    points, depth_ok = backproject(depth, k)
    moved = transform_points(points, pose)
    pix, _, front = project(moved, k)
    image, inside = tc.grid_sample(source, pix)
    validity = inside * front * depth_ok
    return SynthesizedView(image, validity.astype(source.dtype))


def warp_disparity_with_offset(disparity, offset) -> Tensor:
    """Resample ``disparity`` at p + offset(p).

    Both inputs share one resolution; offsets are (dx, dy) in pixels of that
    resolution. Sample positions are clamped to the frame so the border keeps
    edge values instead of reading zeros.
    """
    disparity = disparity if isinstance(disparity, Tensor) else Tensor(np.asarray(disparity))
    offset = offset if isinstance(offset, Tensor) else Tensor(np.asarray(offset, dtype=disparity.dtype))
    b, _, h, w = disparity.shape
    if offset.shape != (b, 2, h, w):
        raise ShapeError(f"offset shape {offset.shape} does not match disparity {disparity.shape}")
    base = pixel_grid(h, w, b, disparity.dtype)
    gx = tc.clamp(tc.take_channels(offset, 0) + base[:, :1], 0.0, w - 1.0)
    gy = tc.clamp(tc.take_channels(offset, 1) + base[:, 1:], 0.0, h - 1.0)
    out, _ = tc.grid_sample(disparity, tc.concat_channels([gx, gy]))
    return out


def upsample_and_align(coarse_disparity, offset) -> Tensor:
    """Upsample a half-resolution disparity by 2, then warp it by ``offset``."""
    up = tc.upsample_bilinear(coarse_disparity, 2)
    return warp_disparity_with_offset(up, offset)
