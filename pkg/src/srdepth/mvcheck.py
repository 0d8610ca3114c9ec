"""Multiview consistency filter for depth pseudo-labels.

A target depth map is projected into a source view, the source depth is
remapped at the projected points, and the remapped points are carried back
into the target. Pixels whose round trip lands far from where it started,
or whose reprojected depth disagrees with the original, are filtered out.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensorcore as tc
from .geometry import Intrinsics, RigidTransform, backproject, pixel_grid, project, transform_points
from .tensorcore import Tensor

# thresholds never drop below these, so exactly consistent inputs pass
REPROJ_FLOOR = 1e-6
GEO_FLOOR = 1e-6


class EmptyMaskWarning(UserWarning):
    """No pixel survived the round trip, so the filter mask is all zero."""


@dataclass
class ConsistencyReport:
    e_reproj: np.ndarray   # (H, W) pixels
    e_geo: np.ndarray      # (H, W) relative depth error
    valid: np.ndarray      # (H, W) bool, round trip succeeded
    coverage: float

    def means(self) -> tuple[float, float]:
        if not self.valid.any():
            return 0.0, 0.0
        return float(self.e_reproj[self.valid].mean(dtype=np.float64)), \
            float(self.e_geo[self.valid].mean(dtype=np.float64))


def _as4(x) -> Tensor:
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    return Tensor(arr.reshape((1, 1) + arr.shape[-2:]))


def check_pair(d_target, d_source, pose: RigidTransform, k: Intrinsics,
               literal_geo: bool = False) -> ConsistencyReport:
    """Round-trip consistency between a target and one source depth map.

    ``pose`` maps target-camera coordinates to source-camera coordinates.
    ``literal_geo`` compares the target depth sampled at the reprojected
    point instead of the reprojected depth itself.
    """
    dt = _as4(d_target)
    ds = _as4(d_source)
    h, w = dt.shape[2:]
    with tc.no_grad():
        p0 = pixel_grid(h, w, 1, np.float64)
        pts, ok_t = backproject(dt, k)
        p1, _, ok_front = project(transform_points(pts, pose), k)
        ds_remap, in_src = tc.grid_sample(ds, p1)
        pts_s, ok_s = backproject(ds_remap, k, pixels=np.nan_to_num(p1.data, nan=-1.0))
        p0_back, z_back, ok_back = project(transform_points(pts_s, pose.inverse()), k)
        pb = p0_back.data
        tol = tc.SNAP_TOL
        in_tgt = np.isfinite(pb).all(axis=1, keepdims=True) & \
            (pb[:, :1] >= -tol) & (pb[:, :1] <= w - 1 + tol) & (pb[:, 1:] >= -tol) & (pb[:, 1:] <= h - 1 + tol)
        valid = ok_t & ok_front & (in_src > 0) & ok_s & ok_back & in_tgt
        depth0 = dt.data
        e_reproj = np.sqrt(np.sum((np.nan_to_num(pb) - p0) ** 2, axis=1, keepdims=True))
        if literal_geo:
            resampled, _ = tc.grid_sample(dt, Tensor(np.nan_to_num(pb, nan=-1.0)))
            other = resampled.data
        else:
            other = z_back.data
        with np.errstate(divide="ignore", invalid="ignore"):
            e_geo = np.abs(depth0 - other) / depth0
    valid = valid[0, 0]
    e_reproj = np.where(valid, e_reproj[0, 0], 0.0)
    e_geo = np.where(valid, e_geo[0, 0], 0.0)
    return ConsistencyReport(e_reproj, e_geo, valid, float(valid.mean()))


def _single_pass(report: ConsistencyReport, alpha: float, beta: float) -> np.ndarray:
    mean_r, mean_g = report.means()
    thr_r = max(alpha * mean_r, REPROJ_FLOOR)
    thr_g = max(beta * mean_g, GEO_FLOOR)
    return report.valid & (report.e_reproj < thr_r) & (report.e_geo < thr_g)


def filter_mask(reports: Sequence[ConsistencyReport], alpha: float = 4.0, beta: float = 4.0) -> np.ndarray:
    """Hard mask: intersection over views of pixels below alpha / beta times the mean errors.

    Means are taken over round-trip-valid pixels of each report.
    """
    if not reports:
        raise ValueError("filter_mask needs at least one report")
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"alpha and beta must be positive, got {alpha}, {beta}")
    mask = np.ones_like(reports[0].valid)
    for r in reports:
        mask &= _single_pass(r, alpha, beta)
    if not any(r.valid.any() for r in reports):
        warnings.warn("no pixel has a valid round trip; filter mask is empty", EmptyMaskWarning)
    return mask


def soft_mask(reports: Sequence[ConsistencyReport]) -> np.ndarray:
    """Continuous weights exp(-e_geo / mean e_geo), averaged over views, scaled to max 1.

    Pixels without a valid round trip in a view get weight 0 from that view.
    """
    if not reports:
        raise ValueError("soft_mask needs at least one report")
    acc = np.zeros(reports[0].valid.shape, dtype=np.float64)
    for r in reports:
        _, mean_g = r.means()
        ratio = r.e_geo / mean_g if mean_g > GEO_FLOOR else np.zeros_like(r.e_geo)
        acc += np.where(r.valid, np.exp(-ratio), 0.0)
    acc /= len(reports)
    top = acc.max()
    if top <= 0:
        warnings.warn("no pixel has a valid round trip; soft mask is empty", EmptyMaskWarning)
        return acc
    return acc / top


def downsample_mask(mask: np.ndarray, scale: int) -> np.ndarray:
    """Nearest decimation: keep the top-left sample of each scale x scale block."""
    if scale not in (1, 2, 4, 8):
        raise ValueError(f"scale must be one of 1, 2, 4, 8, got {scale}")
    return np.asarray(mask)[..., ::scale, ::scale]
