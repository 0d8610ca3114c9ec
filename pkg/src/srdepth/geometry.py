"""Pinhole camera model, rigid transforms and the projection chain.

Conventions: x right, y down, z forward; pixel (0, 0) is the centre of the
top-left pixel. Point maps are (B, 3, H, W) tensors, pixel maps (B, 2, H, W)
with channel 0 = u (column) and channel 1 = v (row).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor

EPS_Z = 1e-6
D_MIN = 0.1
D_MAX = 100.0


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    u0: float
    v0: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.u0], [0.0, self.fy, self.v0], [0.0, 0.0, 1.0]])

    def scaled(self, factor: float) -> "Intrinsics":
        """Intrinsics of the same camera resampled by ``factor`` (half-pixel centres)."""
        return Intrinsics(self.fx * factor, self.fy * factor,
                          (self.u0 + 0.5) * factor - 0.5, (self.v0 + 0.5) * factor - 0.5)

    @classmethod
    def default_for(cls, height: int, width: int) -> "Intrinsics":
        """KITTI-like normalised intrinsics for a ``height`` x ``width`` frame."""
        return cls(0.58 * width, 1.92 * height, (width - 1) / 2.0, (height - 1) / 2.0)

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "u0": self.u0, "v0": self.v0}

    @classmethod
    def from_json(cls, obj: dict) -> "Intrinsics":
        return cls(float(obj["fx"]), float(obj["fy"]), float(obj["u0"]), float(obj["v0"]))


class RigidTransform:
    """Rotation + translation acting as p' = R p + t."""

    def __init__(self, rotation, translation, tol: float = 1e-6):
        r = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > tol:
            raise ValueError(f"rotation determinant {np.linalg.det(r):.9f} != +1")
        self.rotation = r
        self.translation = t

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` applied after ``other``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        return points @ self.rotation.T + self.translation

    def to_tensors(self, batch: int = 1, dtype=np.float32) -> "PoseTensor":
        r = np.broadcast_to(self.rotation.reshape(1, 9, 1, 1), (batch, 9, 1, 1))
        t = np.broadcast_to(self.translation.reshape(1, 3, 1, 1), (batch, 3, 1, 1))
        return PoseTensor(Tensor(r.astype(dtype)), Tensor(t.astype(dtype)))

    def to_json(self) -> dict:
        return {"rotation": self.rotation.reshape(-1).tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "RigidTransform":
        return cls(np.array(obj["rotation"], dtype=np.float64).reshape(3, 3), obj["translation"])

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass
class PoseTensor:
    """Differentiable batch of poses: rotation (B, 9, 1, 1) row-major, translation (B, 3, 1, 1)."""

    rotation: Tensor
    translation: Tensor

    def to_transforms(self) -> list[RigidTransform]:
        r = self.rotation.data.reshape(-1, 3, 3).astype(np.float64)
        t = self.translation.data.reshape(-1, 3).astype(np.float64)
        # float32 network output: re-orthonormalise before the strict invariant check
        out = []
        for ri, ti in zip(r, t):
            u, _, vt = np.linalg.svd(ri)
            out.append(RigidTransform(u @ vt, ti))
        return out


def load_transforms(path) -> list[RigidTransform]:
    """Read one transform object or a list of them from a JSON file."""
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, dict) and "poses" in obj:
        obj = obj["poses"]
    elif isinstance(obj, dict) and "pairs" in obj:
        obj = obj["pairs"]
    if isinstance(obj, dict):
        obj = [obj]
    return [RigidTransform.from_json(o) for o in obj]


def pixel_grid(height: int, width: int, batch: int = 1, dtype=np.float32) -> np.ndarray:
    """(B, 2, H, W) array of pixel coordinates (u, v)."""
    v, u = np.meshgrid(np.arange(height, dtype=dtype), np.arange(width, dtype=dtype), indexing="ij")
    return np.broadcast_to(np.stack([u, v])[None], (batch, 2, height, width)).copy()


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def backproject(depth, k: Intrinsics, pixels=None) -> tuple[Tensor, np.ndarray]:
    """Lift pixels to camera-frame points, X = Z K^-1 (u, v, 1).

    ``pixels`` defaults to the regular pixel grid of ``depth``. Returns the
    point map and a boolean validity map that is False where depth <= 0.
    """
    depth = _tensor(depth)
    b, _, h, w = depth.shape
    if pixels is None:
        pixels = pixel_grid(h, w, b, depth.dtype)
    pixels = _tensor(pixels) if not isinstance(pixels, np.ndarray) else Tensor(pixels.astype(depth.dtype))
    u = tc.take_channels(pixels, 0)
    v = tc.take_channels(pixels, 1)
    x = (u - k.u0) * (1.0 / k.fx) * depth
    y = (v - k.v0) * (1.0 / k.fy) * depth
    valid = depth.data > 0
    return tc.concat_channels([x, y, depth]), valid


def transform_points(points, pose) -> Tensor:
    """p' = R p + t for every point; ``pose`` is a RigidTransform or PoseTensor."""
    points = _tensor(points)
    if isinstance(pose, RigidTransform):
        pose = pose.to_tensors(points.shape[0], points.dtype)
    rot, trans = pose.rotation, pose.translation
    comps = [tc.take_channels(points, j) for j in range(3)]
    out = []
    for i in range(3):
        acc = tc.take_channels(trans, i)
        for j in range(3):
            acc = acc + tc.take_channels(rot, 3 * i + j) * comps[j]
        out.append(acc)
    return tc.concat_channels(out)


def project(points, k: Intrinsics) -> tuple[Tensor, Tensor, np.ndarray]:
    """Project camera-frame points to pixels.

    Returns (pixel map, depth-along-axis map, validity). Points with
    Z <= 1e-6 are invalid and their pixel coordinates are set to NaN so any
    downstream sampling treats them as out of bounds.
    """
    points = _tensor(points)
    z = tc.take_channels(points, 2)
    valid = z.data > EPS_Z
    z_safe = tc.where(valid, z, 1.0)
    u = tc.take_channels(points, 0) / z_safe * k.fx + k.u0
    v = tc.take_channels(points, 1) / z_safe * k.fy + k.v0
    pix = tc.concat_channels([u, v])
    pix = tc.where(np.broadcast_to(valid, pix.shape), pix, np.nan)
    return pix, z, valid


def disparity_to_depth(d, d_min: float = D_MIN, d_max: float = D_MAX):
    """Depth from sigmoid disparity, affine in inverse depth.

    d = 0 maps to ``d_max`` and d = 1 to ``d_min``. Works on Tensors and arrays.
    """
    if not 0 < d_min < d_max:
        raise ValueError(f"need 0 < d_min < d_max, got {d_min}, {d_max}")
    lo, hi = 1.0 / d_max, 1.0 / d_min
    return 1.0 / (lo + (hi - lo) * d)


def depth_to_disparity(depth, d_min: float = D_MIN, d_max: float = D_MAX):
    lo, hi = 1.0 / d_max, 1.0 / d_min
    return (1.0 / depth - lo) / (hi - lo)


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rotation_from_axis_angle(axis_angle) -> np.ndarray:
    """Rodrigues exponential map in float64."""
    w = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(w)
    k = _skew(w)
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * k @ k
    return np.eye(3) + np.sin(theta) / theta * k + (1 - np.cos(theta)) / theta ** 2 * k @ k


def pose_from_6dof(axis_angle, translation) -> RigidTransform:
    return RigidTransform(rotation_from_axis_angle(axis_angle), translation)


# sin(s)/s and (1 - cos s)/s^2 as functions of q = s^2, with Taylor branches near 0
def _sinc_q(q):
    s = np.sqrt(np.maximum(q, 0.0))
    small = q < 1e-6
    with np.errstate(invalid="ignore", divide="ignore"):
        big = np.sin(s) / np.where(small, 1.0, s)
    return np.where(small, 1.0 - q / 6.0 + q * q / 120.0, big)


def _dsinc_q(q):
    s = np.sqrt(np.maximum(q, 0.0))
    small = q < 1e-6
    ss = np.where(small, 1.0, s)
    big = (ss * np.cos(ss) - np.sin(ss)) / (2.0 * ss ** 3)
    return np.where(small, -1.0 / 6.0 + q / 60.0, big)


def _cosc_q(q):
    s = np.sqrt(np.maximum(q, 0.0))
    small = q < 1e-6
    qq = np.where(small, 1.0, q)
    big = (1.0 - np.cos(np.sqrt(qq))) / qq
    return np.where(small, 0.5 - q / 24.0 + q * q / 720.0, big)


def _dcosc_q(q):
    small = q < 1e-6
    qq = np.where(small, 1.0, q)
    ss = np.sqrt(qq)
    big = (0.5 * ss * np.sin(ss) - (1.0 - np.cos(ss))) / (qq * qq)
    return np.where(small, -1.0 / 24.0 + q / 360.0, big)


def pose_from_6dof_tensor(vec: Tensor) -> PoseTensor:
    """Differentiable exponential map of (B, 6, 1, 1) [axis-angle, translation] vectors.

    R = (1 - B q) I + A [w]x + B w w^T with q = |w|^2, A = sin(s)/s,
    B = (1 - cos s)/s^2.
    """
    w = [tc.take_channels(vec, i) for i in range(3)]
    q = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
    a = tc.unary(q, _sinc_q, _dsinc_q, "sinc_q")
    bq = tc.unary(q, _cosc_q, _dcosc_q, "cosc_q")
    diag = 1.0 - bq * q
    skew = {(0, 1): -1 * w[2], (0, 2): w[1], (1, 0): w[2], (1, 2): -1 * w[0], (2, 0): -1 * w[1], (2, 1): w[0]}
    entries = []
    for i in range(3):
        for j in range(3):
            e = bq * w[i] * w[j]
            if i == j:
                e = e + diag
            else:
                e = e + a * skew[(i, j)]
            entries.append(e)
    return PoseTensor(tc.concat_channels(entries), tc.take_channels(vec, 3, 6))


def invert_pose_tensor(pose: PoseTensor) -> PoseTensor:
    """Inverse (R^T, -R^T t) of a differentiable pose."""
    rot = pose.rotation
    rt = tc.concat_channels([tc.take_channels(rot, 3 * j + i) for i in range(3) for j in range(3)])
    tv = [tc.take_channels(pose.translation, j) for j in range(3)]
    neg_t = []
    for i in range(3):
        acc = None
        for j in range(3):
            term = tc.take_channels(rt, 3 * i + j) * tv[j]
            acc = term if acc is None else acc + term
        neg_t.append(-acc)
    return PoseTensor(rt, tc.concat_channels(neg_t))
