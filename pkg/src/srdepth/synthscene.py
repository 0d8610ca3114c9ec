"""Analytic textured-plane scenes with exact depth and pose ground truth.

Every pixel is rendered by intersecting its camera ray with the scene planes
and evaluating a procedural texture at the hit point, so images and depth
maps carry no resampling error. Camera poses are world-to-camera transforms.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import D_MAX, D_MIN, Intrinsics, RigidTransform, rotation_from_axis_angle
from .imaging import read_pfm, read_ppm, write_pfm, write_ppm
from .losses import L1_MODES, LossWeights, ground_truth_objective

TRAJECTORIES = ("forward", "lateral", "rotate", "mixed")
# reference focal length used to pick texture frequencies (96-pixel-wide frame)
_FX_REF = 0.58 * 96
_CAMERA_HEIGHT = 1.5
# trajectory redraws allowed per triplet before giving up on the minimum-at-GT check
_MAX_REDRAWS = 50


class DataLayoutError(FileNotFoundError):
    """A dataset directory is missing a required file or is malformed."""


@dataclass
class Plane:
    """Plane n . X = offset with texture coordinates along (u_axis, v_axis) from origin.

    ``half_extent`` bounds the plane to a rectangle in texture coordinates;
    None means infinite.
    """

    normal: np.ndarray
    offset: float
    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    texture: str = "sines"
    params: dict = field(default_factory=dict)
    half_extent: tuple[float, float] | None = None

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Ray parameter of the hit for rays origin + lam * dirs, inf on a miss."""
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (self.offset - origin @ self.normal) / denom
        hit = np.isfinite(lam) & (lam > 1e-9) & (np.abs(denom) > 1e-12)
        if self.half_extent is not None:
            pts = origin + lam[..., None] * dirs
            s, t = self.tex_coords(pts)
            hit &= (np.abs(s) <= self.half_extent[0]) & (np.abs(t) <= self.half_extent[1])
        return np.where(hit, lam, np.inf)

    def tex_coords(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rel = pts - self.origin
        return rel @ self.u_axis, rel @ self.v_axis

    def shade(self, pts: np.ndarray) -> np.ndarray:
        s, t = self.tex_coords(pts)
        return evaluate_texture(self.texture, self.params, s, t)


def evaluate_texture(kind: str, params: dict, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Colour (..., 3) in [0, 1] of a procedural texture at coordinates (s, t)."""
    if kind in ("sines", "noise"):
        freqs = np.asarray(params["freqs"])    # (K, 2) cycles per unit
        phases = np.asarray(params["phases"])  # (K, 3)
        amps = np.asarray(params["amps"])      # (K, 3)
        out = np.broadcast_to(np.asarray(params["base"], dtype=np.float64), s.shape + (3,)).copy()
        for f, ph, a in zip(freqs, phases, amps):
            arg = 2 * np.pi * (f[0] * s + f[1] * t)
            out += a * np.sin(arg[..., None] + ph)
        return np.clip(out, 0.0, 1.0)
    if kind == "checker":
        period = params["period"]
        cell = (np.floor(s / period) + np.floor(t / period)).astype(np.int64) % 2
        colors = np.asarray(params["colors"], dtype=np.float64)
        return colors[cell]
    raise ValueError(f"unknown texture {kind!r}")


@dataclass
class SceneSpec:
    planes: list[Plane]
    background_depth: float
    background_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not D_MIN < self.background_depth < D_MAX:
            raise ValueError(f"background depth {self.background_depth} outside ({D_MIN}, {D_MAX})")

    def all_planes(self) -> list[Plane]:
        bg = Plane(np.array([0.0, 0.0, 1.0]), self.background_depth,
                   np.array([0.0, 0.0, self.background_depth]),
                   np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
                   texture="noise" if self.background_params else "checker",
                   params=self.background_params or {"period": 1.0, "colors": [[0.3] * 3, [0.7] * 3]})
        return list(self.planes) + [bg]


def render_view(scene: SceneSpec, pose: RigidTransform, k: Intrinsics,
                size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Render (image (3, H, W), depth (H, W)) for a world-to-camera ``pose``."""
    h, w = size
    v, u = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dirs_cam = np.stack([(u - k.u0) / k.fx, (v - k.v0) / k.fy, np.ones_like(u)], axis=-1)
    rt = pose.rotation.T
    center = -rt @ pose.translation
    dirs = dirs_cam @ pose.rotation  # R^T d for each ray
    planes = scene.all_planes()
    lams = np.stack([p.intersect(center, dirs) for p in planes])
    nearest = np.argmin(lams, axis=0)
    lam = np.take_along_axis(lams, nearest[None], axis=0)[0]
    if not np.all(np.isfinite(lam)):
        raise ValueError("some camera rays hit no surface")
    pts = center + lam[..., None] * dirs
    image = np.zeros((h, w, 3))
    for i, p in enumerate(planes):
        sel = nearest == i
        if sel.any():
            image[sel] = p.shade(pts[sel])
    # the ray direction has unit z in the camera frame, so lam is the depth
    depth = lam
    return image.transpose(2, 0, 1).astype(np.float32), depth.astype(np.float32)


# ---------------------------------------------------------------------------
# random scene family


def _noise_params(rng: np.random.Generator, period: float, n: int = 6, amp: float = 0.22) -> dict:
    """Band-limited noise: a few sinusoids with periods in [period, 2 * period]."""
    angles = rng.uniform(0, np.pi, n)
    periods = period * rng.uniform(1.0, 2.0, n)
    freqs = np.stack([np.cos(angles), np.sin(angles)], axis=1) / periods[:, None]
    amps = rng.uniform(0.3, 1.0, (n, 3))
    amps *= amp / amps.sum(axis=0)
    return {
        "freqs": freqs.tolist(),
        "phases": rng.uniform(0, 2 * np.pi, (n, 3)).tolist(),
        "amps": amps.tolist(),
        "base": rng.uniform(0.35, 0.65, 3).tolist(),
    }


def random_scene(rng: np.random.Generator) -> SceneSpec:
    """Road-like scene: ground plane, background wall and 1-3 upright panels."""
    bg_depth = float(rng.uniform(11.0, 15.0))
    # image-space periods of roughly 7-12 px at the reference focal length
    bg_params = _noise_params(rng, period=rng.uniform(7, 12) * bg_depth / _FX_REF)
    ground_params = _noise_params(rng, period=rng.uniform(1.5, 2.5), n=4)
    # stripes along x only: ground texture is constant in depth so it never aliases near the horizon
    ground_params["freqs"] = [[f[0] if abs(f[0]) > 0.2 else 0.4, 0.0] for f in ground_params["freqs"]]
    planes = [Plane(np.array([0.0, 1.0, 0.0]), _CAMERA_HEIGHT, np.array([0.0, _CAMERA_HEIGHT, 0.0]),
                    np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]),
                    texture="sines", params=ground_params)]
    for _ in range(int(rng.integers(1, 4))):
        z = float(rng.uniform(4.0, bg_depth - 3.0))
        x = float(rng.uniform(-0.45, 0.45) * z * 96 / _FX_REF / 2)
        half_w = float(rng.uniform(0.4, 1.2))
        half_h = float(rng.uniform(0.4, 1.2))
        yaw = float(rng.uniform(-0.6, 0.6))
        normal = np.array([math.sin(yaw), 0.0, -math.cos(yaw)])
        u_axis = np.array([math.cos(yaw), 0.0, math.sin(yaw)])
        origin = np.array([x, _CAMERA_HEIGHT - half_h, z])
        period = rng.uniform(7, 12) * z / _FX_REF
        planes.append(Plane(normal, float(normal @ origin), origin, u_axis, np.array([0.0, 1.0, 0.0]),
                            texture="noise", params=_noise_params(rng, period),
                            half_extent=(half_w, half_h)))
    return SceneSpec(planes, bg_depth, bg_params)


def _motion(rng: np.random.Generator, style: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame camera (rotation vector, translation of the camera centre)."""
    if style == "mixed":
        style = TRAJECTORIES[int(rng.integers(0, 3))]
    if style == "forward":
        return np.array([0.0, rng.uniform(-0.004, 0.004), 0.0]), np.array([0.0, 0.0, rng.uniform(0.25, 0.5)])
    if style == "lateral":
        sign = rng.choice([-1.0, 1.0])
        return np.zeros(3), np.array([sign * rng.uniform(0.15, 0.3), 0.0, rng.uniform(0.0, 0.1)])
    if style == "rotate":
        yaw = rng.choice([-1.0, 1.0]) * rng.uniform(0.01, 0.025)
        return np.array([0.0, yaw, 0.0]), np.array([0.0, 0.0, rng.uniform(0.1, 0.25)])
    raise ValueError(f"unknown trajectory style {style!r}; expected one of {TRAJECTORIES}")


def camera_pose(center: np.ndarray, rotvec: np.ndarray) -> RigidTransform:
    """World-to-camera transform of a camera at ``center`` with camera-to-world rotation ``rotvec``."""
    r_cw = rotation_from_axis_angle(rotvec)
    r = r_cw.T
    return RigidTransform(r, -r @ center)


def relative_pose(world_to_a: RigidTransform, world_to_b: RigidTransform) -> RigidTransform:
    """Transform taking camera-a coordinates to camera-b coordinates."""
    return world_to_b.compose(world_to_a.inverse())


def triplet_trajectory(rng: np.random.Generator, style: str) -> list[RigidTransform]:
    """Three world-to-camera poses (prev, target, next) around a jittered base."""
    base_c = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.1, 0.1), rng.uniform(-1.0, 1.0)])
    base_r = np.array([0.0, rng.uniform(-0.05, 0.05), 0.0])
    rot_step, move = _motion(rng, style)
    return [camera_pose(base_c + i * move, base_r + i * rot_step) for i in (-1, 0, 1)]


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Triplet:
    frames: np.ndarray                            # (3, 3, H, W): prev, target, next
    depths: np.ndarray                            # (3, H, W)
    poses: tuple[RigidTransform, RigidTransform]  # target->prev, target->next
    k: Intrinsics
    scene: int = 0


@dataclass
class Dataset:
    triplets: list[Triplet]
    k: Intrinsics
    manifest: dict

    def __len__(self):
        return len(self.triplets)


def quantize(image: np.ndarray) -> np.ndarray:
    return (np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def gt_is_strict_minimum(t: Triplet, scales: tuple[float, ...] = (0.8, 1.2)) -> bool:
    """True when the ground-truth depth scores strictly below every scaled depth, in both L1 modes."""
    sources = (t.frames[0], t.frames[2])
    for mode in L1_MODES:
        w = LossWeights(l1_mode=mode)
        at_gt = ground_truth_objective(t.frames[1], sources, t.poses, t.depths[1], t.k, w)
        for s in scales:
            if not at_gt < ground_truth_objective(t.frames[1], sources, t.poses, t.depths[1] * s, t.k, w):
                return False
    return True


def _render_triplet(scene: SceneSpec, cams: list[RigidTransform], k: Intrinsics, size, si: int) -> Triplet:
    renders = [render_view(scene, c, k, size) for c in cams]
    frames = np.stack([quantize(img) for img, _ in renders])
    depths = np.stack([d for _, d in renders])
    poses = (relative_pose(cams[1], cams[0]), relative_pose(cams[1], cams[2]))
    return Triplet(frames, depths, poses, k, si)


def generate_dataset(n_scenes: int, n_triplets: int, size: tuple[int, int] = (32, 96),
                     trajectory: str = "mixed", seed: int = 0) -> Dataset:
    """Render ``n_scenes`` x ``n_triplets`` triplets; images are 8-bit quantised.

    A triplet whose ground truth is not the strict minimum of the objective
    against +-20% depth scalings (occlusion-dominated views) is redrawn with
    a new trajectory from the same stream, so output stays seed-determined.
    """
    if n_triplets < 1 or n_scenes < 1:
        raise ValueError("need at least one scene and one triplet")
    if trajectory not in TRAJECTORIES:
        raise ValueError(f"unknown trajectory style {trajectory!r}; expected one of {TRAJECTORIES}")
    h, w = size
    k = Intrinsics.default_for(h, w)
    triplets = []
    for si, ss in enumerate(np.random.SeedSequence(seed).spawn(n_scenes)):
        rng = np.random.default_rng(ss)
        scene = random_scene(rng)
        for _ in range(n_triplets):
            for _ in range(_MAX_REDRAWS):
                t = _render_triplet(scene, triplet_trajectory(rng, trajectory), k, size, si)
                if gt_is_strict_minimum(t):
                    break
            else:
                raise RuntimeError(f"scene {si}: no trajectory with a minimum at ground truth "
                                   f"after {_MAX_REDRAWS} draws")
            triplets.append(t)
    manifest = {"seed": seed, "height": h, "width": w, "trajectory": trajectory,
                "scenes": n_scenes, "triplets_per_scene": n_triplets,
                "triplets": n_scenes * n_triplets}
    return Dataset(triplets, k, manifest)


def write_dataset(ds: Dataset, out) -> Path:
    """Write ``scene_###/frame_##.ppm``, depth PFMs, poses, intrinsics and a manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    by_scene: dict[int, list[Triplet]] = {}
    for t in ds.triplets:
        by_scene.setdefault(t.scene, []).append(t)
    for si, trips in sorted(by_scene.items()):
        sdir = out / f"scene_{si:03d}"
        sdir.mkdir(exist_ok=True)
        pairs = []
        for j, t in enumerate(trips):
            idx = [3 * j + i for i in range(3)]
            for fi, img, dep in zip(idx, t.frames, t.depths):
                write_ppm(sdir / f"frame_{fi:02d}.ppm", img)
                write_pfm(sdir / f"frame_{fi:02d}_depth.pfm", dep)
            for src, pose in zip((idx[0], idx[2]), t.poses):
                pairs.append({"triplet": j, "target": idx[1], "source": src, **pose.to_json()})
        (sdir / "poses.json").write_text(json.dumps({"pairs": pairs}, indent=1))
        (sdir / "intrinsics.json").write_text(json.dumps(ds.k.to_json(), indent=1))
    (out / "manifest.json").write_text(json.dumps(ds.manifest, indent=1, sort_keys=True))
    return out


def _need(path: Path) -> Path:
    if not path.exists():
        raise DataLayoutError(f"missing file: {path}")
    return path


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = json.loads(_need(root / "manifest.json").read_text())
    triplets = []
    k = None
    scene_dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("scene_"))
    if not scene_dirs:
        raise DataLayoutError(f"no scene_### directories under {root}")
    for si, sdir in enumerate(scene_dirs):
        k = Intrinsics.from_json(json.loads(_need(sdir / "intrinsics.json").read_text()))
        pairs = json.loads(_need(sdir / "poses.json").read_text())["pairs"]
        by_trip: dict[int, list[dict]] = {}
        for p in pairs:
            by_trip.setdefault(p["triplet"], []).append(p)
        for j in sorted(by_trip):
            recs = sorted(by_trip[j], key=lambda r: r["source"])
            tgt = recs[0]["target"]
            idx = [recs[0]["source"], tgt, recs[1]["source"]]
            frames = np.stack([read_ppm(_need(sdir / f"frame_{i:02d}.ppm")) for i in idx])
            depths = np.stack([read_pfm(_need(sdir / f"frame_{i:02d}_depth.pfm")) for i in idx])
            poses = tuple(RigidTransform.from_json(r) for r in recs)
            triplets.append(Triplet(frames, depths, poses, k, si))
    return Dataset(triplets, k, manifest)


def corrupt_depth(depth: np.ndarray, fraction: float, factor: float,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Multiply depth by ``factor`` at floor(fraction * N) seeded random pixels.

    Returns (corrupted depth, boolean corruption mask).
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if factor <= 0 or factor == 1:
        raise ValueError(f"factor must be positive and != 1, got {factor}")
    depth = np.asarray(depth)
    n = depth.size
    count = int(math.floor(fraction * n))
    rng = np.random.default_rng(seed)
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, count, replace=False)] = True
    mask = mask.reshape(depth.shape)
    out = depth.copy()
    out[mask] = depth[mask] * factor
    return out, mask
