"""Single-stage online self-reference distillation.

Epoch 1 is pure self-supervision. At every epoch boundary the student's
weights are snapshotted and, from epoch 2 on, that frozen snapshot acts as
the teacher: its multiscale depths become pseudo-labels, filtered by the
multiview check on its own target/source depths and poses.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import losses as L
from . import tensorcore as tc
from .geometry import Intrinsics, RigidTransform, disparity_to_depth
from .losses import LossWeights
from .metrics import EvalResult, evaluate, mean_result
from .model import DepthNetConfig, Network, WeightSnapshot
from .mvcheck import check_pair, downsample_mask, filter_mask, soft_mask
from .optim import AdamW
from .synthscene import Triplet
from .tensorcore import Tape, Tensor
from .warp import synthesize_view

log = logging.getLogger(__name__)

MASK_MODES = ("hard", "soft", "none")
LOG_COLUMNS = ["epoch", "step", "L_pe", "L_s", "L_d", "total", "mask_coverage",
               "val_abs_rel", "val_sq_rel", "val_rmse", "val_rmse_log", "val_delta1"]


class TrainingDivergedError(FloatingPointError):
    """The objective became non-finite; the message lists every component."""


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 2
    lr: float = 1e-4
    gamma: float = 0.1
    weights: LossWeights = field(default_factory=LossWeights)
    mask_mode: str = "hard"
    seed: int = 0
    mvc_alpha: float = 4.0
    mvc_beta: float = 4.0
    mvc_pose: str = "teacher"
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    model: DepthNetConfig = field(default_factory=DepthNetConfig)

    def __post_init__(self):
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.mvc_pose not in ("teacher", "student"):
            raise ValueError(f"mvc_pose must be 'teacher' or 'student', got {self.mvc_pose!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def gamma_for_epoch(self, epoch: int) -> float:
        return 0.0 if epoch <= 1 else self.gamma

    def to_json(self) -> dict:
        out = asdict(self)
        out["betas"] = list(self.betas)
        out["model"]["encoder_channels"] = list(self.model.encoder_channels)
        out["model"]["decoder_channels"] = list(self.model.decoder_channels)
        out["model"]["pose_channels"] = list(self.model.pose_channels)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        obj["weights"] = LossWeights(**obj.get("weights", {}))
        model = dict(obj.get("model", {}))
        for key in ("encoder_channels", "decoder_channels", "pose_channels"):
            if key in model:
                model[key] = tuple(model[key])
        obj["model"] = DepthNetConfig(**model)
        if "betas" in obj:
            obj["betas"] = tuple(obj["betas"])
        return cls(**obj)


@dataclass
class EpochState:
    epoch: int
    teacher: WeightSnapshot | None
    stats: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def __post_init__(self):
        if (self.teacher is None) != (self.epoch == 1):
            raise ValueError("the teacher is absent exactly in epoch 1")
        if self.teacher is not None and self.teacher.epoch != self.epoch - 1:
            raise ValueError(f"teacher from epoch {self.teacher.epoch} installed in epoch {self.epoch}")


@dataclass
class Batch:
    frames: np.ndarray            # (3, B, 3, H, W): prev, target, next
    gt_depth: np.ndarray          # (B, H, W) target depth
    k: Intrinsics

    @classmethod
    def from_triplets(cls, triplets: Sequence[Triplet]) -> "Batch":
        frames = np.stack([t.frames for t in triplets], axis=1)
        return cls(frames.astype(np.float32), np.stack([t.depths[1] for t in triplets]), triplets[0].k)

    def tensors(self) -> list[Tensor]:
        return [Tensor(self.frames[i]) for i in range(3)]


@dataclass
class TeacherOutputs:
    target_depths: list[np.ndarray]               # 4 scales, (B, 1, h, w)
    source_depths: list[np.ndarray]               # prev, next at full scale
    poses: list[list[RigidTransform]]             # [source][batch]


def teacher_infer(teacher: Network | WeightSnapshot, batch: Batch,
                  config: DepthNetConfig | None = None) -> TeacherOutputs:
    """Teacher depths at all scales, source depths and poses, with nothing recorded."""
    if isinstance(teacher, WeightSnapshot):
        teacher = Network.from_snapshot(teacher, config)
    with tc.no_grad():
        frames = batch.tensors()
        out = teacher.depth(frames[1])
        targets = [np.asarray(disparity_to_depth(d.data)) for d in out.disparities]
        sources = [np.asarray(disparity_to_depth(teacher.depth(frames[i]).disparities[0].data)) for i in (0, 2)]
        poses = [p.to_transforms() for p in teacher.pose(frames)]
    return TeacherOutputs(targets, sources, poses)


def distillation_masks(t_out: TeacherOutputs, k: Intrinsics, mode: str, alpha: float = 4.0,
                       beta: float = 4.0, poses: list[list[RigidTransform]] | None = None,
                       ) -> tuple[list[np.ndarray], float]:
    """Full-resolution mask from the multiview check, decimated to the four scales.

    Returns the per-scale masks and the full-resolution mask coverage.
    """
    full = t_out.target_depths[0]
    poses = t_out.poses if poses is None else poses
    b = full.shape[0]
    if mode == "none":
        mask = np.ones_like(full)
    else:
        mask = np.zeros_like(full)
        for i in range(b):
            reports = [check_pair(full[i, 0], t_out.source_depths[j][i, 0], poses[j][i], k) for j in range(2)]
            if mode == "hard":
                mask[i, 0] = filter_mask(reports, alpha, beta)
            else:
                mask[i, 0] = soft_mask(reports)
    scaled = [downsample_mask(mask, 2 ** s) for s in range(len(t_out.target_depths))]
    return scaled, float(mask.mean(dtype=np.float64))


def objective(net: Network, batch: Batch, cfg: TrainConfig, t_out: TeacherOutputs | None = None,
              gamma: float = 0.0) -> tuple[Tensor, dict]:
    """Total loss of one batch and its logged components."""
    w = cfg.weights
    frames = batch.tensors()
    target = frames[1]
    out = net.depth(target)
    poses = net.pose(frames)
    pe_maps, mus, smooth = [], [], []
    for i, d in enumerate(out.disparities):
        up = d if i == 0 else tc.upsample_bilinear(d, 2 ** i)
        depth = disparity_to_depth(up)
        synths = [synthesize_view(frames[s], depth, poses[j], batch.k) for j, s in enumerate((0, 2))]
        pe_maps.append(L.min_reprojection(target, synths, w))
        mus.append(L.automask(target, synths, [frames[0], frames[2]], w))
        smooth.append(L.smoothness(up, target))
    distill = None
    coverage = 1.0
    if t_out is not None and gamma > 0:
        student_poses = None
        if cfg.mvc_pose == "student":
            student_poses = [p.to_transforms() for p in poses]
        masks, coverage = distillation_masks(t_out, batch.k, cfg.mask_mode, cfg.mvc_alpha, cfg.mvc_beta,
                                             student_poses)
        student = [disparity_to_depth(d) for d in out.disparities]
        distill = L.distillation_per_scale(student, t_out.target_depths, masks)
    loss = L.total(pe_maps, mus, smooth, distill, w, gamma)
    parts = {
        "L_pe": float(np.mean([np.mean(p.data * m) for p, m in zip(pe_maps, mus)])),
        "L_s": float(np.mean([s.item() for s in smooth])),
        "L_d": float(np.mean([d.item() for d in distill])) if distill is not None else 0.0,
        "total": loss.item(),
        "mask_coverage": coverage,
    }
    return loss, parts


def train_step(net: Network, optimizer: AdamW, batch: Batch, cfg: TrainConfig,
               t_out: TeacherOutputs | None = None, gamma: float = 0.0) -> tuple[float, dict]:
    """One forward/backward pass and one AdamW update."""
    with Tape() as tape:
        loss, parts = objective(net, batch, cfg, t_out, gamma)
    if not math.isfinite(parts["total"]):
        raise TrainingDivergedError(f"non-finite loss; components {parts}; ops: {tape.validate()[:5]}")
    tape.backward(loss)
    optimizer.step()
    return parts["total"], parts


def validate(net: Network, triplets: Sequence[Triplet], batch_size: int = 8) -> EvalResult:
    """Mean metrics of full-resolution predictions with median scaling and the 80 cap."""
    results = []
    with tc.no_grad():
        for i in range(0, len(triplets), batch_size):
            chunk = triplets[i:i + batch_size]
            frames = np.stack([t.frames[1] for t in chunk]).astype(np.float32)
            disp = net.depth(Tensor(frames)).disparities[0].data
            depth = disparity_to_depth(disp.astype(np.float64))
            results += [evaluate(depth[j, 0], t.depths[1]) for j, t in enumerate(chunk)]
    return mean_result(results)


@dataclass
class TrainResult:
    network: Network
    history: list[dict]
    snapshots: list[WeightSnapshot]


def train(triplets: Sequence[Triplet], cfg: TrainConfig, val: Sequence[Triplet] | None = None,
          out_dir=None, on_epoch: Callable[[EpochState], None] | None = None) -> TrainResult:
    """Run the full schedule. Deterministic given ``cfg.seed``.

    With ``out_dir`` the config, per-epoch snapshots and the metrics CSV are
    written there as training proceeds.
    """
    if not triplets:
        raise ValueError("training set is empty")
    triplets = list(triplets)
    net = Network(cfg.model, seed=cfg.seed)
    opt = AdamW(net.parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=1, sort_keys=True))
    history: list[dict] = []
    snapshots: list[WeightSnapshot] = []
    teacher_snap: WeightSnapshot | None = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        state = EpochState(epoch, teacher_snap, history=history)
        gamma = cfg.gamma_for_epoch(epoch)
        teacher = Network.from_snapshot(teacher_snap, cfg.model) if teacher_snap is not None else None
        order = rng.permutation(len(triplets))
        sums: dict[str, float] = {}
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = Batch.from_triplets([triplets[i] for i in order[start:start + cfg.batch_size]])
            t_out = teacher_infer(teacher, batch) if teacher is not None and gamma > 0 else None
            _, parts = train_step(net, opt, batch, cfg, t_out, gamma)
            for key, val_ in parts.items():
                sums[key] = sums.get(key, 0.0) + val_
            n_batches += 1
            step += 1
        row = {"epoch": epoch, "step": step}
        row.update({key: sums[key] / n_batches for key in ("L_pe", "L_s", "L_d", "total", "mask_coverage")})
        if val:
            res = validate(net, val)
            row.update({"val_abs_rel": res.abs_rel, "val_sq_rel": res.sq_rel, "val_rmse": res.rmse,
                        "val_rmse_log": res.rmse_log, "val_delta1": res.delta1})
        else:
            row.update({c: float("nan") for c in LOG_COLUMNS if c.startswith("val_")})
        history.append(row)
        state.stats = row
        log.info("epoch %d: %s", epoch, {k: round(v, 5) for k, v in row.items()})
        teacher_snap = net.snapshot(epoch)
        snapshots.append(teacher_snap)
        if out is not None:
            teacher_snap.save(out / f"epoch_{epoch:02d}.snap")
            write_log(history, out / "metrics.csv")
        if on_epoch is not None:
            on_epoch(state)
    return TrainResult(net, history, snapshots)


def write_log(history: list[dict], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"], row["step"]] + [repr(float(row[c])) for c in LOG_COLUMNS[2:]])


def mask_exclusion(mask: np.ndarray, corrupted: np.ndarray) -> float:
    """Fraction of corrupted-pixel mass a (hard or soft) mask removes from supervision."""
    corrupted = np.asarray(corrupted, dtype=bool)
    if not corrupted.any():
        raise ValueError("no corrupted pixels")
    return float(np.mean(1.0 - np.asarray(mask, dtype=np.float64)[corrupted]))
