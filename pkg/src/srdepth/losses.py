"""Training objectives: photometric, min-reprojection, automask, smoothness,
masked distillation and the weighted total."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensorcore as tc
from .geometry import depth_to_disparity
from .imaging import image_gradients, ssim
from .tensorcore import Tensor
from .warp import SynthesizedView, synthesize_view

L1_MODES = ("paper", "conventional")


@dataclass
class LossWeights:
    """Loss mixing weights.

    ``l1_mode`` selects the L1 coefficient of the photometric term: "paper"
    uses 2 * alpha as printed, "conventional" uses 1 - alpha.
    """

    alpha: float = 0.85
    lambda_s: float = 1e-3
    gamma_d: float = 0.1
    l1_mode: str = "paper"

    def __post_init__(self):
        if self.l1_mode not in L1_MODES:
            raise ValueError(f"l1_mode must be one of {L1_MODES}, got {self.l1_mode!r}")
        for name in ("alpha", "lambda_s", "gamma_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def l1_weight(self) -> float:
        return 2.0 * self.alpha if self.l1_mode == "paper" else 1.0 - self.alpha

    def to_json(self) -> dict:
        return asdict(self)


def _tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    while arr.ndim < 4:
        arr = arr[None]
    return Tensor(arr)


def photometric_map(a, b, w: LossWeights) -> Tensor:
    """Unmasked per-pixel photometric error, channel-averaged to (B, 1, H, W)."""
    a, b = _tensor(a), _tensor(b)
    structural = (1.0 - ssim(a, b)) * (w.alpha / 2.0)
    l1 = tc.abs(a - b) * w.l1_weight
    return tc.mean(structural + l1, axis=1)


def photometric_pair(target, synth: SynthesizedView, w: LossWeights) -> Tensor:
    """Photometric error against one synthesized view, zero where the view is invalid."""
    f = photometric_map(target, synth.image, w)
    return f * synth.validity


def _masked_candidates(target, synths, w):
    if not synths:
        raise ValueError("need at least one synthesized view")
    maps, valid = [], []
    for s in synths:
        f = photometric_map(target, s.image, w)
        ok = s.validity > 0
        maps.append(tc.where(ok, f, np.inf))
        valid.append(ok)
    return maps, np.logical_or.reduce(valid)


def min_reprojection(target, synths: Sequence[SynthesizedView], w: LossWeights) -> Tensor:
    """Per-pixel minimum photometric error over the valid views; 0 where none is valid."""
    maps, any_valid = _masked_candidates(target, list(synths), w)
    best = tc.spatial_min_over_set(maps)
    return tc.where(any_valid, best, 0.0)


def automask(target, synths: Sequence[SynthesizedView], sources, w: LossWeights) -> np.ndarray:
    """Binary map, 1 where the best reconstruction strictly beats the best raw source."""
    with tc.no_grad():
        maps, _ = _masked_candidates(target, list(synths), w)
        recon = np.min(np.stack([m.data for m in maps]), axis=0)
        identity = np.min(np.stack([photometric_map(target, s, w).data for s in sources]), axis=0)
    return (recon < identity).astype(np.float32)


def smoothness(disparity, image) -> Tensor:
    """Edge-aware smoothness of mean-normalised disparity, reduced to a scalar."""
    disparity = _tensor(disparity)
    image = _tensor(image)
    m = tc.mean(disparity, axis=(2, 3))
    if np.any(m.data <= 1e-7):
        raise ValueError("degenerate disparity: spatial mean <= 1e-7")
    d_norm = disparity / m
    dx, dy = image_gradients(d_norm)
    with tc.no_grad():
        ix, iy = image_gradients(image)
        wx = np.exp(-np.mean(np.abs(ix.data), axis=1, keepdims=True))
        wy = np.exp(-np.mean(np.abs(iy.data), axis=1, keepdims=True))
    return tc.mean(tc.abs(dx) * wx + tc.abs(dy) * wy)


def distillation_per_scale(student_depths: Sequence, teacher_depths: Sequence,
                           masks: Sequence | None = None) -> list[Tensor]:
    """Masked mean |teacher - student| per scale.

    The denominator is the mask mass; a scale whose mask is empty contributes
    0. Teacher depths are constants.
    """
    if len(student_depths) != len(teacher_depths):
        raise ValueError("student and teacher scale counts differ")
    out = []
    for i, (s, t) in enumerate(zip(student_depths, teacher_depths)):
        s = _tensor(s)
        t_arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=s.dtype)
        m = np.ones(s.shape, dtype=s.dtype) if masks is None else \
            np.broadcast_to(np.asarray(masks[i], dtype=s.dtype), s.shape)
        if t_arr.shape != s.shape:
            raise tc.ShapeError(f"scale {i}: teacher {t_arr.shape} vs student {s.shape}")
        mass = float(m.sum(dtype=np.float64))
        if mass <= 0:
            out.append(tc.sum(s * 0.0))
            continue
        out.append(tc.sum(tc.abs(s - t_arr) * m) * (1.0 / mass))
    return out


def distillation(student_depths, teacher_depths, masks=None) -> Tensor:
    parts = distillation_per_scale(student_depths, teacher_depths, masks)
    return _average(parts)


def _average(parts: Sequence[Tensor]) -> Tensor:
    acc = parts[0]
    for p in parts[1:]:
        acc = acc + p
    return acc * (1.0 / len(parts))


def total(pe_maps: Sequence, mus: Sequence, smooth: Sequence, distill: Sequence | None,
          w: LossWeights, gamma: float | None = None) -> Tensor:
    """(1/S) sum_i [mean(mu * L_pe) + lambda * L_s + gamma * L_d]_i over S scales.

    ``gamma`` overrides ``w.gamma_d`` (the trainer forces 0 in the first epoch).
    """
    gamma = w.gamma_d if gamma is None else gamma
    n = len(pe_maps)
    if len(mus) != n or len(smooth) != n or (distill is not None and len(distill) != n):
        raise ValueError("all loss components need the same number of scales")
    per_scale = []
    for i in range(n):
        pe = _tensor(pe_maps[i])
        term = tc.mean(pe * np.asarray(mus[i], dtype=pe.dtype)) \
            + _tensor(smooth[i]) * w.lambda_s
        if distill is not None and gamma != 0:
            term = term + _tensor(distill[i]) * gamma
        per_scale.append(term)
    return _average(per_scale)


def ground_truth_objective(target, sources, poses, depth, k, w: LossWeights) -> float:
    """Single full-resolution total loss (no distillation) for a fixed depth and pose.

    ``target`` and ``sources`` are (3, H, W) frames, ``depth`` is (H, W);
    used to check that ground truth minimises the objective.
    """
    with tc.no_grad():
        target = np.asarray(target, dtype=np.float64)[None]
        sources = [np.asarray(s, dtype=np.float64)[None] for s in sources]
        d = np.asarray(depth, dtype=np.float64)[None, None]
        views = [synthesize_view(s, d, p, k) for s, p in zip(sources, poses)]
        pe = min_reprojection(target, views, w)
        mu = automask(target, views, sources, w)
        smooth = smoothness(depth_to_disparity(d), target)
        return total([pe], [mu], [smooth], None, w).item()
