"""Toy depth network with offset-aligned multiscale decoder, and a pose network."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensorcore as tc
from .geometry import PoseTensor, pose_from_6dof_tensor
from .tensorcore import Parameter, Tensor
from .warp import upsample_and_align

N_SCALES = 4
POSE_SCALE = 0.01
SNAPSHOT_MAGIC = b"SRDWSNAP"
SNAPSHOT_VERSION = 1


class SnapshotError(ValueError):
    """Snapshot bytes are malformed or do not match the model's parameters."""


@dataclass
class DepthNetConfig:
    height: int = 32
    width: int = 96
    encoder_channels: tuple[int, ...] = (8, 16, 32)
    decoder_channels: tuple[int, ...] = (8, 8, 16, 32)
    pose_channels: tuple[int, ...] = (16, 32, 32)
    use_offsets: bool = True

    def __post_init__(self):
        if self.height % 8 or self.width % 8:
            raise ValueError(f"input size {self.height}x{self.width} must be divisible by 8")
        if len(self.encoder_channels) != N_SCALES - 1 or len(self.decoder_channels) != N_SCALES:
            raise ValueError("need 3 encoder widths and 4 decoder widths")


@dataclass
class DepthNetOutput:
    disparities: list[Tensor]   # fine to coarse: full, 1/2, 1/4, 1/8
    offsets: list[Tensor]       # O for scales full, 1/2, 1/4


class Conv:
    """3x3 (or k x k) convolution layer holding its own Parameters."""

    def __init__(self, name: str, cin: int, cout: int, rng: np.random.Generator,
                 k: int = 3, stride: int = 1, zero: bool = False, gain: float = 1.0):
        std = 0.0 if zero else gain * np.sqrt(2.0 / (cin * k * k))
        self.weight = Parameter(rng.normal(0.0, std, (cout, cin, k, k)) if std else np.zeros((cout, cin, k, k)),
                                f"{name}.weight")
        self.bias = Parameter(np.zeros((1, cout, 1, 1)), f"{name}.bias")
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return tc.conv2d(x, self.weight, self.bias, stride=self.stride)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class DepthNet:
    """Strided ELU encoder and coarse-to-fine decoder with disparity offset refinement.

    At each finer scale i the offset head predicts O from the decoder feature
    and the upsampled coarser decoder feature; the coarser disparity is
    upsampled, warped by O and concatenated with the feature to produce the
    sigmoid disparity of scale i.
    """

    def __init__(self, config: DepthNetConfig, rng: np.random.Generator):
        self.config = config
        e, d = config.encoder_channels, config.decoder_channels
        enc_widths = [e[0]] + list(e)  # stem at full resolution, then three stride-2 levels
        self.stem = Conv("depth.enc0", 3, enc_widths[0], rng)
        self.down = [Conv(f"depth.enc{i + 1}", enc_widths[i], enc_widths[i + 1], rng, stride=2)
                     for i in range(3)]
        # decoder: index 0 full resolution ... 3 coarsest
        self.dec = {3: Conv("depth.dec3", enc_widths[3], d[3], rng)}
        for i in (2, 1, 0):
            self.dec[i] = Conv(f"depth.dec{i}", enc_widths[i] + d[i + 1], d[i], rng)
        self.head = {3: Conv("depth.disp3", d[3], 1, rng, gain=0.1)}
        self.offset_head = {}
        for i in (2, 1, 0):
            self.offset_head[i] = Conv(f"depth.offset{i}", d[i] + d[i + 1], 2, rng, zero=True)
            self.head[i] = Conv(f"depth.disp{i}", d[i] + 1, 1, rng, gain=0.1)

    def parameters(self) -> list[Parameter]:
        layers = [self.stem, *self.down, *self.dec.values(), *self.head.values(), *self.offset_head.values()]
        return [p for layer in layers for p in layer.parameters()]

    def forward(self, image) -> DepthNetOutput:
        image = image if isinstance(image, Tensor) else Tensor(np.asarray(image))
        cfg = self.config
        if image.shape[1:] != (3, cfg.height, cfg.width):
            raise tc.ShapeError(f"expected (B, 3, {cfg.height}, {cfg.width}), got {image.shape}")
        feats = [tc.elu(self.stem(image))]
        for conv in self.down:
            feats.append(tc.elu(conv(feats[-1])))
        dec = {3: tc.elu(self.dec[3](feats[3]))}
        disp = {3: tc.sigmoid(self.head[3](dec[3]))}
        offsets = {}
        for i in (2, 1, 0):
            up = tc.upsample_bilinear(dec[i + 1], 2)
            dec[i] = tc.elu(self.dec[i](tc.concat_channels([feats[i], up])))
            offset = self.offset_head[i](tc.concat_channels([dec[i], up]))
            if not cfg.use_offsets:
                offset = offset * 0.0
            offsets[i] = offset
            refined = upsample_and_align(disp[i + 1], offset)
            disp[i] = tc.sigmoid(self.head[i](tc.concat_channels([dec[i], refined])))
        return DepthNetOutput([disp[i] for i in range(4)], [offsets[i] for i in range(3)])

    __call__ = forward


class PoseNet:
    """Pairwise pose regressor applied to (target, prev) and (target, next).

    Conv stack, spatial mean and a 1x1 head give a 6-vector (axis-angle,
    translation) that is scaled by 0.01 and mapped through the exponential map.
    """

    def __init__(self, config: DepthNetConfig, rng: np.random.Generator):
        widths = (6,) + tuple(config.pose_channels)
        self.convs = [Conv(f"pose.conv{i}", widths[i], widths[i + 1], rng, stride=2)
                      for i in range(len(widths) - 1)]
        self.head = Conv("pose.head", widths[-1], 6, rng, k=1, gain=0.1)

    def parameters(self) -> list[Parameter]:
        return [p for layer in (*self.convs, self.head) for p in layer.parameters()]

    def pair(self, target: Tensor, source: Tensor) -> Tensor:
        x = tc.concat_channels([target, source])
        for conv in self.convs:
            x = tc.elu(conv(x))
        return self.head(tc.mean(x, axis=(2, 3))) * POSE_SCALE

    def forward(self, frames: Sequence) -> tuple[PoseTensor, PoseTensor]:
        """Poses target->prev and target->next for frames (prev, target, next)."""
        if len(frames) != 3:
            raise ValueError(f"pose network needs 3 frames, got {len(frames)}")
        frames = [f if isinstance(f, Tensor) else Tensor(np.asarray(f)) for f in frames]
        if len({f.shape for f in frames}) != 1:
            raise tc.ShapeError("pose network frames must share one shape")
        prev, target, nxt = frames
        return pose_from_6dof_tensor(self.pair(target, prev)), pose_from_6dof_tensor(self.pair(target, nxt))

    __call__ = forward


@dataclass
class WeightSnapshot:
    values: dict[str, np.ndarray]
    epoch: int = 0

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def to_bytes(self) -> bytes:
        """magic, version, epoch, count, then per parameter: name, shape, float32 LE values."""
        out = [SNAPSHOT_MAGIC, struct.pack("<IiI", SNAPSHOT_VERSION, self.epoch, len(self.values))]
        for name in sorted(self.values):
            arr = np.ascontiguousarray(self.values[name], dtype="<f4")
            raw = name.encode("utf-8")
            out.append(struct.pack("<I", len(raw)) + raw)
            out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "WeightSnapshot":
        if not buf.startswith(SNAPSHOT_MAGIC):
            raise SnapshotError("not a weight snapshot (bad magic)")
        pos = len(SNAPSHOT_MAGIC)

        def take(fmt):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(buf):
                raise SnapshotError("truncated snapshot")
            vals = struct.unpack_from(fmt, buf, pos)
            pos += size
            return vals

        version, epoch, count = take("<IiI")
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {version}")
        values = {}
        for _ in range(count):
            (n,) = take("<I")
            if pos + n > len(buf):
                raise SnapshotError("truncated snapshot")
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = take("<I")
            shape = take(f"<{ndim}I")
            nbytes = 4 * int(np.prod(shape))
            if pos + nbytes > len(buf):
                raise SnapshotError(f"truncated snapshot in {name}")
            values[name] = np.frombuffer(buf, dtype="<f4", count=int(np.prod(shape)), offset=pos) \
                .reshape(shape).astype(np.float32)
            pos += nbytes
        if pos != len(buf):
            raise SnapshotError(f"{len(buf) - pos} trailing bytes after snapshot")
        return cls(values, epoch)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightSnapshot":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass
class Network:
    """Depth and pose networks sharing one parameter namespace."""

    config: DepthNetConfig = field(default_factory=DepthNetConfig)
    seed: int = 0

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self.depth = DepthNet(self.config, rng)
        self.pose = PoseNet(self.config, rng)

    def parameters(self) -> list[Parameter]:
        return self.depth.parameters() + self.pose.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def snapshot(self, epoch: int = 0) -> WeightSnapshot:
        return WeightSnapshot({p.name: p.data.copy() for p in self.parameters()}, epoch)

    def restore(self, snap: WeightSnapshot):
        params = self.named_parameters()
        missing = sorted(set(params) - set(snap.values))
        extra = sorted(set(snap.values) - set(params))
        if missing or extra:
            raise SnapshotError(f"snapshot mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name in sorted(params):
            if snap.values[name].shape != params[name].shape:
                raise SnapshotError(f"snapshot mismatch: {name} has shape {snap.values[name].shape}, "
                                    f"model expects {params[name].shape}")
        for name, p in params.items():
            p.assign(snap.values[name])

    @classmethod
    def from_snapshot(cls, snap: WeightSnapshot, config: DepthNetConfig | None = None) -> "Network":
        net = cls(config or DepthNetConfig())
        net.restore(snap)
        return net
