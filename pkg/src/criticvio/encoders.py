"""Feature encoders mapping flow fields and IMU windows to latent vectors.

Both encoders process each of the S-1 transitions independently (the time
axis is folded into the batch), so identical transitions always produce
identical latents.  Convolution trunks are bias-free with activations that
fix zero, which keeps the linear head's bias the exact output for an
all-zero input.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ShapeMismatch, UnsupportedChannels


@dataclass
class EncoderConfig:
    n_c: int = 32  # latent width per modality
    conv_channels: tuple[int, ...] = (16, 32)
    residual_blocks: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        if self.n_c <= 0:
            raise ValueError("n_c must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class LatentFeatures:
    """Per-modality latents, each of shape [B, S-1, N_C]."""

    flow: torch.Tensor
    imu_rot: torch.Tensor
    imu_trans: torch.Tensor

    def concat(self) -> torch.Tensor:
        return torch.cat([self.flow, self.imu_rot, self.imu_trans], dim=-1)

    def imu_context(self) -> torch.Tensor:
        return torch.cat([self.imu_rot, self.imu_trans], dim=-1)

    def detach(self) -> "LatentFeatures":
        return LatentFeatures(
            self.flow.detach(), self.imu_rot.detach(), self.imu_trans.detach()
        )

    def as_dict(self) -> dict[str, torch.Tensor]:
        return {"flow": self.flow, "imu_rot": self.imu_rot, "imu_trans": self.imu_trans}


def cast_input(x: torch.Tensor) -> torch.Tensor:
    """Replicate single-channel image-like input to three channels."""
    if x.ndim != 5:
        raise ShapeMismatch(f"expected [B, S, C, H, W], got {tuple(x.shape)}")
    c = x.shape[2]
    if c == 3:
        return x
    if c == 1:
        return x.expand(-1, -1, 3, -1, -1)
    raise UnsupportedChannels(f"cannot cast {c} channels to 3")


class ResidualConv2d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.act = nn.GELU()

    def forward(self, x):
        return x + self.act(self.conv2(self.act(self.conv1(x))))


class ResidualConv1d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=1, bias=False)
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1, bias=False)
        self.act = nn.GELU()

    def forward(self, x):
        return x + self.act(self.conv2(self.act(self.conv1(x))))


def _stem_stages(height: int, width: int) -> int:
    """Stride-2 stages needed to shrink the spatial extent to <= 8 x 16."""
    stages = 0
    h, w = height, width
    while h > 8 or w > 16:
        h = max(1, (h + 1) // 2)
        w = max(1, (w + 1) // 2)
        stages += 1
    return max(stages, 1)


class FlowEncoder(nn.Module):
    """Strided conv stem + residual trunk + pooled linear head over flow."""

    def __init__(self, cfg: EncoderConfig, image_size: tuple[int, int]):
        super().__init__()
        self.cfg = cfg
        self.image_size = tuple(image_size)
        stages = _stem_stages(*self.image_size)
        channels = list(cfg.conv_channels)
        while len(channels) < stages:
            channels.append(channels[-1])
        stem = []
        in_ch = 2
        for out_ch in channels[:stages]:
            stem.append(nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1, bias=False))
            stem.append(nn.GELU())
            in_ch = out_ch
        self.stem = nn.Sequential(*stem)
        self.blocks = nn.Sequential(
            *[ResidualConv2d(in_ch) for _ in range(cfg.residual_blocks)]
        )
        self.dropout = nn.Dropout(cfg.dropout)
        self.head = nn.Linear(in_ch, cfg.n_c)

    def forward(self, flows: torch.Tensor) -> torch.Tensor:
        if flows.ndim != 5 or flows.shape[2] != 2:
            raise ShapeMismatch(f"expected [B, S-1, 2, H, W], got {tuple(flows.shape)}")
        if tuple(flows.shape[3:]) != self.image_size:
            raise ShapeMismatch(
                f"flow size {tuple(flows.shape[3:])} != configured {self.image_size}"
            )
        b, s = flows.shape[:2]
        x = flows.reshape(b * s, 2, *self.image_size)
        x = self.blocks(self.stem(x))
        x = x.mean(dim=(2, 3))
        return self.head(self.dropout(x)).reshape(b, s, self.cfg.n_c)


class InertialBranch(nn.Module):
    """1-D residual stack over the intra-interval sample axis."""

    def __init__(self, cfg: EncoderConfig, samples_per_interval: int):
        super().__init__()
        channels = cfg.conv_channels[-1]
        self.stem = nn.Sequential(
            nn.Conv1d(3, channels, 3, padding=1, bias=False), nn.GELU()
        )
        self.blocks = nn.Sequential(
            *[ResidualConv1d(channels) for _ in range(cfg.residual_blocks)]
        )
        self.dropout = nn.Dropout(cfg.dropout)
        self.head = nn.Linear(channels * samples_per_interval, cfg.n_c)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.blocks(self.stem(x))
        return self.head(self.dropout(x.flatten(1)))


class InertialEncoder(nn.Module):
    """Two identical (separately parameterized) branches.

    The rotational branch sees only gyroscope columns, the translational
    branch only accelerometer columns, so each output is exactly isolated
    to its own sensor channels.
    """

    def __init__(self, cfg: EncoderConfig, samples_per_interval: int = 11):
        super().__init__()
        self.cfg = cfg
        self.samples_per_interval = samples_per_interval
        self.rot = InertialBranch(cfg, samples_per_interval)
        self.trans = InertialBranch(cfg, samples_per_interval)

    def forward(self, imu: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if imu.ndim != 4 or imu.shape[3] != 6:
            raise ShapeMismatch(f"expected [B, S-1, K, 6], got {tuple(imu.shape)}")
        if imu.shape[2] != self.samples_per_interval:
            raise ShapeMismatch(
                f"K = {imu.shape[2]} != configured {self.samples_per_interval}"
            )
        b, s, k, _ = imu.shape
        flat = imu.reshape(b * s, k, 6)
        accel = flat[:, :, 0:3].transpose(1, 2)  # [B*, 3, K]
        gyro = flat[:, :, 3:6].transpose(1, 2)
        imu_rot = self.rot(gyro).reshape(b, s, self.cfg.n_c)
        imu_trans = self.trans(accel).reshape(b, s, self.cfg.n_c)
        return imu_rot, imu_trans
