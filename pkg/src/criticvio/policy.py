"""Adaptive per-modality weighting and multiplicative feature gating.

The weights emerge from training alone: no loss term sees them except
through the gated features.  A shifted softplus keeps them positive and
pins the zero-logit output to exactly 1, so an untrained (zero-initialized)
head gates nothing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import LatentFeatures
from .errors import ShapeMismatch

MODALITY_ORDER = ("flow", "imu_rot", "imu_trans")

TRACE_CSV_HEADER = (
    "seq",
    "frame",
    "w_flow",
    "w_imu_rot",
    "w_imu_trans",
    "n_flow",
    "n_imu_rot",
    "n_imu_trans",
)


def shifted_softplus(x: torch.Tensor, softness: float = 1.0) -> torch.Tensor:
    """Softplus reparameterized so the intercept sits at 1 for any softness.

    f(x) = (1/k) * ln(1 + exp(k * (x + x0))) with x0 = ln(exp(k) - 1) / k.
    The shift is evaluated through the same kernel as the main term, so
    f(0) == 1.0 holds exactly in floating point.
    """
    if softness <= 0:
        raise ValueError("softness must be positive")
    x0 = math.log(math.expm1(softness)) / softness
    anchor = F.softplus(
        torch.tensor(x0, dtype=x.dtype, device=x.device), beta=softness
    )
    # Adding (1 - anchor) instead of subtracting the anchor keeps the far
    # tail from being absorbed into the unit shift and leaves f(0) == 1.0
    # exact (1 - anchor is exact near 1, and anchor + (1 - anchor) == 1).
    return F.softplus(x + x0, beta=softness) + (1.0 - anchor)


@dataclass
class PolicyConfig:
    n_c: int = 32
    hidden: int = 64
    blocks: int = 2
    softness: float = 1.0
    dropout: float = 0.1


class ResidualMlp(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)
        self.act = nn.GELU()

    def forward(self, x):
        return x + self.act(self.fc2(self.act(self.fc1(x))))


class PolicyEncoder(nn.Module):
    """Concatenated latents -> residual MLP -> one positive weight per modality."""

    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.inp = nn.Linear(3 * cfg.n_c, cfg.hidden)
        self.act = nn.GELU()
        self.blocks = nn.Sequential(*[ResidualMlp(cfg.hidden) for _ in range(cfg.blocks)])
        self.dropout = nn.Dropout(cfg.dropout)
        self.head = nn.Linear(cfg.hidden, len(MODALITY_ORDER))
        # Zero logits at init => all weights exactly 1 (no gating until learned).
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, latents: LatentFeatures) -> torch.Tensor:
        x = latents.concat()
        if x.shape[-1] != 3 * self.cfg.n_c:
            raise ShapeMismatch(
                f"latent width {x.shape[-1]} != 3 * n_c = {3 * self.cfg.n_c}"
            )
        h = self.blocks(self.act(self.inp(x)))
        logits = self.head(self.dropout(h))  # [B, S-1, 3]
        weights = shifted_softplus(logits, self.cfg.softness)
        return weights.permute(0, 2, 1)  # [B, 3, S-1]


def apply_gating(latents: LatentFeatures, weights: torch.Tensor) -> LatentFeatures:
    """Multiply each modality's latents by its scalar weight per transition."""
    if weights.ndim != 3 or weights.shape[1] != len(MODALITY_ORDER):
        raise ShapeMismatch(f"expected weights [B, 3, S-1], got {tuple(weights.shape)}")
    if weights.shape[0] != latents.flow.shape[0] or weights.shape[2] != latents.flow.shape[1]:
        raise ShapeMismatch(
            f"weights {tuple(weights.shape)} incompatible with latents "
            f"{tuple(latents.flow.shape)}"
        )
    return LatentFeatures(
        flow=latents.flow * weights[:, 0, :, None],
        imu_rot=latents.imu_rot * weights[:, 1, :, None],
        imu_trans=latents.imu_trans * weights[:, 2, :, None],
    )


def min_max_normalize(values: np.ndarray) -> np.ndarray:
    """Per-column min-max scaling to [0, 1]; constant columns map to 0."""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min(axis=0, keepdims=True)
    hi = values.max(axis=0, keepdims=True)
    span = hi - lo
    out = np.zeros_like(values)
    nonzero = span[0] > 0
    out[:, nonzero] = (values[:, nonzero] - lo[:, nonzero]) / span[:, nonzero]
    return out


@dataclass
class PolicyTrace:
    """Per-frame raw and min-max-normalized weights for one sequence."""

    sequence_id: str
    frame_indices: list[int]
    weights: np.ndarray  # [N, 3] raw, modality order (flow, imu_rot, imu_trans)
    normalized: np.ndarray  # [N, 3] in [0, 1]

    @classmethod
    def from_weights(
        cls, sequence_id: str, frame_indices: list[int], weights: np.ndarray
    ) -> "PolicyTrace":
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[1] != len(MODALITY_ORDER):
            raise ShapeMismatch(f"expected [N, 3] weights, got {weights.shape}")
        if len(frame_indices) != weights.shape[0]:
            raise ShapeMismatch("frame_indices length must match weights")
        return cls(sequence_id, list(frame_indices), weights, min_max_normalize(weights))


def write_policy_trace(path, traces: list[PolicyTrace]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_CSV_HEADER)
        for trace in traces:
            for i, frame in enumerate(trace.frame_indices):
                writer.writerow(
                    [trace.sequence_id, frame]
                    + [f"{v:.9g}" for v in trace.weights[i]]
                    + [f"{v:.9g}" for v in trace.normalized[i]]
                )
