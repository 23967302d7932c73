"""Realness critic over pose sequences and critic-guided iteration selection.

The critic shares the pose transformer's encoder layout: embedded poses are
concatenated with the conditioning latents, passed through a Pre-LN
attention stack, mean-pooled over time, and projected to one unbounded
scalar per sequence (higher = more real).  At inference the per-iteration
scores pick the best refinement stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .encoders import LatentFeatures
from .errors import ShapeMismatch
from .pose_transformer import AttentionBlock, TransformerConfig


@dataclass
class CriticConfig:
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    dropout: float = 0.1
    feature_dim: int = 96  # 3 * n_c conditioning width
    pose_embed_dim: int = 32
    max_transitions: int = 8
    ffn_multiplier: int = 2
    zero_init_residual: bool = True

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")


@dataclass
class SelectionResult:
    """Critic-selected pose per batch element and the chosen iteration index."""

    pose: torch.Tensor  # [B, S-1, 6]
    index: torch.Tensor  # [B] long


class Critic(nn.Module):
    def __init__(self, cfg: CriticConfig):
        super().__init__()
        self.cfg = cfg
        self.pose_embed = nn.Linear(6, cfg.pose_embed_dim)
        block_cfg = TransformerConfig(
            layers=cfg.layers,
            hidden=cfg.hidden,
            heads=cfg.heads,
            dropout=cfg.dropout,
            iterations=1,
            feature_dim=cfg.feature_dim,
            noise_dim=1,
            context_dim=1,
            max_transitions=cfg.max_transitions,
            ffn_multiplier=cfg.ffn_multiplier,
            zero_init_residual=cfg.zero_init_residual,
        )
        self.inp = nn.Linear(cfg.feature_dim + cfg.pose_embed_dim, cfg.hidden)
        self.pos = nn.Parameter(0.02 * torch.randn(cfg.max_transitions, cfg.hidden))
        self.blocks = nn.ModuleList(
            [AttentionBlock(block_cfg, film=False) for _ in range(cfg.layers)]
        )
        self.ln_out = nn.LayerNorm(cfg.hidden)
        self.head = nn.Linear(cfg.hidden, 1)
        if cfg.zero_init_residual:
            nn.init.zeros_(self.head.weight)

    def critic_score(self, latents: LatentFeatures, poses: torch.Tensor) -> torch.Tensor:
        """Score each pose sequence; returns one scalar per batch row."""
        if poses.ndim != 3 or poses.shape[2] != 6:
            raise ShapeMismatch(f"expected poses [B*, S-1, 6], got {tuple(poses.shape)}")
        features = latents.concat()
        if features.shape[:2] != poses.shape[:2]:
            raise ShapeMismatch(
                f"latents {tuple(features.shape)} vs poses {tuple(poses.shape)}"
            )
        s = poses.shape[1]
        if s > self.cfg.max_transitions:
            raise ShapeMismatch(
                f"{s} transitions exceed max_transitions={self.cfg.max_transitions}"
            )
        x = self.inp(torch.cat([features, self.pose_embed(poses)], dim=-1))
        x = x + self.pos[:s]
        for block in self.blocks:
            x = block(x, None)
        pooled = self.ln_out(x).mean(dim=1)
        return self.head(pooled).squeeze(-1)

    def score_iterations(
        self, latents: LatentFeatures, p_all: torch.Tensor
    ) -> torch.Tensor:
        """Score every stored iteration; [B, I, S-1, 6] -> [B, I]."""
        if p_all.ndim != 4 or p_all.shape[3] != 6:
            raise ShapeMismatch(f"expected [B, I, S-1, 6], got {tuple(p_all.shape)}")
        b, i, s, _ = p_all.shape
        scores = self.critic_score(tile_latents(latents, i), p_all.reshape(b * i, s, 6))
        return scores.reshape(b, i)


def _tile_iterations(x: torch.Tensor, iterations: int) -> torch.Tensor:
    b = x.shape[0]
    return (
        x.unsqueeze(1)
        .expand(b, iterations, *x.shape[1:])
        .reshape(b * iterations, *x.shape[1:])
    )


def tile_latents(latents: LatentFeatures, iterations: int) -> LatentFeatures:
    """Repeat latents along a flattened iteration axis, row-major (b, i)."""
    return LatentFeatures(
        flow=_tile_iterations(latents.flow, iterations),
        imu_rot=_tile_iterations(latents.imu_rot, iterations),
        imu_trans=_tile_iterations(latents.imu_trans, iterations),
    )


def select_best(p_all: torch.Tensor, scores: torch.Tensor) -> SelectionResult:
    """Per batch element, take the iterate with the highest critic score.

    Ties resolve to the lowest iteration index.
    """
    if p_all.ndim != 4 or scores.ndim != 2 or p_all.shape[:2] != scores.shape:
        raise ShapeMismatch(
            f"p_all {tuple(p_all.shape)} incompatible with scores {tuple(scores.shape)}"
        )
    b, i = scores.shape
    best = scores.max(dim=1, keepdim=True).values
    candidates = torch.arange(i, device=scores.device).expand(b, i)
    index = torch.where(scores == best, candidates, i).min(dim=1).values
    pose = p_all[torch.arange(b, device=p_all.device), index]
    return SelectionResult(pose=pose, index=index)
