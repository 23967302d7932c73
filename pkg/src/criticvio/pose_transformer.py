"""Iterative delta-pose transformer over the transition axis.

A Pre-LN self-attention stack consumes the gated latents, a noise vector,
and the current pose accumulator, and emits a 6-DoF correction per
transition.  Each attention block's residual join is followed by a FiLM
layer driven by the raw (ungated) IMU latents.  Residual output
projections, FiLM projections, and the output head are zero-initialized by
default so the stack is an exact identity map at init and the first delta
equals the head bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import torch
import torch.nn as nn

from .encoders import LatentFeatures
from .errors import NonFiniteActivation, ShapeMismatch


@dataclass
class TransformerConfig:
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    dropout: float = 0.1
    iterations: int = 4
    feature_dim: int = 96  # 3 * n_c gated latent width
    noise_dim: int = 32
    context_dim: int = 64  # 2 * n_c raw IMU latent width
    max_transitions: int = 8
    ffn_multiplier: int = 2
    zero_init_residual: bool = True
    post_ln: bool = False  # legacy arrangement, kept for instability comparison

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


class FilmLayer(nn.Module):
    """Feature-wise affine modulation: h * (1 + gamma) + beta.

    gamma/beta are linear in the context; zero-initialized so the layer is
    an identity until trained.
    """

    def __init__(self, context_dim: int, hidden: int):
        super().__init__()
        self.proj = nn.Linear(context_dim, 2 * hidden)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, hidden: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        if hidden.shape[:2] != context.shape[:2]:
            raise ShapeMismatch(
                f"hidden {tuple(hidden.shape)} vs context {tuple(context.shape)}"
            )
        gamma, beta = self.proj(context).chunk(2, dim=-1)
        return hidden * (1.0 + gamma) + beta


class AttentionBlock(nn.Module):
    """Self-attention + feed-forward with Pre-LN placement (Post-LN optional)."""

    def __init__(self, cfg: TransformerConfig, film: bool):
        super().__init__()
        self.post_ln = cfg.post_ln
        self.ln1 = nn.LayerNorm(cfg.hidden)
        self.attn = nn.MultiheadAttention(
            cfg.hidden, cfg.heads, dropout=cfg.dropout, batch_first=True
        )
        self.film = FilmLayer(cfg.context_dim, cfg.hidden) if film else None
        self.ln2 = nn.LayerNorm(cfg.hidden)
        inner = cfg.ffn_multiplier * cfg.hidden
        self.mlp = nn.Sequential(
            nn.Linear(cfg.hidden, inner), nn.GELU(), nn.Linear(inner, cfg.hidden)
        )
        self.drop = nn.Dropout(cfg.dropout)
        if cfg.zero_init_residual:
            nn.init.zeros_(self.attn.out_proj.weight)
            nn.init.zeros_(self.attn.out_proj.bias)
            nn.init.zeros_(self.mlp[-1].weight)
            nn.init.zeros_(self.mlp[-1].bias)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None) -> torch.Tensor:
        if self.post_ln:
            a, _ = self.attn(x, x, x, need_weights=False)
            x = self.ln1(x + self.drop(a))
            if self.film is not None and context is not None:
                x = self.film(x, context)
            return self.ln2(x + self.drop(self.mlp(x)))
        h = self.ln1(x)
        a, _ = self.attn(h, h, h, need_weights=False)
        x = x + self.drop(a)
        if self.film is not None and context is not None:
            x = self.film(x, context)
        return x + self.drop(self.mlp(self.ln2(x)))


class PoseTransformer(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        in_dim = cfg.feature_dim + cfg.noise_dim + 6
        self.inp = nn.Linear(in_dim, cfg.hidden)
        self.pos = nn.Parameter(0.02 * torch.randn(cfg.max_transitions, cfg.hidden))
        self.blocks = nn.ModuleList(
            [AttentionBlock(cfg, film=True) for _ in range(cfg.layers)]
        )
        self.ln_out = nn.LayerNorm(cfg.hidden)
        self.head = nn.Linear(cfg.hidden, 6)
        if cfg.zero_init_residual:
            nn.init.zeros_(self.head.weight)

    def forward_delta(
        self,
        noise: torch.Tensor,
        gated: LatentFeatures,
        accumulator: torch.Tensor,
        imu_context: torch.Tensor,
    ) -> torch.Tensor:
        """One refinement pass: emit a delta pose given the current accumulator."""
        features = gated.concat()
        b, s, _ = features.shape
        if noise.shape != (b, s, self.cfg.noise_dim):
            raise ShapeMismatch(
                f"noise {tuple(noise.shape)} != {(b, s, self.cfg.noise_dim)}"
            )
        if accumulator.shape != (b, s, 6):
            raise ShapeMismatch(
                f"accumulator {tuple(accumulator.shape)} != {(b, s, 6)}"
            )
        if imu_context.shape[:2] != (b, s) or imu_context.shape[2] != self.cfg.context_dim:
            raise ShapeMismatch(
                f"imu_context {tuple(imu_context.shape)} != "
                f"{(b, s, self.cfg.context_dim)}"
            )
        if s > self.cfg.max_transitions:
            raise ShapeMismatch(
                f"{s} transitions exceed max_transitions={self.cfg.max_transitions}"
            )
        x = self.inp(torch.cat([features, noise, accumulator], dim=-1))
        x = x + self.pos[:s]
        for block in self.blocks:
            x = block(x, imu_context)
        delta = self.head(self.ln_out(x))
        if not torch.isfinite(delta).all():
            raise NonFiniteActivation("pose transformer produced non-finite deltas")
        return delta

    def iterate(
        self,
        noise: torch.Tensor,
        gated: LatentFeatures,
        imu_context: torch.Tensor,
        iterations: int | None = None,
    ) -> torch.Tensor:
        """Run the refinement loop and stack the accumulator after each pass.

        Returns [B, I, S-1, 6]; slice i holds the running sum of deltas
        through iteration i.  The same noise tensor is reused across
        iterations within one call.
        """
        iterations = self.cfg.iterations if iterations is None else iterations
        if iterations < 1:
            raise ValueError("iterations must be >= 1")
        b, s, _ = gated.flow.shape
        accumulator = torch.zeros(b, s, 6, dtype=gated.flow.dtype, device=gated.flow.device)
        stages = []
        for _ in range(iterations):
            delta = self.forward_delta(noise, gated, accumulator, imu_context)
            accumulator = accumulator + delta
            stages.append(accumulator)
        return torch.stack(stages, dim=1)
