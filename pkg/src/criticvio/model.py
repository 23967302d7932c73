"""Generator assembly and model-variant presets.

The generator bundles the feature encoders, the policy gate, and the pose
transformer, and owns the input normalization statistics (registered as
buffers so they travel with the checkpoint).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
import torch.nn as nn

from .critic import Critic, CriticConfig
from .data import NormStats
from .encoders import EncoderConfig, FlowEncoder, InertialEncoder, LatentFeatures
from .errors import ShapeMismatch
from .policy import PolicyConfig, PolicyEncoder, apply_gating
from .pose_transformer import PoseTransformer, TransformerConfig


@dataclass
class ModelConfig:
    variant: str = "desk"
    n_c: int = 32
    encoder_blocks: int = 4
    conv_channels: tuple[int, ...] = (16, 32)
    transformer_layers: int = 2
    hidden: int = 64
    heads: int = 4
    iterations: int = 4
    dropout: float = 0.1
    image_size: tuple[int, int] = (32, 64)
    sequence_length: int = 4
    samples_per_interval: int = 11
    noise_dim: Optional[int] = None  # defaults to n_c
    policy_hidden: int = 64
    policy_blocks: int = 2
    softness: float = 1.0
    ffn_multiplier: int = 2
    zero_init_residual: bool = True
    post_ln: bool = False

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        self.image_size = tuple(self.image_size)

    @property
    def transitions(self) -> int:
        return self.sequence_length - 1

    @property
    def noise_width(self) -> int:
        return self.n_c if self.noise_dim is None else self.noise_dim


_VARIANTS = {
    "desk": dict(
        n_c=32,
        encoder_blocks=4,
        conv_channels=(16, 32),
        transformer_layers=2,
        hidden=64,
        heads=4,
        iterations=4,
        image_size=(32, 64),
        policy_hidden=64,
        policy_blocks=2,
    ),
    "S": dict(
        n_c=256,
        encoder_blocks=4,
        conv_channels=(64, 64, 128, 128, 256),
        transformer_layers=4,
        hidden=512,
        heads=8,
        iterations=16,
        image_size=(256, 512),
        policy_hidden=512,
        policy_blocks=4,
    ),
    "M": dict(
        n_c=384,
        encoder_blocks=6,
        conv_channels=(64, 96, 128, 192, 384),
        transformer_layers=4,
        hidden=768,
        heads=8,
        iterations=16,
        image_size=(256, 512),
        policy_hidden=768,
        policy_blocks=4,
    ),
    "L": dict(
        n_c=512,
        encoder_blocks=8,
        conv_channels=(64, 128, 256, 384, 512),
        transformer_layers=4,
        hidden=1024,
        heads=8,
        iterations=16,
        image_size=(256, 512),
        policy_hidden=1024,
        policy_blocks=4,
    ),
}


def variant_config(name: str, **overrides) -> ModelConfig:
    if name not in _VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(_VARIANTS)}")
    params = dict(_VARIANTS[name])
    params.update(overrides)
    return ModelConfig(variant=name, **params)


@dataclass
class GeneratorOutput:
    p_all: torch.Tensor  # [B, I, S-1, 6]
    latents: LatentFeatures  # pre-gating
    gated: LatentFeatures
    weights: torch.Tensor  # [B, 3, S-1]


class Generator(nn.Module):
    """Feature encoders + policy gating + iterative pose transformer."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        enc_cfg = EncoderConfig(
            n_c=cfg.n_c,
            conv_channels=cfg.conv_channels,
            residual_blocks=cfg.encoder_blocks,
            dropout=cfg.dropout,
        )
        self.flow_encoder = FlowEncoder(enc_cfg, cfg.image_size)
        self.inertial_encoder = InertialEncoder(enc_cfg, cfg.samples_per_interval)
        self.policy = PolicyEncoder(
            PolicyConfig(
                n_c=cfg.n_c,
                hidden=cfg.policy_hidden,
                blocks=cfg.policy_blocks,
                softness=cfg.softness,
                dropout=cfg.dropout,
            )
        )
        self.transformer = PoseTransformer(
            TransformerConfig(
                layers=cfg.transformer_layers,
                hidden=cfg.hidden,
                heads=cfg.heads,
                dropout=cfg.dropout,
                iterations=cfg.iterations,
                feature_dim=3 * cfg.n_c,
                noise_dim=cfg.noise_width,
                context_dim=2 * cfg.n_c,
                max_transitions=cfg.transitions,
                ffn_multiplier=cfg.ffn_multiplier,
                zero_init_residual=cfg.zero_init_residual,
                post_ln=cfg.post_ln,
            )
        )
        self.register_buffer("flow_mean", torch.zeros(2))
        self.register_buffer("flow_std", torch.ones(2))
        self.register_buffer("imu_mean", torch.zeros(6))
        self.register_buffer("imu_std", torch.ones(6))

    def set_norm_stats(self, stats: NormStats) -> None:
        self.flow_mean.copy_(torch.as_tensor(stats.flow_mean, dtype=torch.float32))
        self.flow_std.copy_(torch.as_tensor(stats.flow_std, dtype=torch.float32))
        self.imu_mean.copy_(torch.as_tensor(stats.imu_mean, dtype=torch.float32))
        self.imu_std.copy_(torch.as_tensor(stats.imu_std, dtype=torch.float32))

    def encode(self, flows: torch.Tensor, imu: torch.Tensor) -> LatentFeatures:
        """Normalize raw inputs and produce per-modality latents."""
        flows = (flows - self.flow_mean[None, None, :, None, None]) / self.flow_std[
            None, None, :, None, None
        ]
        imu = (imu - self.imu_mean) / self.imu_std
        flow_lat = self.flow_encoder(flows)
        imu_rot, imu_trans = self.inertial_encoder(imu)
        return LatentFeatures(flow=flow_lat, imu_rot=imu_rot, imu_trans=imu_trans)

    def forward(
        self,
        flows: torch.Tensor,
        imu: torch.Tensor,
        noise: torch.Tensor,
        iterations: int | None = None,
    ) -> GeneratorOutput:
        latents = self.encode(flows, imu)
        weights = self.policy(latents)
        gated = apply_gating(latents, weights)
        p_all = self.transformer.iterate(
            noise, gated, latents.imu_context(), iterations
        )
        return GeneratorOutput(p_all=p_all, latents=latents, gated=gated, weights=weights)


def build_generator(cfg: ModelConfig) -> Generator:
    return Generator(cfg)


def build_critic(cfg: ModelConfig) -> Critic:
    return Critic(
        CriticConfig(
            layers=cfg.transformer_layers,
            hidden=cfg.hidden,
            heads=cfg.heads,
            dropout=cfg.dropout,
            feature_dim=3 * cfg.n_c,
            pose_embed_dim=min(cfg.hidden, 2 * cfg.n_c),
            max_transitions=cfg.transitions,
            ffn_multiplier=cfg.ffn_multiplier,
            zero_init_residual=cfg.zero_init_residual,
        )
    )


def sample_noise(
    batch: int,
    transitions: int,
    noise_dim: int,
    generator: torch.Generator | None = None,
    device=None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Standard-normal noise [B, S-1, N_z] drawn from an explicit RNG stream."""
    return torch.randn(
        batch, transitions, noise_dim, generator=generator, device=device, dtype=dtype
    )


def noise_for(generator_model: Generator, batch: int, rng: torch.Generator | None = None):
    cfg = generator_model.cfg
    return sample_noise(batch, cfg.transitions, cfg.noise_width, generator=rng)


def config_to_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["conv_channels"] = list(cfg.conv_channels)
    d["image_size"] = list(cfg.image_size)
    return d


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    if "conv_channels" in d:
        d["conv_channels"] = tuple(d["conv_channels"])
    if "image_size" in d:
        d["image_size"] = tuple(d["image_size"])
    return ModelConfig(**d)


def check_disjoint_parameters(generator: Generator, critic: Critic) -> bool:
    gen_ids = {id(p) for p in generator.parameters()}
    critic_ids = {id(p) for p in critic.parameters()}
    return gen_ids.isdisjoint(critic_ids)
