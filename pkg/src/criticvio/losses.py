"""Training objectives: iteration-weighted pose regression, adversarial
terms, MSE-regressive critic weighting, and the gradient penalty.

Sign convention: critic scores are higher for more realistic poses.  The
critic minimizes weighted fake scores minus real scores; the generator
minimizes the *negative* iteration-weighted score so both sides pull the
same direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

from .encoders import LatentFeatures
from .errors import NonFiniteGradient, ShapeMismatch


@dataclass
class LossHyperParams:
    pose_scale: float = 100.0  # multiplier on the combined pose loss
    rotation_scale: float = 10.0  # multiplier on the rotational component
    iteration_decay: float = 0.8  # geometric emphasis toward later iterations
    iterations: int = 16
    gp_weight: float = 10.0
    gen_steps: int = 1
    critic_steps: int = 2
    lambda_normalization: str = "integral"  # "integral" | "sum"
    gp_mode: str = "generated"  # "generated" | "interpolated"

    def __post_init__(self):
        if not 0.0 < self.iteration_decay < 1.0:
            raise ValueError("iteration_decay must be in (0, 1)")
        if min(self.pose_scale, self.rotation_scale, self.gp_weight) <= 0:
            raise ValueError("loss scales must be positive")
        if self.gen_steps < 1 or self.critic_steps < 1:
            raise ValueError("step counts must be >= 1")
        if self.lambda_normalization not in ("integral", "sum"):
            raise ValueError(f"unknown normalization {self.lambda_normalization!r}")
        if self.gp_mode not in ("generated", "interpolated"):
            raise ValueError(f"unknown gp_mode {self.gp_mode!r}")


@dataclass
class LossBreakdown:
    """Per-step loss components; critic fields are filled by the critic step."""

    l_g: torch.Tensor
    l_pose: torch.Tensor
    l_pt: torch.Tensor
    l_pr: torch.Tensor
    l_critic_term: torch.Tensor
    l_c: torch.Tensor | float | None = None
    l_gp: torch.Tensor | float | None = None
    w_mean: float | None = None

    def as_floats(self) -> dict[str, float]:
        def val(x):
            if x is None:
                return float("nan")
            return float(x.detach()) if torch.is_tensor(x) else float(x)

        return {
            "l_g": val(self.l_g),
            "l_pt": val(self.l_pt),
            "l_pr": val(self.l_pr),
            "l_critic_term": val(self.l_critic_term),
            "l_c": val(self.l_c),
            "l_gp": val(self.l_gp),
            "w_mean": val(self.w_mean),
        }


def iteration_weights(
    decay: float,
    iterations: int,
    normalization: str = "integral",
    dtype: torch.dtype = torch.float64,
) -> torch.Tensor:
    """Geometric iteration weights, increasing toward the final iteration.

    weight[i] = decay**(I-1-i) / Z.  With the "integral" normalization
    Z = (1 - decay**I) / ln(1/decay), the continuous analogue of the
    geometric sum; "sum" normalizes the weights to add to exactly 1.
    """
    if not 0.0 < decay < 1.0:
        raise ValueError("decay must be in (0, 1)")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    exponents = torch.arange(iterations - 1, -1, -1, dtype=dtype)
    raw = torch.pow(torch.tensor(decay, dtype=dtype), exponents)
    if normalization == "integral":
        z = (1.0 - decay**iterations) / math.log(1.0 / decay)
    elif normalization == "sum":
        z = float(raw.sum())
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return raw / z


def pose_losses(
    targets: torch.Tensor, p_all: torch.Tensor, weights: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Iteration-weighted squared errors, split translation/rotation.

    Squared error at each iteration is averaged over batch, time, and the
    three components, scaled by that iteration's weight, and summed over
    iterations.
    """
    if p_all.ndim != 4 or targets.ndim != 3:
        raise ShapeMismatch(
            f"targets {tuple(targets.shape)}, p_all {tuple(p_all.shape)}"
        )
    if p_all.shape[0] != targets.shape[0] or p_all.shape[2:] != targets.shape[1:]:
        raise ShapeMismatch(
            f"targets {tuple(targets.shape)} incompatible with p_all {tuple(p_all.shape)}"
        )
    if weights.shape != (p_all.shape[1],):
        raise ShapeMismatch(f"weights {tuple(weights.shape)} != ({p_all.shape[1]},)")
    weights = weights.to(p_all.dtype)
    sq = (targets.unsqueeze(1) - p_all) ** 2  # [B, I, S-1, 6]
    per_iter_t = sq[..., :3].mean(dim=(0, 2, 3))
    per_iter_r = sq[..., 3:].mean(dim=(0, 2, 3))
    return (weights * per_iter_t).sum(), (weights * per_iter_r).sum()


def generator_loss(
    l_pt: torch.Tensor,
    l_pr: torch.Tensor,
    scores: torch.Tensor,
    weights: torch.Tensor,
    hp: LossHyperParams,
) -> LossBreakdown:
    """Combined generator objective: scaled pose loss plus adversarial term.

    The adversarial term is the negative iteration-weighted critic score,
    so raising any score lowers the loss.
    """
    if scores.ndim != 2 or scores.shape[1] != weights.shape[0]:
        raise ShapeMismatch(
            f"scores {tuple(scores.shape)} incompatible with weights "
            f"{tuple(weights.shape)}"
        )
    weights = weights.to(scores.dtype)
    l_pose = l_pt + hp.rotation_scale * l_pr
    l_critic_term = -(scores * weights).sum(dim=1).mean()
    l_g = hp.pose_scale * l_pose + l_critic_term
    return LossBreakdown(
        l_g=l_g, l_pose=l_pose, l_pt=l_pt, l_pr=l_pr, l_critic_term=l_critic_term
    )


def regressive_weight(targets: torch.Tensor, p_all: torch.Tensor) -> torch.Tensor:
    """Per-(sample, iteration) pose MSE, detached; flattened to [B*I].

    Flattening is row-major over (batch, iteration) to match
    Critic.score_iterations.
    """
    if p_all.shape[0] != targets.shape[0] or p_all.shape[2:] != targets.shape[1:]:
        raise ShapeMismatch(
            f"targets {tuple(targets.shape)} incompatible with p_all {tuple(p_all.shape)}"
        )
    sq = (targets.unsqueeze(1) - p_all.detach()) ** 2
    return sq.mean(dim=(2, 3)).reshape(-1)


def gradient_penalty(
    critic,
    latents: LatentFeatures,
    fake_poses: torch.Tensor,
    real_poses: torch.Tensor | None = None,
    mode: str = "generated",
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Penalty pulling the critic's pose-gradient norm toward 1.

    ``mode="generated"`` evaluates the gradient at the generated poses;
    ``mode="interpolated"`` uses the classic random interpolation between
    real and generated samples (``real_poses`` required, broadcast across
    iterations when needed).
    """
    score_fn: Callable = getattr(critic, "critic_score", critic)
    if mode == "interpolated":
        if real_poses is None:
            raise ValueError("interpolated mode requires real_poses")
        if real_poses.shape[0] != fake_poses.shape[0]:
            reps = fake_poses.shape[0] // real_poses.shape[0]
            real_poses = (
                real_poses.unsqueeze(1)
                .expand(real_poses.shape[0], reps, *real_poses.shape[1:])
                .reshape(-1, *real_poses.shape[1:])
            )
        eps = torch.rand(
            fake_poses.shape[0], 1, 1,
            dtype=fake_poses.dtype, device=fake_poses.device, generator=generator,
        )
        base = eps * real_poses.detach() + (1.0 - eps) * fake_poses.detach()
    elif mode == "generated":
        base = fake_poses.detach()
    else:
        raise ValueError(f"unknown gp_mode {mode!r}")
    probe = base.clone().requires_grad_(True)
    scores = score_fn(latents, probe)
    grads = torch.autograd.grad(
        outputs=scores.sum(), inputs=probe, create_graph=True
    )[0]
    if not torch.isfinite(grads).all():
        raise NonFiniteGradient("gradient penalty saw non-finite gradients")
    norms = grads.flatten(1).norm(dim=1)
    return ((norms - 1.0) ** 2).mean()


def critic_loss(
    c_fake: torch.Tensor,
    c_real: torch.Tensor,
    w: torch.Tensor,
    gp: torch.Tensor,
    hp: LossHyperParams,
) -> torch.Tensor:
    """Weighted fake-minus-real critic objective plus gradient penalty."""
    if c_fake.shape != w.shape:
        raise ShapeMismatch(f"c_fake {tuple(c_fake.shape)} vs w {tuple(w.shape)}")
    return (w * c_fake).mean() - c_real.mean() + hp.gp_weight * gp
