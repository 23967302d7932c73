"""WGAN-GP training loop, Monte-Carlo evaluation, and checkpointing.

Per batch the critic takes ``critic_steps`` updates (fresh noise and a
no-grad generator forward each time, regressive-weighted scores, gradient
penalty), then the generator takes ``gen_steps`` updates against the frozen
critic.  Noise is drawn from a dedicated RNG stream separate from the
data-shuffling stream so both are independently reproducible.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .critic import Critic, select_best, tile_latents
from .data import (
    NormStats,
    SampleWindow,
    SequenceData,
    compute_norm_stats,
    make_windows,
    windows_to_arrays,
)
from .errors import IncompatibleCheckpoint, NonFiniteLoss
from .geometry import (
    Pose6,
    Trajectory,
    integrate_relative,
    kitti_rel_errors,
    rmse_errors,
    wrap_angle,
)
from .losses import (
    LossHyperParams,
    critic_loss,
    generator_loss,
    gradient_penalty,
    iteration_weights,
    pose_losses,
    regressive_weight,
)
from .model import (
    Generator,
    ModelConfig,
    build_critic,
    build_generator,
    config_from_dict,
    config_to_dict,
    sample_noise,
)

CHECKPOINT_VERSION = 1
NOISE_STREAM_OFFSET = 10_000_019  # keeps noise and shuffling streams apart

TRAIN_LOG_COLUMNS = (
    "step",
    "epoch",
    "l_g",
    "l_pt",
    "l_pr",
    "l_critic_term",
    "l_c",
    "l_gp",
    "w_mean",
)
EVAL_LOG_COLUMNS = ("epoch", "eval_pose_loss", "lr_g", "lr_c")


@dataclass
class TrainConfig:
    variant: str = "desk"
    epochs: int = 20
    batch: int = 64
    lr_g: float = 1e-4
    lr_c: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.9)
    weight_decay: float = 1e-3
    scheduler_patience: int = 10
    scheduler_factor: float = 0.5
    seed: int = 0
    iterations: int | None = None  # None: use the model config's value

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be positive")
        if min(self.lr_g, self.lr_c, self.weight_decay) <= 0:
            raise ValueError("learning rates and weight decay must be positive")
        self.betas = tuple(self.betas)


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def _mix_seed(seed: int, salt: int) -> int:
    return (seed * 1_000_003 + salt * 7919 + 12345) % 2**63


@dataclass
class TensorDataset:
    """Stacked window tensors kept on one device."""

    flows: torch.Tensor
    imu: torch.Tensor
    targets: torch.Tensor

    def __post_init__(self):
        if not (len(self.flows) == len(self.imu) == len(self.targets)):
            raise ValueError("tensor lengths disagree")

    def __len__(self) -> int:
        return self.flows.shape[0]

    @classmethod
    def from_windows(cls, windows: list[SampleWindow], device="cpu") -> "TensorDataset":
        arrays = windows_to_arrays(windows)
        return cls(
            flows=torch.from_numpy(arrays["flows"]).to(device),
            imu=torch.from_numpy(arrays["imu"]).to(device),
            targets=torch.from_numpy(arrays["targets"]).to(device),
        )

    def take(self, idx: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.flows[idx], self.imu[idx], self.targets[idx]


def make_optimizers(
    generator: Generator, critic: Critic, cfg: TrainConfig
) -> tuple[torch.optim.Optimizer, torch.optim.Optimizer]:
    opt_g = torch.optim.AdamW(
        generator.parameters(),
        lr=cfg.lr_g,
        betas=cfg.betas,
        weight_decay=cfg.weight_decay,
    )
    opt_c = torch.optim.AdamW(
        critic.parameters(),
        lr=cfg.lr_c,
        betas=cfg.betas,
        weight_decay=cfg.weight_decay,
    )
    return opt_g, opt_c


def _require_finite(value: torch.Tensor, label: str, context: dict) -> None:
    if not torch.isfinite(value).all():
        raise NonFiniteLoss(f"{label} is non-finite; diagnostics: {context}")


def critic_step(
    generator: Generator,
    critic: Critic,
    batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    opt_c: torch.optim.Optimizer,
    hp: LossHyperParams,
    iterations: int,
    noise_rng: torch.Generator,
) -> dict[str, float]:
    """One critic update: fresh noise, detached generator forward."""
    flows, imu, targets = batch
    noise = sample_noise(
        flows.shape[0],
        generator.cfg.transitions,
        generator.cfg.noise_width,
        generator=noise_rng,
    )
    with torch.no_grad():
        out = generator(flows, imu, noise, iterations)
    latents = out.latents  # produced under no_grad: detached from the generator
    fake = out.p_all.reshape(-1, generator.cfg.transitions, 6)
    tiled = tile_latents(latents, iterations)
    c_fake = critic.critic_score(tiled, fake)
    c_real = critic.critic_score(latents, targets)
    w = regressive_weight(targets, out.p_all)
    gp = gradient_penalty(
        critic, tiled, fake, real_poses=targets, mode=hp.gp_mode, generator=noise_rng
    )
    l_c = critic_loss(c_fake, c_real, w, gp, hp)
    _require_finite(
        l_c,
        "critic loss",
        {
            "l_gp": float(gp.detach()),
            "w_mean": float(w.mean()),
            "c_real": float(c_real.mean().detach()),
        },
    )
    opt_c.zero_grad(set_to_none=True)
    l_c.backward()
    opt_c.step()
    return {"l_c": float(l_c.detach()), "l_gp": float(gp.detach()), "w_mean": float(w.mean())}


def generator_step(
    generator: Generator,
    critic: Critic,
    batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    opt_g: torch.optim.Optimizer,
    weights: torch.Tensor,
    hp: LossHyperParams,
    iterations: int,
    noise_rng: torch.Generator,
) -> dict[str, float]:
    """One generator update against the frozen critic."""
    flows, imu, targets = batch
    noise = sample_noise(
        flows.shape[0],
        generator.cfg.transitions,
        generator.cfg.noise_width,
        generator=noise_rng,
    )
    out = generator(flows, imu, noise, iterations)
    scores = critic.score_iterations(out.latents, out.p_all)
    l_pt, l_pr = pose_losses(targets, out.p_all, weights)
    breakdown = generator_loss(l_pt, l_pr, scores, weights, hp)
    _require_finite(breakdown.l_g, "generator loss", breakdown.as_floats())
    opt_g.zero_grad(set_to_none=True)
    breakdown.l_g.backward()
    opt_g.step()
    return {
        "l_g": float(breakdown.l_g.detach()),
        "l_pt": float(breakdown.l_pt.detach()),
        "l_pr": float(breakdown.l_pr.detach()),
        "l_pose": float(breakdown.l_pose.detach()),
        "l_critic_term": float(breakdown.l_critic_term.detach()),
    }


def train_epoch(
    generator: Generator,
    critic: Critic,
    dataset: TensorDataset,
    opt_g: torch.optim.Optimizer,
    opt_c: torch.optim.Optimizer,
    weights: torch.Tensor,
    hp: LossHyperParams,
    cfg: TrainConfig,
    data_rng: torch.Generator,
    noise_rng: torch.Generator,
    epoch: int,
    start_step: int,
    rows: list[dict] | None = None,
) -> tuple[dict[str, float], int]:
    """One pass over the dataset; returns (epoch aggregate, next step index)."""
    generator.train()
    critic.train()
    perm = torch.randperm(len(dataset), generator=data_rng)
    step = start_step
    agg: dict[str, float] = {}
    batches = 0
    for lo in range(0, len(dataset), cfg.batch):
        idx = perm[lo : lo + cfg.batch]
        batch = dataset.take(idx)
        critic_stats: dict[str, float] = {}
        for _ in range(hp.critic_steps):
            critic_stats = critic_step(
                generator, critic, batch, opt_c, hp, _iters(generator, cfg), noise_rng
            )
        gen_stats: dict[str, float] = {}
        for _ in range(hp.gen_steps):
            gen_stats = generator_step(
                generator, critic, batch, opt_g, weights, hp,
                _iters(generator, cfg), noise_rng,
            )
        row = {"step": step, "epoch": epoch, **gen_stats, **critic_stats}
        if rows is not None:
            rows.append(row)
        for key, val in row.items():
            if key in ("step", "epoch"):
                continue
            agg[key] = agg.get(key, 0.0) + val
        batches += 1
        step += 1
    return {k: v / max(batches, 1) for k, v in agg.items()}, step


def _iters(generator: Generator, cfg: TrainConfig) -> int:
    return cfg.iterations if cfg.iterations is not None else generator.cfg.iterations


def eval_pose_loss(
    generator: Generator,
    dataset: TensorDataset,
    weights: torch.Tensor,
    hp: LossHyperParams,
    iterations: int,
    seed: int,
    chunk: int = 256,
) -> float:
    """Iteration-weighted pose loss on held-out windows (scheduler signal)."""
    generator.eval()
    rng = torch.Generator().manual_seed(seed)
    total, count = 0.0, 0
    with torch.no_grad():
        for lo in range(0, len(dataset), chunk):
            flows = dataset.flows[lo : lo + chunk]
            imu = dataset.imu[lo : lo + chunk]
            targets = dataset.targets[lo : lo + chunk]
            noise = sample_noise(
                flows.shape[0],
                generator.cfg.transitions,
                generator.cfg.noise_width,
                generator=rng,
            )
            out = generator(flows, imu, noise, iterations)
            l_pt, l_pr = pose_losses(targets, out.p_all, weights)
            total += float(l_pt + hp.rotation_scale * l_pr) * flows.shape[0]
            count += flows.shape[0]
    return total / max(count, 1)


# ---------------------------------------------------------------------------
# Monte-Carlo evaluation


@dataclass
class EvalReport:
    metrics: dict[str, tuple[float, float]]  # name -> (mean, std) over repeats
    pose_mse_per_iteration: list[float]
    neg_score_per_iteration: list[float]
    selection_histogram: list[int]
    selected_mse: float
    first_iteration_mse: float
    final_iteration_mse: float
    repeats: int
    iterations: int
    n_windows: int

    def as_dict(self) -> dict:
        return {
            "metrics": {
                k: {"mean": m, "std": s} for k, (m, s) in self.metrics.items()
            },
            "pose_mse_per_iteration": self.pose_mse_per_iteration,
            "neg_score_per_iteration": self.neg_score_per_iteration,
            "selection_histogram": self.selection_histogram,
            "selected_mse": self.selected_mse,
            "first_iteration_mse": self.first_iteration_mse,
            "final_iteration_mse": self.final_iteration_mse,
            "repeats": self.repeats,
            "iterations": self.iterations,
            "n_windows": self.n_windows,
        }


def _poses_from_vectors(vectors: np.ndarray) -> list[Pose6]:
    return [Pose6(v[:3], wrap_angle(v[3:])) for v in vectors]


@dataclass
class _SequenceEval:
    sequence: SequenceData
    dataset: TensorDataset
    n_windows: int
    covered_frames: int  # frames spanned by the tiled windows


def _prepare_eval_sequences(
    sequences: list[SequenceData], sequence_length: int, device="cpu"
) -> list[_SequenceEval]:
    prepared = []
    stride = sequence_length - 1
    for seq in sequences:
        wins = make_windows(seq, s=sequence_length, stride=stride)
        # keep only windows that tile contiguously from frame 0
        tiled = [w for w in wins if w.frame_index % stride == 0]
        dataset = TensorDataset.from_windows(tiled, device=device)
        prepared.append(
            _SequenceEval(
                sequence=seq,
                dataset=dataset,
                n_windows=len(tiled),
                covered_frames=len(tiled) * stride + 1,
            )
        )
    return prepared


def evaluate(
    generator: Generator,
    critic: Critic,
    sequences: list[SequenceData],
    iterations: int | None = None,
    repeats: int = 10,
    seed: int = 0,
    chunk: int = 512,
) -> EvalReport:
    """Monte-Carlo evaluation: fresh noise per repeat, critic-selected poses.

    Chains the selected relative poses of tiled windows into a trajectory
    per sequence, computes KITTI-style relative errors plus RMSE, and
    reports mean and standard deviation across repeats.  Also returns the
    per-iteration pose-MSE and negative-critic-score curves and the
    histogram of selected iteration indices.
    """
    generator.eval()
    critic.eval()
    iters = iterations if iterations is not None else generator.cfg.iterations
    s_len = generator.cfg.sequence_length
    prepared = _prepare_eval_sequences(sequences, s_len)
    noise_rng = torch.Generator().manual_seed(seed)

    metric_samples: dict[str, list[float]] = {
        "t_rel": [], "r_rel": [], "t_rmse": [], "r_rmse": []
    }
    iter_mse = np.zeros(iters)
    iter_neg_score = np.zeros(iters)
    selection_hist = np.zeros(iters, dtype=np.int64)
    selected_sq, first_sq, final_sq = 0.0, 0.0, 0.0
    total_windows = sum(p.n_windows for p in prepared)

    for _ in range(repeats):
        repeat_metrics = {k: [] for k in metric_samples}
        for prep in prepared:
            sel_rels: list[np.ndarray] = []
            for lo in range(0, len(prep.dataset), chunk):
                flows = prep.dataset.flows[lo : lo + chunk]
                imu = prep.dataset.imu[lo : lo + chunk]
                targets = prep.dataset.targets[lo : lo + chunk]
                noise = sample_noise(
                    flows.shape[0],
                    generator.cfg.transitions,
                    generator.cfg.noise_width,
                    generator=noise_rng,
                )
                with torch.no_grad():
                    out = generator(flows, imu, noise, iters)
                    scores = critic.score_iterations(out.latents, out.p_all)
                selection = select_best(out.p_all, scores)
                sq = (out.p_all - targets.unsqueeze(1)) ** 2  # [b, I, s-1, 6]
                iter_mse += sq.mean(dim=(0, 2, 3)).numpy() * flows.shape[0]
                iter_neg_score += (-scores).mean(dim=0).numpy() * flows.shape[0]
                selection_hist += np.bincount(
                    selection.index.numpy(), minlength=iters
                )
                selected_sq += float(
                    ((selection.pose - targets) ** 2).mean()
                ) * flows.shape[0]
                first_sq += float(sq[:, 0].mean()) * flows.shape[0]
                final_sq += float(sq[:, -1].mean()) * flows.shape[0]
                sel_rels.append(selection.pose.numpy().reshape(-1, 6))

            rel_vectors = np.concatenate(sel_rels, axis=0)
            pred_rels = _poses_from_vectors(rel_vectors)
            gt_traj = prep.sequence.trajectory
            covered = prep.covered_frames
            pred_traj = integrate_relative(gt_traj[0], pred_rels)
            gt_slice = Trajectory(gt_traj.poses[:covered])
            t_rel, r_rel = kitti_rel_errors(gt_slice, pred_traj)
            from .data import relative_from_trajectory

            gt_rels = relative_from_trajectory(gt_slice)
            t_rmse, r_rmse = rmse_errors(gt_rels, pred_rels)
            repeat_metrics["t_rel"].append(t_rel)
            repeat_metrics["r_rel"].append(r_rel)
            repeat_metrics["t_rmse"].append(t_rmse)
            repeat_metrics["r_rmse"].append(r_rmse)
        for key, vals in repeat_metrics.items():
            metric_samples[key].append(float(np.mean(vals)))

    denom = repeats * max(total_windows, 1)
    metrics = {
        key: (float(np.mean(vals)), float(np.std(vals)))
        for key, vals in metric_samples.items()
    }
    return EvalReport(
        metrics=metrics,
        pose_mse_per_iteration=(iter_mse / denom).tolist(),
        neg_score_per_iteration=(iter_neg_score / denom).tolist(),
        selection_histogram=selection_hist.tolist(),
        selected_mse=selected_sq / denom,
        first_iteration_mse=first_sq / denom,
        final_iteration_mse=final_sq / denom,
        repeats=repeats,
        iterations=iters,
        n_windows=total_windows,
    )


def benchmark_iterations(
    generator: Generator,
    critic: Critic,
    sequences: list[SequenceData],
    iteration_counts: list[int],
    repeats: int = 1,
    seed: int = 0,
    baseline: int = 16,
) -> list[dict]:
    """Evaluate at several iteration counts; report metrics and wall time.

    Relative runtime is normalized to the ``baseline`` iteration count when
    present, otherwise to the largest count measured.
    """
    if not iteration_counts:
        raise ValueError("iteration_counts must be non-empty")
    rows = []
    for iters in iteration_counts:
        start = time.perf_counter()
        report = evaluate(
            generator, critic, sequences, iterations=iters, repeats=repeats, seed=seed
        )
        wall = time.perf_counter() - start
        rows.append(
            {
                "iterations": iters,
                "wall_time_s": wall,
                "t_rel": report.metrics["t_rel"][0],
                "r_rel": report.metrics["r_rel"][0],
                "t_rmse": report.metrics["t_rmse"][0],
                "r_rmse": report.metrics["r_rmse"][0],
                "selected_mse": report.selected_mse,
            }
        )
    ref = next(
        (r["wall_time_s"] for r in rows if r["iterations"] == baseline),
        max(r["wall_time_s"] for r in rows),
    )
    for row in rows:
        row["relative_runtime"] = row["wall_time_s"] / ref
    return rows


# ---------------------------------------------------------------------------
# Checkpointing


def _rng_snapshot(data_rng: torch.Generator, noise_rng: torch.Generator) -> dict:
    return {
        "torch_global": torch.get_rng_state(),
        "data": data_rng.get_state(),
        "noise": noise_rng.get_state(),
    }


def save_checkpoint(
    path,
    generator: Generator,
    critic: Critic,
    model_cfg: ModelConfig,
    epoch: int,
    train_cfg: TrainConfig | None = None,
    hp: LossHyperParams | None = None,
    opt_g: torch.optim.Optimizer | None = None,
    opt_c: torch.optim.Optimizer | None = None,
    sched_g=None,
    sched_c=None,
    rng: dict | None = None,
    norm_stats: NormStats | None = None,
    step: int = 0,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "variant": model_cfg.variant,
        "epoch": epoch,
        "step": step,
        "model_config": config_to_dict(model_cfg),
        "generator": generator.state_dict(),
        "critic": critic.state_dict(),
        "train_config": asdict(train_cfg) if train_cfg is not None else None,
        "loss_hyperparams": asdict(hp) if hp is not None else None,
        "opt_g": opt_g.state_dict() if opt_g is not None else None,
        "opt_c": opt_c.state_dict() if opt_c is not None else None,
        "sched_g": sched_g.state_dict() if sched_g is not None else None,
        "sched_c": sched_c.state_dict() if sched_c is not None else None,
        "rng": rng,
        "norm_stats": (
            {
                "flow_mean": norm_stats.flow_mean,
                "flow_std": norm_stats.flow_std,
                "imu_mean": norm_stats.imu_mean,
                "imu_std": norm_stats.imu_std,
            }
            if norm_stats is not None
            else None
        ),
    }
    torch.save(payload, path)
    return path


@dataclass
class LoadedCheckpoint:
    generator: Generator
    critic: Critic
    model_config: ModelConfig
    epoch: int
    payload: dict

    @property
    def train_config(self) -> TrainConfig | None:
        raw = self.payload.get("train_config")
        return TrainConfig(**{**raw, "betas": tuple(raw["betas"])}) if raw else None

    @property
    def loss_hyperparams(self) -> LossHyperParams | None:
        raw = self.payload.get("loss_hyperparams")
        return LossHyperParams(**raw) if raw else None


def load_checkpoint(path) -> LoadedCheckpoint:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise IncompatibleCheckpoint(f"{path}: cannot read checkpoint: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise IncompatibleCheckpoint(f"{path}: missing format header")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise IncompatibleCheckpoint(
            f"{path}: format version {payload['format_version']} "
            f"unsupported (expected {CHECKPOINT_VERSION})"
        )
    model_cfg = config_from_dict(payload["model_config"])
    generator = build_generator(model_cfg)
    generator.load_state_dict(payload["generator"])
    critic = build_critic(model_cfg)
    critic.load_state_dict(payload["critic"])
    return LoadedCheckpoint(
        generator=generator,
        critic=critic,
        model_config=model_cfg,
        epoch=int(payload["epoch"]),
        payload=payload,
    )


# ---------------------------------------------------------------------------
# Full training runs


@dataclass
class FitResult:
    train_rows: list[dict]
    epoch_rows: list[dict]
    generator: Generator
    critic: Critic
    checkpoint_path: Path | None


def _write_csv(path: Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _read_csv_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open() as fh:
        return [
            {k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def fit(
    generator: Generator,
    critic: Critic,
    train_windows: list[SampleWindow],
    eval_sequences: list[SequenceData],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    hp: LossHyperParams | None = None,
    out_dir=None,
    resume_from=None,
    verbose: bool = False,
) -> FitResult:
    """Train generator and critic; checkpoint and log per epoch.

    The plateau schedulers for both optimizers share one signal: the
    iteration-weighted pose loss on the held-out windows.
    """
    hp = hp or LossHyperParams()
    iterations = cfg.iterations if cfg.iterations is not None else model_cfg.iterations
    weights = iteration_weights(
        hp.iteration_decay, iterations, hp.lambda_normalization
    ).to(torch.float32)

    dataset = TensorDataset.from_windows(train_windows)
    eval_windows = [
        w
        for seq in eval_sequences
        for w in make_windows(seq, s=model_cfg.sequence_length, stride=1)
    ]
    eval_dataset = TensorDataset.from_windows(eval_windows)

    opt_g, opt_c = make_optimizers(generator, critic, cfg)
    sched_g = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt_g, mode="min", factor=cfg.scheduler_factor, patience=cfg.scheduler_patience
    )
    sched_c = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt_c, mode="min", factor=cfg.scheduler_factor, patience=cfg.scheduler_patience
    )
    data_rng = torch.Generator().manual_seed(cfg.seed)
    noise_rng = torch.Generator().manual_seed(cfg.seed + NOISE_STREAM_OFFSET)

    out_dir = Path(out_dir) if out_dir is not None else None
    start_epoch = 0
    step = 0
    train_rows: list[dict] = []
    epoch_rows: list[dict] = []
    if resume_from is not None:
        loaded = load_checkpoint(resume_from)
        if out_dir is not None:
            train_rows = _read_csv_rows(out_dir / "train_log.csv")
            epoch_rows = _read_csv_rows(out_dir / "eval_log.csv")
        generator.load_state_dict(loaded.payload["generator"])
        critic.load_state_dict(loaded.payload["critic"])
        opt_g.load_state_dict(loaded.payload["opt_g"])
        opt_c.load_state_dict(loaded.payload["opt_c"])
        sched_g.load_state_dict(loaded.payload["sched_g"])
        sched_c.load_state_dict(loaded.payload["sched_c"])
        rng = loaded.payload["rng"]
        torch.set_rng_state(rng["torch_global"])
        data_rng.set_state(rng["data"])
        noise_rng.set_state(rng["noise"])
        start_epoch = loaded.epoch + 1
        step = int(loaded.payload.get("step", 0))

    checkpoint_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_dir / "checkpoint.pt"

    for epoch in range(start_epoch, cfg.epochs):
        summary, step = train_epoch(
            generator, critic, dataset, opt_g, opt_c, weights, hp, cfg,
            data_rng, noise_rng, epoch, step, train_rows,
        )
        val_loss = eval_pose_loss(
            generator,
            eval_dataset,
            weights,
            hp,
            iterations,
            seed=_mix_seed(cfg.seed, epoch),
        )
        sched_g.step(val_loss)
        sched_c.step(val_loss)
        epoch_row = {
            "epoch": epoch,
            "eval_pose_loss": val_loss,
            "lr_g": opt_g.param_groups[0]["lr"],
            "lr_c": opt_c.param_groups[0]["lr"],
            **{f"train_{k}": v for k, v in summary.items()},
        }
        epoch_rows.append(epoch_row)
        if verbose:
            print(
                f"epoch {epoch}: train l_g {summary.get('l_g', float('nan')):.4f} "
                f"pose {summary.get('l_pt', 0) + 10 * summary.get('l_pr', 0):.5f} "
                f"eval pose {val_loss:.5f}"
            )
        if out_dir is not None:
            save_checkpoint(
                checkpoint_path,
                generator,
                critic,
                model_cfg,
                epoch,
                train_cfg=cfg,
                hp=hp,
                opt_g=opt_g,
                opt_c=opt_c,
                sched_g=sched_g,
                sched_c=sched_c,
                rng=_rng_snapshot(data_rng, noise_rng),
                step=step,
            )
            _write_csv(out_dir / "train_log.csv", TRAIN_LOG_COLUMNS, train_rows)
            _write_csv(
                out_dir / "eval_log.csv",
                tuple(epoch_rows[0].keys()),
                epoch_rows,
            )
    return FitResult(
        train_rows=train_rows,
        epoch_rows=epoch_rows,
        generator=generator,
        critic=critic,
        checkpoint_path=checkpoint_path,
    )


def prepare_training_data(
    train_sequences: list[SequenceData],
    sequence_length: int,
    stride: int = 1,
) -> tuple[list[SampleWindow], NormStats]:
    """Windows plus normalization statistics from the training split only."""
    windows = [
        w
        for seq in train_sequences
        for w in make_windows(seq, s=sequence_length, stride=stride)
    ]
    stats = compute_norm_stats(train_sequences)
    return windows, stats
