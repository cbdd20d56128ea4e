"""Joint text + segmentation training.

Total objective: lambda_txt * L_txt + lambda_seg * (lambda_bce * BCE +
lambda_dice * DICE), with the mask terms averaged over the dense frames.
Under the `seg_all` objective every dense frame is decoded with the same
prompt embedding; `seg_one` supervises only the first dense frame.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .datakit import DatasetManifest, fill_template, load_sample
from .errors import ConfigError, NumericAbort
from .maskdec import MaskLogits
from .model import ModelConfig, VideoSegModel, build_model, save_checkpoint
from .sampler import STRATEGIES, sample_frames

DICE_EPS = 1e-6


@dataclass
class LossWeights:
    lambda_txt: float = 1.0
    lambda_seg: float = 1.0
    lambda_bce: float = 2.0
    lambda_dice: float = 0.5

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")


@dataclass
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 2
    lr: float = 3e-4
    weight_decay: float = 0.0
    warmup_iters: int = 100
    weights: LossWeights = field(default_factory=LossWeights)
    objective: str = "seg_all"  # or "seg_one"
    seed: int = 0
    threads: int = 1  # 0 leaves the torch default; 1 gives bit-reproducible runs
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.warmup_iters < 0:
            raise ConfigError(f"warmup_iters must be >= 0, got {self.warmup_iters}")
        if self.objective not in ("seg_all", "seg_one"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.model.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.model.strategy!r}")
        self.weights.validate()


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _check_mask_pair(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    if logits.shape != gt.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)} vs gt {tuple(gt.shape)}")
    gt = gt.to(logits.dtype)
    if not torch.isin(gt, torch.tensor([0.0, 1.0], dtype=gt.dtype)).all():
        raise ValueError("ground-truth mask must contain only 0 and 1")
    return gt


def dice_loss(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Soft DICE: 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)."""
    gt = _check_mask_pair(logits, gt)
    p = torch.sigmoid(logits)
    num = 2.0 * (p * gt).sum() + DICE_EPS
    den = p.sum() + gt.sum() + DICE_EPS
    return 1.0 - num / den


def bce_loss(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Per-pixel binary cross-entropy, numerically stable, mean over pixels."""
    gt = _check_mask_pair(logits, gt)
    return F.binary_cross_entropy_with_logits(logits, gt, reduction="mean")


def segmentation_loss(
    per_frame_logits: list[MaskLogits | torch.Tensor],
    per_frame_gt: list[torch.Tensor],
    w: LossWeights,
) -> torch.Tensor:
    """Mean over supervised frames of lambda_bce * BCE + lambda_dice * DICE."""
    if not per_frame_logits:
        raise ValueError("need at least one supervised frame")
    if len(per_frame_logits) != len(per_frame_gt):
        raise ValueError(
            f"{len(per_frame_logits)} logits vs {len(per_frame_gt)} gt frames"
        )
    terms = []
    for m, gt in zip(per_frame_logits, per_frame_gt):
        logits = m.logits if isinstance(m, MaskLogits) else m
        terms.append(w.lambda_bce * bce_loss(logits, gt)
                     + w.lambda_dice * dice_loss(logits, gt))
    return torch.stack(terms).mean()


def text_loss(
    logits: torch.Tensor, target_ids: torch.Tensor, role_mask: torch.Tensor
) -> torch.Tensor:
    """Mean cross-entropy over the positions selected by role_mask."""
    if logits.shape[0] != target_ids.shape[0] or logits.shape[0] != role_mask.shape[0]:
        raise ValueError("logits, target_ids, role_mask lengths disagree")
    if not role_mask.any():
        raise ValueError("role_mask selects no positions")
    return F.cross_entropy(logits[role_mask], target_ids[role_mask])


def total_loss(txt: torch.Tensor, seg: torch.Tensor, w: LossWeights) -> torch.Tensor:
    return w.lambda_txt * txt + w.lambda_seg * seg


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to cfg.lr at step == warmup_iters, then linear decay to 0
    at step == iterations. Steps are 1-based."""
    if cfg.warmup_iters > 0 and step <= cfg.warmup_iters:
        return cfg.lr * step / cfg.warmup_iters
    if cfg.iterations <= cfg.warmup_iters:
        return cfg.lr
    frac = (cfg.iterations - step) / (cfg.iterations - cfg.warmup_iters)
    return cfg.lr * max(0.0, frac)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    final_loss: float


def sample_losses(
    model: VideoSegModel,
    frames: torch.Tensor,
    gt_masks: torch.Tensor,
    expression: str,
    objective: str,
    w: LossWeights,
    slot_seed: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(text loss, segmentation loss) for one teacher-forced sample."""
    cfg = model.cfg
    selection = sample_frames(
        frames.shape[0], cfg.T_sparse, cfg.T_dense, mode="train", seed=slot_seed
    )
    conv_ids = model.vocab.encode(fill_template(expression)) + [model.vocab.eos_id]
    logits, assembled, prompt = model.teacher_forward(frames, selection, conv_ids)
    txt = text_loss(logits[:-1], assembled.token_ids[1:], assembled.role_mask[1:])
    dense_frames = selection.dense_frame_indices()
    supervised = dense_frames[:1] if objective == "seg_one" else dense_frames
    idx = torch.as_tensor(supervised, dtype=torch.long)
    mask_logits = list(model.decode_frames(frames[idx], prompt).unbind(0))
    gts = [gt_masks[t] for t in supervised]
    seg = segmentation_loss(mask_logits, gts, w)
    return txt, seg


def train(
    cfg: TrainConfig,
    manifest: DatasetManifest,
    out_dir: Path | str,
) -> TrainResult:
    """End-to-end optimization; writes a JSONL loss log and a checkpoint."""
    cfg.validate()
    if not manifest.entries:
        raise ConfigError("manifest has no entries")
    if cfg.threads:
        torch.set_num_threads(cfg.threads)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    samples = [load_sample(manifest, e.video_id) for e in manifest.entries]
    frames_t = [torch.from_numpy(s.frames) for s in samples]
    masks_t = [torch.from_numpy(s.gt_masks.astype(np.float32)) for s in samples]

    model = build_model(cfg.model, seed=cfg.seed)
    model.train()
    opt = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )

    n = len(samples)
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    order: list[int] = []
    log_path = out_dir / "train_log.jsonl"
    with log_path.open("w") as log:
        for step in range(1, cfg.iterations + 1):
            lr = lr_at(step, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            opt.zero_grad()
            txt_sum, seg_sum, tot_sum = 0.0, 0.0, 0.0
            batch_losses = []
            for _ in range(cfg.batch_size):
                if not order:
                    order = order_rng.permutation(n).tolist()
                idx = order.pop()
                epoch = ((step - 1) * cfg.batch_size) // n
                slot_seed = int(
                    np.random.SeedSequence([cfg.seed, 2, epoch, idx]).generate_state(1)[0]
                )
                txt, seg = sample_losses(
                    model, frames_t[idx], masks_t[idx], samples[idx].expression,
                    cfg.objective, cfg.weights, slot_seed,
                )
                tot = total_loss(txt, seg, cfg.weights)
                batch_losses.append(tot)
                txt_sum += float(txt.detach())
                seg_sum += float(seg.detach())
                tot_sum += float(tot.detach())
            loss = torch.stack(batch_losses).mean()
            if not torch.isfinite(loss):
                raise NumericAbort(f"non-finite loss at iteration {step}")
            loss.backward()
            opt.step()
            record = {
                "iter": step,
                "lr": lr,
                "loss_txt": txt_sum / cfg.batch_size,
                "loss_seg": seg_sum / cfg.batch_size,
                "loss_total": tot_sum / cfg.batch_size,
            }
            log.write(json.dumps(record) + "\n")

    model.eval()
    ckpt_path = save_checkpoint(
        out_dir / "checkpoint.pt",
        model,
        meta={"train_config": _train_config_dict(cfg), "split": manifest.split},
    )
    return TrainResult(
        checkpoint_path=ckpt_path,
        log_path=log_path,
        final_loss=tot_sum / cfg.batch_size,
    )


def _train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def train_config_from_dict(payload: dict) -> TrainConfig:
    """Build a TrainConfig from a JSON-style dict (unknown keys rejected)."""
    payload = dict(payload)
    weights = LossWeights(**payload.pop("weights", {}))
    model = ModelConfig(**payload.pop("model", {}))
    try:
        cfg = TrainConfig(weights=weights, model=model, **payload)
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from exc
    cfg.validate()
    return cfg
