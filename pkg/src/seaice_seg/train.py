"""Training loop: pair loss, warm-restart cosine schedule, early stopping."""
from __future__ import annotations

import copy
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import labels as L
from .augment import AugmentConfig, augment_pair, derive_seed
from .dataset import FramePair
from .model.checkpoint import save_checkpoint
from .model.inference import to_tensor

log = logging.getLogger(__name__)


class TrainConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    weight_decay: float = 1e-6
    t0: int = 10  # epochs in the first cosine cycle
    t_mult: int = 2
    max_epochs: int = 800
    patience: int = 150
    batch_size: int = 4
    seed: int = 0
    pair_stride: int = 1

    def __post_init__(self):
        if not self.lr_min < self.lr_max:
            raise TrainConfigError(f"lr_min ({self.lr_min}) must be below lr_max ({self.lr_max})")
        if self.t0 < 1:
            raise TrainConfigError("t0 must be >= 1")
        if self.t_mult < 1:
            raise TrainConfigError("t_mult must be >= 1")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise TrainConfigError("max_epochs, patience and batch_size must be positive")


def lr_at(epoch: float, config: TrainConfig) -> float:
    """Cosine annealing with warm restarts, evaluated per epoch."""
    if epoch < 0:
        raise TrainConfigError("epoch must be >= 0")
    t, period = float(epoch), float(config.t0)
    while t >= period:
        t -= period
        period *= config.t_mult
    return config.lr_min + (config.lr_max - config.lr_min) * (1 + math.cos(math.pi * t / period)) / 2


def _per_image_ce(logits: torch.Tensor, label: torch.Tensor):
    ce = F.cross_entropy(logits, label, ignore_index=L.IGNORE, reduction="none")
    valid = (label != L.IGNORE).flatten(1)
    counts = valid.sum(1)
    sums = (ce.flatten(1) * valid).sum(1)
    return sums, counts


def pair_loss(logits_a, logits_b, label_a, label_b) -> torch.Tensor:
    """Mean of per-image pixel-averaged cross-entropies over the images of
    both frames that have at least one non-ignored pixel."""
    sa, ca = _per_image_ce(logits_a, label_a.long())
    sb, cb = _per_image_ce(logits_b, label_b.long())
    sums = torch.cat([sa, sb])
    counts = torch.cat([ca, cb])
    defined = counts > 0
    if not bool(defined.any()):
        log.warning("pair_loss: every pixel is ignored; loss defined as 0")
        return (logits_a.sum() + logits_b.sum()) * 0.0
    return (sums[defined] / counts[defined]).mean()


def forward_pair(model, xa: torch.Tensor, xb: torch.Tensor):
    """Logits for both frames; the single-image baseline sees each alone."""
    if model.kind == "uperflow":
        out = model(xa, xb)
        return out.logits_a, out.logits_b
    logits = model(torch.cat([xa, xb], dim=0))
    return logits[: xa.shape[0]], logits[xa.shape[0]:]


def make_optimizer(params, config: TrainConfig) -> torch.optim.Optimizer:
    """AdamW (decoupled weight decay); the learning rate is set per epoch."""
    return torch.optim.AdamW(params, lr=config.lr_max, weight_decay=config.weight_decay)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped_early: bool = False


def _collate(pairs):
    xa = to_tensor([p.frame_a for p in pairs])
    xb = to_tensor([p.frame_b for p in pairs])
    ya = torch.from_numpy(np.stack([p.label_a for p in pairs]).astype(np.int64))
    yb = torch.from_numpy(np.stack([p.label_b for p in pairs]).astype(np.int64))
    return xa, xb, ya, yb


def _validation_batches(val_pairs, aug: AugmentConfig, batch_size: int):
    center = AugmentConfig.identity(aug.crop)
    rng = np.random.default_rng(0)  # unused by the identity config
    prepared = [augment_pair(p, center, rng)[0] for p in val_pairs]
    return [_collate(prepared[i:i + batch_size]) for i in range(0, len(prepared), batch_size)]


@torch.no_grad()
def validation_loss(model, batches) -> float:
    model.eval()
    total, n = 0.0, 0
    for xa, xb, ya, yb in batches:
        la, lb = forward_pair(model, xa, xb)
        total += float(pair_loss(la, lb, ya, yb)) * xa.shape[0]
        n += xa.shape[0]
    return total / n


def train_loop(model, train_pairs, val_pairs, config: TrainConfig, aug: AugmentConfig, out_dir=None) -> TrainResult:
    """Train in place; the model ends holding the best-validation weights.

    ``out_dir`` (optional) receives ``history.jsonl``, ``best.ckpt``,
    ``last.ckpt`` and ``config.json``.
    """
    train_pairs = list(train_pairs)
    val_pairs = list(val_pairs)
    if not train_pairs or not val_pairs:
        raise TrainConfigError("train and validation splits must be nonempty")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        snapshot = {"train": asdict(config), "augment": asdict(aug), "model": model.config.to_dict(), "kind": model.kind}
        (out / "config.json").write_text(json.dumps(snapshot, indent=2))
        history_path = out / "history.jsonl"
        history_path.write_text("")
    seed_everything(config.seed)
    opt = make_optimizer([p for p in model.parameters() if p.requires_grad], config)
    val_batches = _validation_batches(val_pairs, aug, config.batch_size)
    result = TrainResult()
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    step = 0
    for epoch in range(config.max_epochs):
        lr = lr_at(epoch, config)
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        order = np.random.default_rng(derive_seed(config.seed, "order", epoch)).permutation(len(train_pairs))
        losses = []
        for s in range(0, len(order), config.batch_size):
            batch = []
            for i in order[s:s + config.batch_size]:
                pair = train_pairs[i]
                rng = np.random.default_rng(derive_seed(config.seed, "augment", epoch, pair.video_id, pair.index_a))
                batch.append(augment_pair(pair, aug, rng)[0])
            xa, xb, ya, yb = _collate(batch)
            la, lb = forward_pair(model, xa, xb)
            loss = pair_loss(la, lb, ya, yb)
            if not torch.isfinite(loss):
                if out is not None:
                    save_checkpoint(out / "diverged.ckpt", model, step, {"epoch": epoch, "loss": float(loss)})
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}, step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        val = validation_loss(model, val_batches)
        if not math.isfinite(val):
            if out is not None:
                save_checkpoint(out / "diverged.ckpt", model, step, {"epoch": epoch, "val_loss": val})
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val, "lr": lr}
        result.history.append(rec)
        if out is not None:
            with open(history_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
        log.info("epoch %d train %.4f val %.4f lr %.2e", epoch, rec["train_loss"], val, lr)
        if val < result.best_val_loss:
            result.best_val_loss = val
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
            if out is not None:
                save_checkpoint(out / "best.ckpt", model, step, {"epoch": epoch, "val_loss": val})
        else:
            stale += 1
        if out is not None:
            save_checkpoint(out / "last.ckpt", model, step, {"epoch": epoch, "val_loss": val})
        if stale >= config.patience:
            result.stopped_early = True
            log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
            break
    model.load_state_dict(best_state)
    return result


def pairs_from_videos(videos, stride: int = 1, video_ids=None) -> list:
    """FramePairs ``(i, i + stride)`` from in-memory videos with labels."""
    out = []
    for k, v in enumerate(videos):
        vid = video_ids[k] if video_ids is not None else f"video{k:03d}"
        for i in range(len(v.frames) - stride):
            out.append(FramePair(v.frames[i], v.frames[i + stride], v.labels[i], v.labels[i + stride], vid, i, stride))
    return out


def read_history(path) -> list:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
