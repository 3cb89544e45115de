"""Desk-scale comparison of tiny UPerFlow and tiny UPerNet on synthetic
videos under light and heavy occlusion."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .augment import AugmentConfig, build_occluded_testset, derive_seed
from .dataset import SyntheticSceneSpec, synthesize_scene
from .evaluation import EvalVideo, evaluate
from .model import ModelConfig, build_model, make_predictor
from .train import TrainConfig, pairs_from_videos, seed_everything, train_loop

log = logging.getLogger(__name__)


@dataclass
class BenchmarkConfig:
    n_train: int = 5
    n_val: int = 1
    n_test: int = 2
    n_frames: int = 8
    size: int = 512
    crop: int = 192  # 256 costs ~11 min per seed on one CPU, over the 3-seed budget
    max_flow: tuple = (6, 2)  # |dx|, |dy| bounds of the per-video translation
    epochs: int = 30
    patience: int = 30
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    t0: int = 10
    t_mult: int = 2
    batch_size: int = 2
    erase_p: float = 0.7
    model: dict = field(default_factory=dict)  # ModelConfig.tiny overrides

    @property
    def n_videos(self) -> int:
        return self.n_train + self.n_val + self.n_test


def synthetic_videos(seed: int, cfg: BenchmarkConfig) -> list:
    rng = np.random.default_rng(derive_seed(seed, "benchmark-videos"))
    videos = []
    for k in range(cfg.n_videos):
        dx = int(rng.integers(-cfg.max_flow[0], cfg.max_flow[0] + 1))
        dy = int(rng.integers(-cfg.max_flow[1], cfg.max_flow[1] + 1))
        spec = SyntheticSceneSpec(
            seed=derive_seed(seed, "scene", k) % 2**31, n_frames=cfg.n_frames, height=cfg.size, width=cfg.size, flow=(dx, dy)
        )
        videos.append(synthesize_scene(spec))
    return videos


def run_benchmark(seed: int, cfg: BenchmarkConfig | None = None, kinds=("uperflow", "upernet")) -> dict:
    """Train each model kind on the same data and score it at every level.

    Returns ``{kind: {level: (overall, occluded)}}`` plus ``"seconds"``.
    """
    cfg = cfg or BenchmarkConfig()
    t_start = time.time()
    videos = synthetic_videos(seed, cfg)
    train_v = videos[: cfg.n_train]
    val_v = videos[cfg.n_train: cfg.n_train + cfg.n_val]
    test_v = videos[cfg.n_train + cfg.n_val:]
    train_pairs = pairs_from_videos(train_v, video_ids=[f"train{i}" for i in range(len(train_v))])
    val_pairs = pairs_from_videos(val_v, video_ids=[f"val{i}" for i in range(len(val_v))])
    test_sets = {"none": [EvalVideo(v.frames, v.labels, None, f"test{i}") for i, v in enumerate(test_v)]}
    for level in ("light", "heavy"):
        test_sets[level] = []
        for i, v in enumerate(test_v):
            frames, masks = build_occluded_testset(v.frames, level, seed, f"test{i}")
            test_sets[level].append(EvalVideo(frames, v.labels, masks, f"test{i}"))
    tcfg = TrainConfig(
        lr_max=cfg.lr_max, lr_min=cfg.lr_min, t0=cfg.t0, t_mult=cfg.t_mult,
        max_epochs=cfg.epochs, patience=cfg.patience, batch_size=cfg.batch_size, seed=seed,
    )
    aug = AugmentConfig(crop=(cfg.crop, cfg.crop), erase_p=cfg.erase_p)
    results = {}
    for kind in kinds:
        seed_everything(derive_seed(seed, "init", kind) % 2**31)
        model = build_model(kind, ModelConfig.tiny(**cfg.model))
        t0 = time.time()
        hist = train_loop(model, train_pairs, val_pairs, tcfg, aug)
        log.info("%s seed %d trained in %.0fs, best val %.4f", kind, seed, time.time() - t0, hist.best_val_loss)
        predict = make_predictor(model)
        with torch.no_grad():
            results[kind] = {level: evaluate(predict, vids, level) for level, vids in test_sets.items()}
        results[kind]["history"] = hist.history
    results["seconds"] = time.time() - t_start
    return results


def degradation(light: float, heavy: float) -> float:
    """Relative mIoU loss going from light to heavy occlusion."""
    return (light - heavy) / light
