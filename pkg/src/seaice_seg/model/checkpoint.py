"""Self-describing checkpoints."""
from __future__ import annotations

from pathlib import Path

import torch
import torch.nn as nn

from .config import ModelConfig
from .networks import build_model

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: nn.Module, step: int = 0, extra: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "step": int(step),
        "extra": dict(extra or {}),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def read_checkpoint(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:  # torch raises a variety of unpickling errors
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"{path} has no version field")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} has unsupported checkpoint version {payload['version']!r}")
    for key in ("kind", "config", "state_dict", "step"):
        if key not in payload:
            raise CheckpointError(f"{path} is missing '{key}'")
    return payload


def load_checkpoint(path) -> tuple:
    """Rebuild the model; returns ``(model, payload)`` with the model in eval mode."""
    payload = read_checkpoint(path)
    config = ModelConfig.from_dict(dict(payload["config"], flow_weights=None))
    model = build_model(payload["kind"], config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
