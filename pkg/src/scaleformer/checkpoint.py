"""Training checkpoints: a directory holding ``tensors.json`` and ``tensors.bin``.

The manifest metadata carries the model and train configs, epoch/step
counters, the latest metric snapshot and the data RNG state; the payload holds
weights, batch-norm buffers and optimizer state. A checkpoint is written into
a sibling temp directory and swapped in, so a crash never leaves a half
written checkpoint under the final name.
"""

from __future__ import annotations

import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scaleformer.autodiff import serialize
from scaleformer.errors import ConfigError, ContractError
from scaleformer.fileio import default_mode

CHECKPOINT_VERSION = 1
STEM = "tensors"
# Keys that may differ between a checkpoint and the model it is loaded into.
_FREE_MODEL_KEYS = {"seed"}


@dataclass
class Checkpoint:
    model_config: dict
    train_config: dict
    epoch: int
    step: int
    weights: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    rng_state: dict | None = None

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"model.{k}": v for k, v in self.weights.items()}
        out.update({f"optim.{k}": v for k, v in self.optimizer.items()})
        return out

    def meta(self) -> dict:
        return {
            "checkpoint_version": CHECKPOINT_VERSION,
            "model_config": self.model_config,
            "train_config": self.train_config,
            "epoch": self.epoch,
            "step": self.step,
            "metrics": self.metrics,
            "rng_state": self.rng_state,
        }


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
    try:
        os.chmod(tmp, default_mode(directory=True))
        serialize.save(tmp / STEM, ckpt.tensors(), ckpt.meta())
        if path.exists():
            old = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}.old."))
            os.replace(path, old / "ckpt")
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def load_checkpoint(path, expected_model: dict | None = None) -> Checkpoint:
    path = Path(path)
    if not (path / f"{STEM}.json").exists():
        raise ContractError(f"{path}: not a checkpoint directory (missing {STEM}.json)")
    tensors, meta = serialize.load(path / STEM)
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {meta.get('checkpoint_version')}")
    if expected_model is not None:
        check_compatible(meta["model_config"], expected_model)
    weights = {k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")}
    optim = {k[len("optim.") :]: v for k, v in tensors.items() if k.startswith("optim.")}
    return Checkpoint(
        meta["model_config"], meta["train_config"], meta["epoch"], meta["step"],
        weights, optim, meta.get("metrics", {}), meta.get("rng_state"),
    )


def check_compatible(stored: dict, requested: dict) -> None:
    conflicts = sorted(
        k for k in set(stored) | set(requested) if k not in _FREE_MODEL_KEYS and stored.get(k) != requested.get(k)
    )
    if conflicts:
        detail = ", ".join(f"{k}: checkpoint {stored.get(k)!r} vs requested {requested.get(k)!r}" for k in conflicts)
        raise ConfigError(f"checkpoint model config conflicts with the requested model ({detail})")


def from_trainer(trainer, metrics: dict | None = None) -> Checkpoint:
    return Checkpoint(
        trainer.model.cfg.to_dict(),
        trainer.cfg.to_dict(),
        trainer.epoch,
        trainer.step,
        dict(trainer.model.state_dict()),
        trainer.optimizer.state_tensors(),
        metrics or {},
        trainer.rng_state(),
    )


def restore_trainer(trainer, ckpt: Checkpoint) -> None:
    trainer.model.load_state_dict(ckpt.weights)
    trainer.optimizer.load_state_tensors(ckpt.optimizer)
    trainer.epoch = ckpt.epoch
    trainer.step = ckpt.step
    if ckpt.rng_state is not None:
        trainer.set_rng_state(ckpt.rng_state)
