"""Loss, optimizers, augmentation and the training loop."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from scaleformer.autodiff import Tensor, no_grad, ops
from scaleformer.errors import ConfigError, ContractError, NonFiniteError
from scaleformer.nn import Module

DICE_EPS = 1e-5


@dataclass
class TrainConfig:
    batch_size: int = 4
    learning_rate: float = 0.01
    epochs: int = 300
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    ce_weight: float = 0.5
    dice_weight: float = 0.5
    hflip: bool = True
    vflip: bool = True
    rotate: bool = True
    augment_prob: float = 0.5
    checkpoint_every: int = 0
    num_samples: int = 16
    data_seed: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {sorted(OPTIMIZERS)}, got {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.ce_weight < 0 or self.dice_weight < 0 or self.ce_weight + self.dice_weight == 0:
            raise ConfigError("loss weights must be >= 0 and not both zero")
        if not 0 <= self.augment_prob <= 1:
            raise ConfigError("augment_prob must lie in [0, 1]")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {unknown}")
        return cls(**values)


# Published per-dataset recipes, kept verbatim; only "desk" is tuned for the synthetic data.
TRAIN_PRESETS: dict[str, dict] = {
    "desk": {},
    "synapse": {"batch_size": 8, "learning_rate": 3e-3, "epochs": 600, "optimizer": "sgd"},
    "acdc": {"batch_size": 8, "learning_rate": 3e-3, "epochs": 200, "optimizer": "sgd"},
    "monuseg": {"batch_size": 4, "learning_rate": 1e-3, "epochs": 200, "optimizer": "adam"},
}


# loss ------------------------------------------------------------------------------


def combined_loss(logits: Tensor, target: np.ndarray, ce_weight: float = 0.5, dice_weight: float = 0.5) -> Tensor:
    """ce_weight * mean pixel CE + dice_weight * (1 - mean soft Dice over all classes)."""
    B, K, H, W = logits.shape
    target = np.asarray(target)
    if target.shape != (B, H, W):
        raise ContractError(f"target shape {target.shape} does not match logits {logits.shape}")
    if not np.issubdtype(target.dtype, np.integer) or target.min() < 0 or target.max() >= K:
        raise ContractError(f"target labels must be integers in [0, {K})")
    onehot = ops.one_hot(target, K, dtype=logits.dtype)
    loss = None
    if ce_weight:
        ce = -(ops.log_softmax(logits, axis=1) * onehot).sum(axis=1).mean()
        loss = ce * ce_weight
    if dice_weight:
        probs = ops.softmax(logits, axis=1)
        inter = (probs * onehot).sum(axis=(0, 2, 3))
        denom = probs.sum(axis=(0, 2, 3)) + onehot.sum(axis=(0, 2, 3))
        dice = (inter * 2.0 + DICE_EPS) / (denom + DICE_EPS)
        term = (1.0 - dice.mean()) * dice_weight
        loss = term if loss is None else loss + term
    return loss


# optimizers --------------------------------------------------------------------------


def sgd_step(params: dict[str, Tensor], cfg: TrainConfig, state: dict[str, np.ndarray]) -> None:
    """Classic momentum with L2-coupled decay: v = m*v + (g + wd*p); p -= lr*v."""
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad + cfg.weight_decay * p.data if cfg.weight_decay else p.grad
        v = state.get(name)
        v = g.copy() if v is None else cfg.momentum * v + g
        state[name] = v
        p.data -= (cfg.learning_rate * v).astype(p.data.dtype)


class SGD:
    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.state: dict[str, np.ndarray] = {}

    def step(self) -> None:
        sgd_step(self.params, self.cfg, self.state)

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {f"velocity.{k}": v for k, v in sorted(self.state.items())}

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.state = {k[len("velocity.") :]: v.copy() for k, v in tensors.items() if k.startswith("velocity.")}


class Adam:
    """Adam with beta1 = cfg.momentum, beta2 = 0.999 and L2-coupled weight decay."""

    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.momentum, self.beta2
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad + cfg.weight_decay * p.data if cfg.weight_decay else p.grad
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.data -= (cfg.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.int64)}
        out.update({f"m.{k}": v for k, v in sorted(self.m.items())})
        out.update({f"v.{k}": v for k, v in sorted(self.v.items())})
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.t = int(tensors["t"][0]) if "t" in tensors else 0
        self.m = {k[2:]: v.copy() for k, v in tensors.items() if k.startswith("m.")}
        self.v = {k[2:]: v.copy() for k, v in tensors.items() if k.startswith("v.")}


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


def make_optimizer(model: Module, cfg: TrainConfig):
    return OPTIMIZERS[cfg.optimizer](dict(model.named_parameters()), cfg)


# augmentation ------------------------------------------------------------------------


def augment(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator, cfg: TrainConfig | None = None):
    """Random flips and a random quarter-turn, shared by image (..., H, W) and mask (H, W).

    Every random draw happens regardless of the flags, so toggling one
    augmentation does not shift the random stream of the others.
    """
    cfg = TrainConfig() if cfg is None else cfg
    p = cfg.augment_prob
    do_h, do_v, do_r = rng.random(3) < p
    k = int(rng.integers(1, 4))
    if cfg.hflip and do_h:
        image, mask = image[..., ::-1], mask[..., ::-1]
    if cfg.vflip and do_v:
        image, mask = image[..., ::-1, :], mask[..., ::-1, :]
    if cfg.rotate and do_r:
        image, mask = np.rot90(image, k, axes=(-2, -1)), np.rot90(mask, k, axes=(-2, -1))
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


# training loop -------------------------------------------------------------------------


def batch_dice(pred: np.ndarray, target: np.ndarray, num_classes: int) -> float:
    """Mean foreground DSC over (sample, class) pairs; empty-vs-empty counts as 1."""
    scores = []
    for p, t in zip(pred, target):
        for c in range(1, num_classes):
            a, b = p == c, t == c
            total = a.sum() + b.sum()
            scores.append(1.0 if total == 0 else 2.0 * (a & b).sum() / total)
    return float(np.mean(scores)) if scores else 1.0


@dataclass
class EpochRecord:
    epoch: int
    step: int
    loss: float
    dsc: float


class Trainer:
    """Owns the model, optimizer, data RNG and step counters."""

    def __init__(self, model: Module, cfg: TrainConfig, images: np.ndarray, masks: np.ndarray):
        cfg.validate()
        self.model = model
        self.cfg = cfg
        self.images = images.astype(model.parameters()[0].dtype)
        self.masks = masks
        self.optimizer = make_optimizer(model, cfg)
        self.rng = np.random.default_rng(cfg.seed)
        self.epoch = 0
        self.step = 0
        self.history: list[EpochRecord] = []

    @property
    def num_classes(self) -> int:
        return self.model.cfg.num_classes

    def train_epoch(self) -> EpochRecord:
        cfg = self.cfg
        self.model.train()
        order = self.rng.permutation(len(self.images))
        losses, preds, targets = [], [], []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pairs = [augment(self.images[i], self.masks[i], self.rng, cfg) for i in idx]
            x = np.stack([p[0] for p in pairs])
            y = np.stack([p[1] for p in pairs])
            self.model.zero_grad()
            logits = self.model(Tensor(x))
            loss = combined_loss(logits, y, cfg.ce_weight, cfg.dice_weight)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteError(f"non-finite loss {value} at step {self.step}")
            loss.backward()
            self.optimizer.step()
            self.step += 1
            losses.append(value * len(idx))
            preds.append(logits.data.argmax(axis=1))
            targets.append(y)
        self.epoch += 1
        record = EpochRecord(
            self.epoch,
            self.step,
            float(np.sum(losses) / len(order)),
            batch_dice(np.concatenate(preds), np.concatenate(targets), self.num_classes),
        )
        self.history.append(record)
        return record

    def predict(self, images: np.ndarray | None = None, batch_size: int | None = None) -> np.ndarray:
        images = self.images if images is None else images
        return predict(self.model, images, batch_size or self.cfg.batch_size)

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


def predict(model: Module, images: np.ndarray, batch_size: int = 4) -> np.ndarray:
    """Eval-mode argmax labels (N, H, W)."""
    was_training = model.training
    model.eval()
    dtype = model.parameters()[0].dtype
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            x = Tensor(images[start : start + batch_size].astype(dtype))
            out.append(model(x).data.argmax(axis=1))
    model.train(was_training)
    return np.concatenate(out)
