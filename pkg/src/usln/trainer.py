"""Adam training loop with a per-epoch exponential learning-rate decay."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward
from .losses import ConfigError, LossConfig, combined_loss
from .model import LAYOUT, WeightSet, bind, init_weights, load_weights, save_weights, usln_forward

log = logging.getLogger(__name__)

Pair = tuple[np.ndarray, np.ndarray]


class NumericalError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 10
    lr0: float = 0.01
    lr_decay_per_epoch: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    init_jitter: float = 0.0
    checkpoint_every: int = 10
    resize: int | None = 256
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.lr_decay_per_epoch < 1:
            raise ConfigError("lr_decay_per_epoch must lie in [0, 1)")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")

    def lr(self, epoch: int) -> float:
        return self.lr0 * (1.0 - self.lr_decay_per_epoch) ** epoch


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, weights: WeightSet) -> AdamState:
        return cls({k: np.zeros(a.shape) for k, a in weights.items()},
                   {k: np.zeros(a.shape) for k, a in weights.items()})

    def to_json(self) -> dict:
        return {"step": self.step,
                "m": {k: a.ravel().tolist() for k, a in self.m.items()},
                "v": {k: a.ravel().tolist() for k, a in self.v.items()}}

    @classmethod
    def from_json(cls, obj: dict) -> AdamState:
        def unpack(d):
            return {k: np.array(d[k], dtype=np.float64).reshape(shape) for k, shape in LAYOUT.items()}
        return cls(unpack(obj["m"]), unpack(obj["v"]), int(obj["step"]))


def adam_update(param, grad, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. ``step`` is the 1-based step count."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def adam_step(w: WeightSet, grads: Mapping[str, np.ndarray], state: AdamState, lr: float,
              cfg: TrainConfig | None = None) -> tuple[WeightSet, AdamState]:
    cfg = cfg or TrainConfig()
    for name in LAYOUT:
        g = grads[name]
        if g.shape != w[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {w[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
    step = state.step + 1
    params, m, v = {}, {}, {}
    for name in LAYOUT:
        p, m[name], v[name] = adam_update(w[name].astype(np.float64), grads[name], state.m[name],
                                          state.v[name], step, lr, cfg.adam_beta1,
                                          cfg.adam_beta2, cfg.adam_eps)
        params[name] = p.astype(np.float32)
        if not np.all(np.isfinite(params[name])):
            raise NumericalError(f"parameter {name} became non-finite")
    return WeightSet(params), AdamState(m, v, step)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    total: float
    mae: float
    ssim: float
    perceptual: float

    def tsv(self) -> str:
        return "\t".join([str(self.epoch), repr(self.lr)] +
                         [f"{x:.8g}" for x in (self.total, self.mae, self.ssim, self.perceptual)])


def example_gradients(weights: WeightSet, raw: np.ndarray, ref: np.ndarray, loss_cfg: LossConfig,
                      fx: Callable | None = None):
    """Loss parts and per-parameter gradients for one training pair."""
    tape = Tape()
    params = bind(weights, tape)
    out = usln_forward(Tensor(raw), params)
    parts = combined_loss(out, Tensor(ref), loss_cfg, fx)
    grads = backward(parts.total)
    return parts, {name: grads.of(t) for name, t in params.items()}


def train_epoch(weights: WeightSet, state: AdamState, pairs: Sequence[Pair], cfg: TrainConfig,
                epoch: int, fx: Callable | None = None) -> tuple[WeightSet, AdamState, EpochStats]:
    """Shuffle, then one Adam step per batch on the mean of per-example gradients."""
    if not pairs:
        raise ConfigError("training set is empty")
    lr = cfg.lr(epoch)
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(pairs))
    sums = np.zeros(4)
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        acc = {name: np.zeros(shape) for name, shape in LAYOUT.items()}
        for i in batch:
            parts, grads = example_gradients(weights, *pairs[i], cfg.loss, fx)
            sums += (parts.total.data.item(), parts.mae, parts.ssim, parts.perceptual)
            for name in LAYOUT:
                acc[name] += grads[name]
        mean_grads = {name: g / len(batch) for name, g in acc.items()}
        weights, state = adam_step(weights, mean_grads, state, lr, cfg)
    means = sums / len(pairs)
    if not np.isfinite(means[0]):
        raise NumericalError(f"epoch {epoch}: loss is not finite")
    return weights, state, EpochStats(epoch, lr, *means.tolist())


def _config_json(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def save_checkpoint(path: Path, weights: WeightSet, state: AdamState, epoch: int, cfg: TrainConfig):
    save_weights(weights, path)
    sidecar = {"epoch": epoch, "adam": state.to_json(), "config": _config_json(cfg)}
    path.with_suffix(".json").write_text(json.dumps(sidecar), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[WeightSet, AdamState, int]:
    """Returns weights, optimizer state and the index of the last finished epoch."""
    path = Path(path)
    weights = load_weights(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    return weights, AdamState.from_json(sidecar["adam"]), int(sidecar["epoch"])


@dataclass
class FitResult:
    weights: WeightSet
    history: list[EpochStats]
    weights_path: Path
    log_path: Path


def fit(cfg: TrainConfig, pairs: Sequence[Pair], out_dir: str | Path, resume: str | Path | None = None,
        fx: Callable | None = None, weights: WeightSet | None = None) -> FitResult:
    """Train for ``cfg.epochs``; write checkpoints, ``train_log.tsv`` and ``weights.usln``."""
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.tsv"

    start = 0
    lines: list[str] = []
    if resume is not None:
        weights, state, last = load_checkpoint(resume)
        start = last + 1
        if log_path.exists():
            lines = log_path.read_text(encoding="utf-8").splitlines()[:start]
    else:
        weights = weights if weights is not None else init_weights(cfg.seed, cfg.init_jitter)
        state = AdamState.zeros(weights)

    history: list[EpochStats] = []
    with log_path.open("w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
        for epoch in range(start, cfg.epochs):
            weights, state, stats = train_epoch(weights, state, pairs, cfg, epoch, fx)
            history.append(stats)
            fh.write(stats.tsv() + "\n")
            fh.flush()
            log.info("epoch %d lr %.3g loss %.5f (mae %.5f ssim %.5f)", epoch, stats.lr,
                     stats.total, stats.mae, stats.ssim)
            if (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt_dir / f"epoch_{epoch:04d}.usln", weights, state, epoch, cfg)

    weights_path = out_dir / "weights.usln"
    save_weights(weights, weights_path)
    return FitResult(weights, history, weights_path, log_path)
