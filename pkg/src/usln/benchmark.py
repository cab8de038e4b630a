"""Overfit benchmark on synthetic degraded/clean pairs."""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import to_uint8
from .losses import LossConfig
from .metrics import mse_psnr
from .model import WeightSet, enhance
from .synthetic import make_pairs
from .trainer import EpochStats, TrainConfig, fit


def overfit_train_config(epochs: int = 300, seed: int = 0) -> TrainConfig:
    # small batches with a slow decay; the 10 / 0.01 / 5% schedule stalls within 300 epochs
    return TrainConfig(epochs=epochs, batch_size=2, lr0=0.005, lr_decay_per_epoch=0.01, seed=seed,
                       checkpoint_every=epochs, resize=None, loss=LossConfig())


@dataclass
class OverfitConfig:
    pairs: int = 8
    size: int = 32
    data_seed: int = 0
    train: TrainConfig = field(default_factory=overfit_train_config)


@dataclass
class OverfitResult:
    weights: WeightSet
    history: list[EpochStats]
    psnr: list[float]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def loss_ratio(self) -> float:
        return self.history[-1].total / self.history[0].total


def train_set_psnr(weights: WeightSet, pairs) -> list[float]:
    """Per-pair PSNR of the 8-bit enhanced output against the 8-bit clean image."""
    return [mse_psnr(to_uint8(enhance(raw, weights)), to_uint8(clean))[1] for raw, clean in pairs]


def run_overfit(cfg: OverfitConfig | None = None, out_dir: str | Path | None = None) -> OverfitResult:
    cfg = cfg or OverfitConfig()
    pairs = make_pairs(cfg.pairs, cfg.size, cfg.data_seed)
    with tempfile.TemporaryDirectory() as tmp:
        res = fit(cfg.train, pairs, out_dir or tmp)
    return OverfitResult(res.weights, res.history, train_set_psnr(res.weights, pairs))


@dataclass
class UIEBResult:
    psnr: float
    ssim: float
    seconds: float
    weights: WeightSet


def run_uieb(train_manifest: str | Path, test_manifest: str | Path, out_dir: str | Path,
             cfg: TrainConfig | None = None) -> UIEBResult:
    """Train with the default protocol, then score the test split at native resolution."""
    from .data import load_image, load_pairs, read_manifest
    from .metrics import ssim_metric

    cfg = cfg or TrainConfig()
    pairs = load_pairs(read_manifest(train_manifest), resize=cfg.resize)
    t0 = time.perf_counter()
    res = fit(cfg, pairs, out_dir)
    seconds = time.perf_counter() - t0
    psnr, ssim = [], []
    for rec in read_manifest(test_manifest):
        pred = to_uint8(enhance(load_image(rec.raw_path).data, res.weights))
        ref = to_uint8(load_image(rec.reference_path))
        psnr.append(mse_psnr(pred, ref)[1])
        ssim.append(ssim_metric(pred, ref))
    return UIEBResult(float(np.mean(psnr)), float(np.mean(ssim)), seconds, res.weights)
