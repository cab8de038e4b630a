"""Training losses and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .autodiff import Tensor, abs_, channel_mean, mean_all, pointwise_conv, sub


class ConfigError(ValueError):
    pass


@dataclass
class LossConfig:
    lambda_ssim: float = 0.25
    lambda_perceptual: float = 1.0
    perceptual_enabled: bool = False
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2

    def __post_init__(self):
        if self.lambda_ssim < 0 or self.lambda_perceptual < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.ssim_c1 <= 0 or self.ssim_c2 <= 0:
            raise ConfigError("SSIM stabilizers must be positive")


class FeatureExtractor(Protocol):
    """Differentiable image -> feature map, built from autodiff ops."""

    descriptor: str

    def __call__(self, image: Tensor) -> Tensor: ...


class IdentityExtractor:
    descriptor = "identity"

    def __call__(self, image: Tensor) -> Tensor:
        return image


class RandomLinearExtractor:
    """Fixed seeded channel mixing. A cheap stand-in for a real feature network."""

    def __init__(self, seed: int = 0, channels: int = 3):
        rng = np.random.default_rng(seed)
        self.weight = rng.normal(size=(channels, channels))
        self.bias = rng.normal(size=channels)
        self.descriptor = f"random-linear(seed={seed})"

    def __call__(self, image: Tensor) -> Tensor:
        return pointwise_conv(image, self.weight, self.bias)


def _check_pair(pred: Tensor, target: Tensor):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over every element."""
    _check_pair(pred, target)
    return mean_all(abs_(sub(pred, target)))


def ssim_loss(pred: Tensor, target: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """``1 - SSIM`` from whole-image statistics per channel, averaged over channels."""
    _check_pair(pred, target)
    cfg = cfg or LossConfig()
    mu_p, mu_t = channel_mean(pred), channel_mean(target)
    dp, dt = pred - mu_p, target - mu_t
    var_p = channel_mean(dp * dp)
    var_t = channel_mean(dt * dt)
    cov = channel_mean(dp * dt)
    num = (2.0 * mu_p * mu_t + cfg.ssim_c1) * (2.0 * cov + cfg.ssim_c2)
    den = (mu_p * mu_p + mu_t * mu_t + cfg.ssim_c1) * (var_p + var_t + cfg.ssim_c2)
    return 1.0 - mean_all(num / den)


def perceptual_loss(pred: Tensor, target: Tensor, fx: Callable[[Tensor], Tensor] | None) -> Tensor:
    if fx is None:
        raise ConfigError("perceptual loss enabled but no feature extractor supplied")
    return mae_loss(fx(pred), fx(target))


@dataclass
class LossParts:
    total: Tensor
    mae: float
    ssim: float
    perceptual: float


def combined_loss(pred: Tensor, target: Tensor, cfg: LossConfig | None = None,
                  fx: Callable[[Tensor], Tensor] | None = None) -> LossParts:
    """``MAE + lambda_ssim * SSIM (+ lambda_perceptual * perceptual)``."""
    cfg = cfg or LossConfig()
    mae = mae_loss(pred, target)
    total = mae
    ssim = perc = 0.0
    if cfg.lambda_ssim > 0:
        s = ssim_loss(pred, target, cfg)
        ssim = s.data.item()
        total = total + cfg.lambda_ssim * s
    if cfg.perceptual_enabled:
        v = perceptual_loss(pred, target, fx)
        perc = v.data.item()
        total = total + cfg.lambda_perceptual * v
    return LossParts(total, mae.data.item(), ssim, perc)
