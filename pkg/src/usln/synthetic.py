"""Synthetic clean/degraded image pairs for smoke tests and the overfit benchmark.

Clean images are smooth random colour fields stretched to span [0, 1] in
every channel. Degradation applies a blue-green cast (per-channel gain) and
compresses contrast toward the channel mean, roughly what water does.
"""
from __future__ import annotations

import numpy as np


def clean_image(rng: np.random.Generator, size: int = 32, blobs: int = 6) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((3, size, size))
    for c in range(3):
        field = rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy
        for _ in range(blobs):
            cy, cx = rng.uniform(0, 1, 2)
            s = rng.uniform(0.08, 0.3)
            field = field + rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        img[c] = (field - field.min()) / (field.max() - field.min())
    return img


def degrade(img: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    gain = np.array([rng.uniform(0.45, 0.7), rng.uniform(0.8, 1.0), rng.uniform(0.85, 1.0)])
    contrast = rng.uniform(0.5, 0.7)
    lift = rng.uniform(0.05, 0.15)
    mean = img.mean(axis=(1, 2), keepdims=True)
    out = gain[:, None, None] * (mean + contrast * (img - mean)) + lift * (1 - gain[:, None, None])
    return np.clip(out, 0.0, 1.0), {"gain": gain, "contrast": contrast, "lift": lift}


def make_pairs(n: int = 8, size: int = 32, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """``n`` (degraded, clean) pairs, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        clean = clean_image(rng, size)
        raw, _ = degrade(clean, rng)
        pairs.append((raw, clean))
    return pairs
