"""Evaluation metrics.

Full-reference scores compare against a ground-truth image; CIEDE2000
scores colour-checker patches against known Lab values. UIQM needs no
reference at all.
All image arguments are (H, W, 3) uint8 arrays unless noted.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .colorspace import rgb_to_lab_array

LUMA = np.array([0.299, 0.587, 0.114])

UIQM_COEFFS = (0.0282, 0.2953, 3.5753)
UICM_MEAN_W, UICM_STD_W = -0.0268, 0.1586
UICM_ALPHA = 0.1
BLOCK = 8


def _pair(pred: np.ndarray, ref: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"image dimensions differ: {pred.shape} vs {ref.shape}")
    return pred, ref


def mse_psnr(pred: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    """MSE over all pixels and channels on the 0-255 scale; PSNR is +inf when identical."""
    pred, ref = _pair(pred, ref)
    mse = float(np.mean((pred - ref) ** 2))
    psnr = math.inf if mse == 0 else 10.0 * math.log10(255.0 ** 2 / mse)
    return mse, psnr


def luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img if img.ndim == 2 else img @ LUMA


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def ssim_metric(pred: np.ndarray, ref: np.ndarray, size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all fully-contained Gaussian windows of the luma images."""
    x, y = _pair(luma(pred), luma(ref))
    if x.shape[0] < size or x.shape[1] < size:
        raise ValueError(f"image {x.shape} smaller than the {size}x{size} SSIM window")
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    g = gaussian_window(size, sigma)

    def blur(a):
        a = sliding_window_view(a, size, axis=0) @ g
        return sliding_window_view(a, size, axis=1) @ g

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(smap.mean())


# --- UIQM --------------------------------------------------------------------

def trimmed_mean(x: np.ndarray, alpha_l: float = UICM_ALPHA, alpha_r: float = UICM_ALPHA) -> float:
    """Asymmetric alpha-trimmed mean."""
    x = np.sort(np.ravel(x))
    k = x.size
    lo = int(math.ceil(alpha_l * k))
    hi = k - int(math.floor(alpha_r * k))
    return float(x[lo:hi].mean())


def uicm(img: np.ndarray) -> float:
    rgb = np.asarray(img, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    rg = r - g
    yb = 0.5 * (r + g) - b
    mu_rg, mu_yb = trimmed_mean(rg), trimmed_mean(yb)
    var_rg = np.mean((rg - mu_rg) ** 2)
    var_yb = np.mean((yb - mu_yb) ** 2)
    return float(UICM_MEAN_W * math.hypot(mu_rg, mu_yb) + UICM_STD_W * math.sqrt(var_rg + var_yb))


def _blocks(ch: np.ndarray, block: int):
    h, w = ch.shape
    k2, k1 = h // block, w // block
    if k1 == 0 or k2 == 0:
        raise ValueError(f"image {ch.shape} smaller than one {block}x{block} block")
    b = ch[:k2 * block, :k1 * block].reshape(k2, block, k1, block)
    return b.max(axis=(1, 3)), b.min(axis=(1, 3)), k1 * k2


def eme(ch: np.ndarray, block: int = BLOCK) -> float:
    """Block measure of enhancement: 2/(k1 k2) * sum log(max/min); blocks with a zero skipped."""
    hi, lo, n = _blocks(ch, block)
    ok = (lo > 0) & (hi > 0)
    return float(2.0 / n * np.log(hi[ok] / lo[ok]).sum())


def sobel_magnitude(ch: np.ndarray) -> np.ndarray:
    ch = np.asarray(ch, dtype=np.float64)
    return np.hypot(ndimage.sobel(ch, axis=0), ndimage.sobel(ch, axis=1))


def uism(img: np.ndarray, block: int = BLOCK) -> float:
    rgb = np.asarray(img, dtype=np.float64)
    vals = [eme(rgb[..., c] * sobel_magnitude(rgb[..., c]), block) for c in range(3)]
    return float(np.dot(LUMA, vals))


def log_amee(ch: np.ndarray, block: int = BLOCK) -> float:
    """-1/(k1 k2) * sum c log c over blocks, c = (max - min) / (max + min)."""
    hi, lo, n = _blocks(np.asarray(ch, dtype=np.float64), block)
    top, bot = hi - lo, hi + lo
    ok = (top > 0) & (bot > 0)
    c = top[ok] / bot[ok]
    return float(-1.0 / n * (c * np.log(c)).sum())


def uiconm(img: np.ndarray, block: int = BLOCK) -> float:
    return log_amee(luma(img), block)


@dataclass
class UIQMResult:
    uicm: float
    uism: float
    uiconm: float
    uiqm: float


def uiqm(img: np.ndarray, coeffs: Sequence[float] = UIQM_COEFFS) -> UIQMResult:
    a, b, c = uicm(img), uism(img), uiconm(img)
    return UIQMResult(a, b, c, coeffs[0] * a + coeffs[1] * b + coeffs[2] * c)


# --- CIEDE2000 ---------------------------------------------------------------

def ciede2000(lab1, lab2, kl: float = 1.0, kc: float = 1.0, kh: float = 1.0):
    """CIEDE2000 colour difference. Inputs are unnormalized Lab, last axis (L, a, b)."""
    l1, a1, b1 = np.moveaxis(np.asarray(lab1, dtype=np.float64), -1, 0)
    l2, a2, b2 = np.moveaxis(np.asarray(lab2, dtype=np.float64), -1, 0)

    c_bar = (np.hypot(a1, b1) + np.hypot(a2, b2)) / 2.0
    c7 = c_bar ** 7
    g = 0.5 * (1.0 - np.sqrt(c7 / (c7 + 25.0 ** 7)))
    a1p, a2p = (1.0 + g) * a1, (1.0 + g) * a2
    c1p, c2p = np.hypot(a1p, b1), np.hypot(a2p, b2)
    h1p = np.where((a1p == 0) & (b1 == 0), 0.0, np.degrees(np.arctan2(b1, a1p)) % 360.0)
    h2p = np.where((a2p == 0) & (b2 == 0), 0.0, np.degrees(np.arctan2(b2, a2p)) % 360.0)

    dlp = l2 - l1
    dcp = c2p - c1p
    cprod = c1p * c2p
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, np.where(dh < -180.0, dh + 360.0, dh))
    dh = np.where(cprod == 0, 0.0, dh)
    dhp = 2.0 * np.sqrt(cprod) * np.sin(np.radians(dh) / 2.0)

    lp_bar = (l1 + l2) / 2.0
    cp_bar = (c1p + c2p) / 2.0
    hsum = h1p + h2p
    hp_bar = np.where(np.abs(h1p - h2p) <= 180.0, hsum / 2.0,
                      np.where(hsum < 360.0, (hsum + 360.0) / 2.0, (hsum - 360.0) / 2.0))
    hp_bar = np.where(cprod == 0, hsum, hp_bar)

    t = (1.0 - 0.17 * np.cos(np.radians(hp_bar - 30.0)) + 0.24 * np.cos(np.radians(2.0 * hp_bar))
         + 0.32 * np.cos(np.radians(3.0 * hp_bar + 6.0)) - 0.20 * np.cos(np.radians(4.0 * hp_bar - 63.0)))
    d_theta = 30.0 * np.exp(-(((hp_bar - 275.0) / 25.0) ** 2))
    cp7 = cp_bar ** 7
    rc = 2.0 * np.sqrt(cp7 / (cp7 + 25.0 ** 7))
    lm = (lp_bar - 50.0) ** 2
    sl = 1.0 + 0.015 * lm / np.sqrt(20.0 + lm)
    sc = 1.0 + 0.045 * cp_bar
    sh = 1.0 + 0.015 * cp_bar * t
    rt = -np.sin(np.radians(2.0 * d_theta)) * rc

    tl, tc, th = dlp / (kl * sl), dcp / (kc * sc), dhp / (kh * sh)
    de = np.sqrt(tl * tl + tc * tc + th * th + rt * tc * th)
    return float(de) if de.ndim == 0 else de


# --- colour checker ----------------------------------------------------------

@dataclass
class PatchLayout:
    rects: list[tuple[int, int, int, int]]
    reference_lab: np.ndarray

    def __post_init__(self):
        self.reference_lab = np.asarray(self.reference_lab, dtype=np.float64).reshape(-1, 3)
        if len(self.rects) != 24 or len(self.reference_lab) != 24:
            raise ValueError(f"colour checker needs 24 patches, got {len(self.rects)}")

    def validate(self, height: int, width: int):
        for i, (x, y, w, h) in enumerate(self.rects):
            if w < 1 or h < 1 or x < 0 or y < 0 or x + w > width or y + h > height:
                raise ValueError(f"patch {i} ({x}, {y}, {w}, {h}) outside {width}x{height} image")


def read_patch_layout(path: str | Path) -> PatchLayout:
    """CSV with header ``x,y,w,h,L,a,b`` and 24 rows."""
    rects, labs = [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rects.append(tuple(int(row[k]) for k in ("x", "y", "w", "h")))
            labs.append([float(row[k]) for k in ("L", "a", "b")])
    return PatchLayout(rects, np.array(labs))


def write_patch_layout(path: str | Path, layout: PatchLayout):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "w", "h", "L", "a", "b"])
        for rect, lab in zip(layout.rects, layout.reference_lab):
            w.writerow([*rect, *(repr(float(v)) for v in lab)])


def patch_means(img: np.ndarray, layout: PatchLayout) -> np.ndarray:
    """Mean Lab of each patch, shape (24, 3)."""
    img = np.asarray(img)
    layout.validate(img.shape[0], img.shape[1])
    rgb = np.array([img[y:y + h, x:x + w].reshape(-1, 3).mean(axis=0) for x, y, w, h in layout.rects])
    return rgb_to_lab_array((rgb / 255.0).T).T


def colorchecker_score(img: np.ndarray, layout: PatchLayout) -> tuple[float, np.ndarray]:
    """Mean CIEDE2000 over the 24 patches, and the per-patch values."""
    per_patch = ciede2000(patch_means(img, layout), layout.reference_lab)
    return float(per_patch.mean()), per_patch


# --- reports -----------------------------------------------------------------

COLUMNS = ("image", "mse", "psnr", "ssim", "uicm", "uism", "uiconm", "uiqm", "ciede2000")


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, image_id: str, **values):
        self.rows.append({"image": image_id, **values})

    @property
    def columns(self) -> list[str]:
        present = {k for row in self.rows for k, v in row.items() if v is not None}
        return [c for c in COLUMNS if c in present]

    def mean(self) -> dict[str, float]:
        out = {}
        for col in self.columns[1:]:
            vals = [row[col] for row in self.rows if row.get(col) is not None]
            out[col] = float(np.mean(vals)) if vals else math.nan
        return out

    def write_csv(self, path: str | Path):
        cols = self.columns
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.rows:
                w.writerow([_fmt(row.get(c)) for c in cols])
            mean = self.mean()
            w.writerow(["MEAN"] + [_fmt(mean[c]) for c in cols[1:]])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def score_image(pred: np.ndarray, ref: np.ndarray | None = None, layout: PatchLayout | None = None,
                reference_metrics: bool = True) -> dict:
    """All applicable metrics for one uint8 image."""
    row: dict = {}
    if ref is not None and reference_metrics:
        row["mse"], row["psnr"] = mse_psnr(pred, ref)
        row["ssim"] = ssim_metric(pred, ref)
    q = uiqm(pred)
    row.update(uicm=q.uicm, uism=q.uism, uiconm=q.uiconm, uiqm=q.uiqm)
    if layout is not None:
        row["ciede2000"] = colorchecker_score(pred, layout)[0]
    return row
