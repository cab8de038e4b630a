"""Differentiable RGB <-> HSI and RGB <-> CIE Lab conversions.

All conversions act on (3, H, W) tensors and record one tape node with a
hand-derived vector-Jacobian product. Ranges:

* RGB in [0, 1]
* HSI: hue in [0, 1) (angle / 2pi), saturation and intensity in [0, 1]
* Lab, normalized: (L / 100, a / 110, b / 110)

The ``*_array`` helpers are plain numpy versions for metrics and tests.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, _check_image, custom_op

EPS = 1e-6
_TWO_PI = 2.0 * np.pi
_SQRT3 = np.sqrt(3.0)
# hue magnitude below which a pixel is treated as achromatic
_ACHROMATIC = 1e-12

# sRGB primaries, D65 white
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)
WHITE_D65 = SRGB_TO_XYZ.sum(axis=1)
LAB_SCALE = np.array([100.0, 110.0, 110.0])

_DELTA = 6.0 / 29.0


# --- HSI -------------------------------------------------------------------

def _rgb_to_hsi(rgb: np.ndarray):
    r, g, b = rgb
    total = r + g + b
    cmin = rgb.min(axis=0)
    u = 2.0 * r - g - b
    v = _SQRT3 * (g - b)
    mag2 = u * u + v * v
    achromatic = mag2 < _ACHROMATIC
    # atan2 form of the arccos hue, valid for every chromatic pixel
    theta = np.arctan2(v, u)
    hue = np.where(theta < 0.0, theta + _TWO_PI, theta) / _TWO_PI
    hue = np.where(achromatic | (hue >= 1.0), 0.0, hue)
    sat = (total - 3.0 * cmin) / np.maximum(total, EPS)
    inten = total / 3.0
    cache = dict(total=total, cmin=cmin, u=u, v=v, mag2=mag2, achromatic=achromatic,
                 argmin=rgb.argmin(axis=0))
    return np.stack([hue, sat, inten]), cache


def rgb_to_hsi(img: Tensor) -> Tensor:
    """RGB -> HSI. Input is clipped to [0, 1]; achromatic pixels get hue 0."""
    _check_image(img, "rgb_to_hsi")
    x = np.clip(img.data, 0.0, 1.0)
    inside = (img.data >= 0.0) & (img.data <= 1.0)
    out, k = _rgb_to_hsi(x)

    def vjp(grad):
        gh, gs, gi = grad
        safe = np.where(k["achromatic"], 1.0, k["mag2"])
        dh_du = np.where(k["achromatic"], 0.0, -k["v"] / safe) / _TWO_PI
        dh_dv = np.where(k["achromatic"], 0.0, k["u"] / safe) / _TWO_PI
        gu, gv = gh * dh_du, gh * dh_dv
        gx = np.stack([2.0 * gu, -gu + _SQRT3 * gv, -gu - _SQRT3 * gv])
        den = np.maximum(k["total"], EPS)
        sat = out[1]
        # S = (T - 3m) / max(T, eps): dS/dc = (1 - 3[c = argmin]) / den - S / den
        live = np.where(k["total"] > EPS, sat, 0.0)
        gx += (gs / den)[None] * (1.0 - live)[None]
        onehot = np.arange(3)[:, None, None] == k["argmin"][None]
        gx -= 3.0 * onehot * (gs / den)[None]
        gx += gi[None] / 3.0
        return (gx * inside,)

    return custom_op("rgb_to_hsi", out, (img,), vjp)


def _hsi_to_rgb(hsi: np.ndarray):
    hue, sat, inten = hsi
    h = np.mod(hue, 1.0) * _TWO_PI
    sector = np.minimum((h // (_TWO_PI / 3.0)).astype(int), 2)
    hp = h - sector * (_TWO_PI / 3.0)
    ratio = np.cos(hp) / np.cos(np.pi / 3.0 - hp)
    low = inten * (1.0 - sat)
    high = inten * (1.0 + sat * ratio)
    rest = 3.0 * inten - low - high
    # channel order inside each sector: (low, high, rest) land on rolled slots
    out = np.empty((3,) + hue.shape)
    for s in range(3):
        m = sector == s
        # sector 0: B low, R high, G rest; rotated by one channel per sector
        out[(2 + s) % 3][m] = low[m]
        out[s][m] = high[m]
        out[(1 + s) % 3][m] = rest[m]
    cache = dict(sector=sector, hp=hp, ratio=ratio, sat=sat, inten=inten)
    return out, cache


def hsi_to_rgb(img: Tensor) -> Tensor:
    """HSI -> RGB via the three-sector inverse. Sector choice is constant for backward."""
    _check_image(img, "hsi_to_rgb")
    out, k = _hsi_to_rgb(img.data)

    def vjp(grad):
        sector, hp, ratio = k["sector"], k["hp"], k["ratio"]
        sat, inten = k["sat"], k["inten"]
        g_low = np.empty_like(sat)
        g_high = np.empty_like(sat)
        g_rest = np.empty_like(sat)
        for s in range(3):
            m = sector == s
            g_low[m] = grad[(2 + s) % 3][m]
            g_high[m] = grad[s][m]
            g_rest[m] = grad[(1 + s) % 3][m]
        # rest = 3I - low - high
        g_low_t = g_low - g_rest
        g_high_t = g_high - g_rest
        cos_a, cos_b = np.cos(hp), np.cos(np.pi / 3.0 - hp)
        # d ratio / d hp = (-sin(hp) cos_b - cos(hp) sin(pi/3 - hp)) / cos_b^2
        d_ratio = -(np.sin(hp) * cos_b + cos_a * np.sin(np.pi / 3.0 - hp)) / (cos_b * cos_b)
        g_hue = g_high_t * inten * sat * d_ratio * _TWO_PI
        g_sat = -g_low_t * inten + g_high_t * inten * ratio
        g_int = g_low_t * (1.0 - sat) + g_high_t * (1.0 + sat * ratio) + 3.0 * g_rest
        return (np.stack([g_hue, g_sat, g_int]),)

    return custom_op("hsi_to_rgb", out, (img,), vjp)


# --- Lab -------------------------------------------------------------------

def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _d_srgb_to_linear(c):
    return np.where(c <= 0.04045, 1.0 / 12.92, 2.4 / 1.055 * ((c + 0.055) / 1.055) ** 1.4)


def _linear_to_srgb(c):
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.maximum(c, 0.0031308) ** (1 / 2.4) - 0.055)


def _d_linear_to_srgb(c):
    return np.where(c <= 0.0031308, 12.92,
                    1.055 / 2.4 * np.maximum(c, 0.0031308) ** (1 / 2.4 - 1.0))


def _f(t):
    return np.where(t > _DELTA ** 3, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _df(t):
    safe = np.maximum(t, _DELTA ** 3)
    return np.where(t > _DELTA ** 3, 1.0 / (3.0 * np.cbrt(safe) ** 2), 1.0 / (3 * _DELTA ** 2))


def _finv(f):
    return np.where(f > _DELTA, f ** 3, 3 * _DELTA ** 2 * (f - 4.0 / 29.0))


def _dfinv(f):
    return np.where(f > _DELTA, 3.0 * f * f, 3 * _DELTA ** 2)


_LAB_FROM_F = np.array([[0.0, 116.0, 0.0], [500.0, -500.0, 0.0], [0.0, 200.0, -200.0]])
_F_FROM_LAB = np.linalg.inv(_LAB_FROM_F)


def rgb_to_lab_array(rgb: np.ndarray) -> np.ndarray:
    """sRGB (3, ...) in [0, 1] -> unnormalized CIE Lab (3, ...)."""
    lin = _srgb_to_linear(np.asarray(rgb, dtype=float))
    xyz = np.tensordot(SRGB_TO_XYZ / WHITE_D65[:, None], lin, axes=1)
    lab = np.tensordot(_LAB_FROM_F, _f(xyz), axes=1)
    lab[0] -= 16.0
    return lab


def lab_to_rgb_array(lab: np.ndarray, clip: bool = True) -> np.ndarray:
    lab = np.array(lab, dtype=float)
    lab[0] += 16.0
    fxyz = np.tensordot(_F_FROM_LAB, lab, axes=1)
    lin = np.tensordot(XYZ_TO_SRGB * WHITE_D65[None, :], _finv(fxyz), axes=1)
    rgb = _linear_to_srgb(lin)
    return np.clip(rgb, 0.0, 1.0) if clip else rgb


def rgb_to_lab(img: Tensor) -> Tensor:
    """sRGB -> normalized Lab (L/100, a/110, b/110). Input is clipped to [0, 1]."""
    _check_image(img, "rgb_to_lab")
    x = np.clip(img.data, 0.0, 1.0)
    inside = (img.data >= 0.0) & (img.data <= 1.0)
    lin = _srgb_to_linear(x)
    m = SRGB_TO_XYZ / WHITE_D65[:, None]
    xyz = np.tensordot(m, lin, axes=1)
    lab = np.tensordot(_LAB_FROM_F, _f(xyz), axes=1)
    lab[0] -= 16.0
    out = lab / LAB_SCALE[:, None, None]

    def vjp(grad):
        g = np.tensordot((_LAB_FROM_F / LAB_SCALE[:, None]).T, grad, axes=1)
        g = np.tensordot(m.T, g * _df(xyz), axes=1)
        return (g * _d_srgb_to_linear(x) * inside,)

    return custom_op("rgb_to_lab", out, (img,), vjp)


def lab_to_rgb(img: Tensor) -> Tensor:
    """Normalized Lab -> sRGB, clipped to [0, 1] (zero gradient outside the gamut)."""
    _check_image(img, "lab_to_rgb")
    lab = img.data * LAB_SCALE[:, None, None]
    lab[0] += 16.0
    fxyz = np.tensordot(_F_FROM_LAB, lab, axes=1)
    m = XYZ_TO_SRGB * WHITE_D65[None, :]
    lin = np.tensordot(m, _finv(fxyz), axes=1)
    rgb = _linear_to_srgb(lin)
    out = np.clip(rgb, 0.0, 1.0)
    inside = (rgb >= 0.0) & (rgb <= 1.0)

    def vjp(grad):
        g = grad * inside * _d_linear_to_srgb(lin)
        g = np.tensordot(m.T, g, axes=1) * _dfinv(fxyz)
        g = np.tensordot(_F_FROM_LAB.T, g, axes=1)
        return (g * LAB_SCALE[:, None, None],)

    return custom_op("lab_to_rgb", out, (img,), vjp)


def rgb_to_hsi_array(rgb: np.ndarray) -> np.ndarray:
    return _rgb_to_hsi(np.clip(np.asarray(rgb, dtype=float), 0.0, 1.0))[0]


def hsi_to_rgb_array(hsi: np.ndarray) -> np.ndarray:
    return _hsi_to_rgb(np.asarray(hsi, dtype=float))[0]
