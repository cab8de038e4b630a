"""Classical reference implementations, written independently of the package.

Arrays are (3, H, W) floats in [0, 1]. HSI uses the textbook arccos hue and
the per-pixel sector inverse; Lab follows the CIE piecewise definitions.
"""
import math

import numpy as np


def gray_world(img):
    return img * (0.5 / img.mean(axis=(1, 2), keepdims=True))


def white_patch(img):
    return img / img.max(axis=(1, 2), keepdims=True)


def global_stretch(img):
    lo = img.min(axis=(1, 2), keepdims=True)
    hi = img.max(axis=(1, 2), keepdims=True)
    return (img - lo) / (hi - lo)


def hsi_pixel(r, g, b):
    total = r + g + b
    i = total / 3
    s = 0.0 if total == 0 else 1 - 3 * min(r, g, b) / total
    den = math.sqrt((r - g) ** 2 + (r - b) * (g - b))
    if den == 0:
        return 0.0, s, i
    theta = math.acos(max(-1.0, min(1.0, 0.5 * ((r - g) + (r - b)) / den)))
    h = theta if b <= g else 2 * math.pi - theta
    return h / (2 * math.pi), s, i


def rgb_pixel_from_hsi(h, s, i):
    h = (h % 1.0) * 2 * math.pi
    third = 2 * math.pi / 3

    def hi(hh):
        return i * (1 + s * math.cos(hh) / math.cos(math.pi / 3 - hh))

    if h < third:
        b = i * (1 - s)
        r = hi(h)
        g = 3 * i - r - b
    elif h < 2 * third:
        r = i * (1 - s)
        g = hi(h - third)
        b = 3 * i - r - g
    else:
        g = i * (1 - s)
        b = hi(h - 2 * third)
        r = 3 * i - g - b
    return r, g, b


def rgb_to_hsi(img):
    out = np.empty_like(img)
    for y, x in np.ndindex(img.shape[1:]):
        out[:, y, x] = hsi_pixel(*img[:, y, x])
    return out


def hsi_to_rgb(img):
    out = np.empty_like(img)
    for y, x in np.ndindex(img.shape[1:]):
        out[:, y, x] = rgb_pixel_from_hsi(*img[:, y, x])
    return out


_M = np.array([[0.4124564, 0.3575761, 0.1804375],
               [0.2126729, 0.7151522, 0.0721750],
               [0.0193339, 0.1191920, 0.9503041]])
_WHITE = _M @ np.ones(3)


def _lab_f(t):
    d = 6 / 29
    return np.where(t > d ** 3, np.cbrt(t), t / (3 * d * d) + 4 / 29)


def _lab_finv(f):
    d = 6 / 29
    return np.where(f > d, f ** 3, 3 * d * d * (f - 4 / 29))


def rgb_to_lab(img):
    """Unnormalized Lab."""
    lin = np.where(img <= 0.04045, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)
    xyz = np.einsum("ij,jhw->ihw", _M, lin) / _WHITE[:, None, None]
    fx, fy, fz = _lab_f(xyz)
    return np.stack([116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)])


def lab_to_rgb(lab):
    L, a, b = lab
    fy = (L + 16) / 116
    xyz = _lab_finv(np.stack([fy + a / 500, fy, fy - b / 200])) * _WHITE[:, None, None]
    lin = np.einsum("ij,jhw->ihw", np.linalg.inv(_M), xyz)
    rgb = np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * np.abs(lin) ** (1 / 2.4) - 0.055)
    return np.clip(rgb, 0, 1)


def classical_pipeline(img):
    """Average of gray world and white patch, then the average of RGB, HSI and Lab stretches."""
    balanced = np.clip(0.5 * gray_world(img) + 0.5 * white_patch(img), 0, 1)
    rgb = global_stretch(balanced)
    hsi = rgb_to_hsi(balanced)
    hsi[1:] = global_stretch(hsi[1:])
    hsi_rgb = np.clip(hsi_to_rgb(hsi), 0, 1)
    lab = rgb_to_lab(balanced) / np.array([100, 110, 110])[:, None, None]
    lab_rgb = lab_to_rgb(global_stretch(lab) * np.array([100, 110, 110])[:, None, None])
    return (rgb + hsi_rgb + lab_rgb) / 3


def brute_force_ssim(x, y, size=11, sigma=1.5):
    """Window-by-window SSIM on 2-D float arrays (0-255 dynamic range)."""
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    win = np.outer(g, g)
    win /= win.sum()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            a = x[i:i + size, j:j + size]
            b = y[i:i + size, j:j + size]
            ma, mb = (win * a).sum(), (win * b).sum()
            va = (win * (a - ma) ** 2).sum()
            vb = (win * (b - mb) ** 2).sum()
            cov = (win * (a - ma) * (b - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def global_ssim(p, t, c1=1e-4, c2=9e-4):
    """Whole-image SSIM per channel, averaged (for the training loss)."""
    vals = []
    for a, b in zip(p, t):
        ma, mb = a.mean(), b.mean()
        va, vb = ((a - ma) ** 2).mean(), ((b - mb) ** 2).mean()
        cov = ((a - ma) * (b - mb)).mean()
        vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))
