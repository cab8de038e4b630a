"""Input generators and weight maskings shared across test modules."""
import numpy as np

from usln.colorspace import rgb_to_hsi_array
from usln.model import init_weights

ZERO_K = np.zeros((3, 3, 3, 3))


def separated(rng, shape, gap=1e-3):
    """Random values whose per-channel extremes are not within ``gap`` of a runner-up."""
    while True:
        x = rng.uniform(0.05, 0.95, shape)
        flat = np.sort(x.reshape(shape[0], -1), axis=1)
        if np.all(flat[:, -1] - flat[:, -2] > gap) and np.all(flat[:, 1] - flat[:, 0] > gap):
            return x


def chromatic_pixels(rng, n, margin=0.02):
    """Random pixels away from the grey axis and from hue sector boundaries."""
    out = []
    while len(out) < n:
        p = rng.uniform(0.02, 0.98, 3)
        if p.max() - p.min() < 0.05:
            continue
        h = rgb_to_hsi_array(p.reshape(3, 1, 1))[0, 0, 0]
        if min(abs(h - s) for s in (0, 1 / 3, 2 / 3, 1)) < margin:
            continue
        srt = np.sort(p)
        if srt[1] - srt[0] < margin:
            continue
        out.append(p)
    return np.array(out).T.reshape(3, n, 1)


def delta(scale=1.0):
    k = np.zeros((3, 3, 3, 3))
    for c in range(3):
        k[c, c, 1, 1] = scale
    return k


def gray_world_only():
    return init_weights().replace(dsbm__gw__merge3x3__weight=delta(), dsbm__wp__merge3x3__weight=ZERO_K,
                                  dsbm__wp__pw__weight=np.zeros((3, 3)))


def white_patch_only():
    return init_weights().replace(dsbm__wp__merge3x3__weight=delta(), dsbm__gw__merge3x3__weight=ZERO_K,
                                  dsbm__gw__pw__weight=np.zeros((3, 3)))


def rgb_stretch_only():
    return init_weights().replace(mcsm__rgb__merge3x3__weight=delta(), mcsm__hsi__merge3x3__weight=ZERO_K,
                                  mcsm__lab__merge3x3__weight=ZERO_K)
