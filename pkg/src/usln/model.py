"""The 894-parameter enhancement network.

Two stages run back to back:

* white balance: a gray-world branch (pointwise conv scaled by the inverse
  channel means) and a white-patch branch (scaled by the inverse channel
  maxima), each with a residual block, merged by two 3x3 convs;
* stretch: global min/max stretching in RGB, in HSI (saturation and
  intensity only, hue is carried through) and in Lab, each followed by a
  pointwise conv and a residual block, converted back to RGB and merged by
  three 3x3 convs.

Weights live in a :class:`WeightSet` (float32, named). ``bind`` turns them
into tape leaves when gradients are needed.
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    clamp,
    concat_channels,
    conv3x3,
    global_stat,
    minmax_stretch,
    pointwise_conv,
    reciprocal,
    take_channels,
    tanh_act,
)
from .colorspace import hsi_to_rgb, lab_to_rgb, rgb_to_hsi, rgb_to_lab

EPS = 1e-6

GROUP_SIZES = {"dsbm": 192, "mcsm": 282, "rem": 420}
TOTAL_PARAMS = 894

REM_NAMES = ("dsbm_gw", "dsbm_wp", "mcsm_rgb", "mcsm_hsi", "mcsm_lab")


def _layout() -> "OrderedDict[str, tuple[int, ...]]":
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()

    def pw(name, c):
        shapes[f"{name}.weight"] = (c, c)
        shapes[f"{name}.bias"] = (c,)

    def k3(name):
        shapes[f"{name}.weight"] = (3, 3, 3, 3)
        shapes[f"{name}.bias"] = (3,)

    pw("dsbm.gw.pw", 3)
    pw("dsbm.wp.pw", 3)
    k3("dsbm.gw.merge3x3")
    k3("dsbm.wp.merge3x3")
    pw("mcsm.rgb.pw", 3)
    pw("mcsm.si.pw", 2)
    pw("mcsm.lab.pw", 3)
    for space in ("rgb", "hsi", "lab"):
        k3(f"mcsm.{space}.merge3x3")
    for name in REM_NAMES:
        k3(f"rem.{name}.conv3x3")
    return shapes


LAYOUT = _layout()


class WeightSet:
    """Named float32 parameters of the network, in a fixed order."""

    def __init__(self, params: Mapping[str, np.ndarray]):
        missing = set(LAYOUT) - set(params)
        extra = set(params) - set(LAYOUT)
        if missing or extra:
            raise ValueError(f"weight names do not match layout (missing={sorted(missing)}, "
                             f"unexpected={sorted(extra)})")
        self.params: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, shape in LAYOUT.items():
            arr = np.array(params[name], dtype=np.float32)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite values")
            self.params[name] = arr
        counts = self.group_counts()
        assert counts == GROUP_SIZES and self.total == TOTAL_PARAMS, counts

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def group_counts(self) -> dict[str, int]:
        counts = {g: 0 for g in GROUP_SIZES}
        for name, arr in self.params.items():
            counts[name.split(".", 1)[0]] += arr.size
        return counts

    @property
    def total(self) -> int:
        return sum(a.size for a in self.params.values())

    def copy(self) -> WeightSet:
        return WeightSet({k: v.copy() for k, v in self.params.items()})

    def replace(self, **updates: np.ndarray) -> WeightSet:
        """Copy with some parameters swapped; keys use ``__`` for dots."""
        params = {k: v.copy() for k, v in self.params.items()}
        for key, value in updates.items():
            params[key.replace("__", ".")] = value
        return WeightSet(params)

    def __eq__(self, other):
        if not isinstance(other, WeightSet):
            return NotImplemented
        return all(np.array_equal(self.params[k], other.params[k]) for k in LAYOUT)


def _identity_kernel(scale: float) -> np.ndarray:
    k = np.zeros((3, 3, 3, 3))
    for c in range(3):
        k[c, c, 1, 1] = scale
    return k


def init_weights(seed: int = 0, jitter: float = 0.0) -> WeightSet:
    """Start from the classical pipeline.

    Gray-world pointwise conv = 0.5 I (so the branch is exactly classical
    gray world), other pointwise convs = I, merge kernels = centered delta
    divided by the number of merged branches, residual convs = 0, all biases
    0. ``jitter`` adds seeded N(0, jitter^2) noise to every parameter.
    """
    params: dict[str, np.ndarray] = {}
    for name, shape in LAYOUT.items():
        params[name] = np.zeros(shape)
    params["dsbm.gw.pw.weight"] = 0.5 * np.eye(3)
    params["dsbm.wp.pw.weight"] = np.eye(3)
    params["mcsm.rgb.pw.weight"] = np.eye(3)
    params["mcsm.si.pw.weight"] = np.eye(2)
    params["mcsm.lab.pw.weight"] = np.eye(3)
    for branch in ("gw", "wp"):
        params[f"dsbm.{branch}.merge3x3.weight"] = _identity_kernel(0.5)
    for space in ("rgb", "hsi", "lab"):
        params[f"mcsm.{space}.merge3x3.weight"] = _identity_kernel(1.0 / 3.0)
    if jitter > 0:
        rng = np.random.default_rng(seed)
        for name, shape in LAYOUT.items():
            params[name] = params[name] + rng.normal(0.0, jitter, size=shape)
    return WeightSet(params)


Params = Mapping[str, "Tensor | np.ndarray"]


def bind(weights: WeightSet, tape: Tape) -> dict[str, Tensor]:
    """Register every parameter as a trainable leaf on ``tape``."""
    return {name: tape.variable(arr.astype(np.float64), name=name) for name, arr in weights.items()}


def _as_params(weights: WeightSet | Params) -> Params:
    if isinstance(weights, WeightSet):
        return {k: v.astype(np.float64) for k, v in weights.items()}
    return weights


def _wb(p: Params, name: str):
    return p[f"{name}.weight"], p[f"{name}.bias"]


@dataclass
class ModuleTrace:
    """Intermediate images (each (3, H, W)) keyed by stage name."""

    stages: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, t: Tensor):
        self.stages[name] = t.data.copy()


def rem_forward(z: Tensor, p: Params, name: str) -> Tensor:
    """Residual block: tanh(conv3x3(z)), bounded in (-1, 1)."""
    return tanh_act(conv3x3(z, *_wb(p, f"rem.{name}.conv3x3")))


def dsbm_forward(x: Tensor, weights: WeightSet | Params, trace: ModuleTrace | None = None) -> Tensor:
    p = _as_params(weights)
    inv_avg = reciprocal(global_stat(x, "average").values, EPS)
    inv_max = reciprocal(global_stat(x, "maximum").values, EPS)
    gw = pointwise_conv(x, *_wb(p, "dsbm.gw.pw")) * inv_avg
    wp = pointwise_conv(x, *_wb(p, "dsbm.wp.pw")) * inv_max
    gw = gw + rem_forward(x, p, "dsbm_gw")
    wp = wp + rem_forward(x, p, "dsbm_wp")
    out = conv3x3(gw, *_wb(p, "dsbm.gw.merge3x3")) + conv3x3(wp, *_wb(p, "dsbm.wp.merge3x3"))
    if trace is not None:
        trace.add("dsbm_gw", gw)
        trace.add("dsbm_wp", wp)
        trace.add("dsbm_out", out)
    return out


_HUE_MASK = np.array([0.0, 1.0, 1.0])[:, None, None]


def mcsm_forward(x: Tensor, weights: WeightSet | Params, trace: ModuleTrace | None = None) -> Tensor:
    p = _as_params(weights)
    x = clamp(x, 0.0, 1.0)

    rgb = pointwise_conv(minmax_stretch(x, EPS), *_wb(p, "mcsm.rgb.pw"))
    rgb = rgb + rem_forward(x, p, "mcsm_rgb")

    hsi = rgb_to_hsi(x)
    si = pointwise_conv(minmax_stretch(take_channels(hsi, [1, 2]), EPS), *_wb(p, "mcsm.si.pw"))
    hsi_out = concat_channels([take_channels(hsi, [0]), si])
    hsi_out = hsi_out + rem_forward(hsi, p, "mcsm_hsi") * _HUE_MASK
    hsi_rgb = clamp(hsi_to_rgb(hsi_out), 0.0, 1.0)

    lab = rgb_to_lab(x)
    lab_out = pointwise_conv(minmax_stretch(lab, EPS), *_wb(p, "mcsm.lab.pw"))
    lab_out = lab_out + rem_forward(lab, p, "mcsm_lab")
    lab_rgb = lab_to_rgb(lab_out)

    out = (conv3x3(rgb, *_wb(p, "mcsm.rgb.merge3x3"))
           + conv3x3(hsi_rgb, *_wb(p, "mcsm.hsi.merge3x3"))
           + conv3x3(lab_rgb, *_wb(p, "mcsm.lab.merge3x3")))
    if trace is not None:
        trace.add("mcsm_in", x)
        trace.add("mcsm_hsi_in", hsi)
        trace.add("mcsm_rgb", rgb)
        trace.add("mcsm_hsi", hsi_out)
        trace.add("mcsm_hsi_rgb", hsi_rgb)
        trace.add("mcsm_lab", lab_out)
        trace.add("mcsm_lab_rgb", lab_rgb)
        trace.add("mcsm_out", out)
    return out


def usln_forward(x: Tensor, weights: WeightSet | Params, trace: ModuleTrace | None = None) -> Tensor:
    """Full network. Returns the raw (unclamped) output."""
    if x.data.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {x.shape}")
    return mcsm_forward(dsbm_forward(x, weights, trace), weights, trace)


def enhance(image: np.ndarray, weights: WeightSet, trace: ModuleTrace | None = None) -> np.ndarray:
    """Inference helper: (3, H, W) array in [0, 1] -> clamped output array."""
    out = usln_forward(Tensor(image), weights, trace)
    return np.clip(out.data, 0.0, 1.0)


# --- weight files ------------------------------------------------------------

MAGIC = b"USLN"
FORMAT_VERSION = 1


class WeightFileError(Exception):
    """Base class for weight-file load failures."""


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ParameterCountError(WeightFileError):
    pass


class LayoutMismatchError(WeightFileError):
    pass


def encode_weights(w: WeightSet) -> bytes:
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(w.params))]
    for name, arr in w.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.astype("<f4").tobytes())
    return b"".join(out)


def save_weights(w: WeightSet, path: str | Path):
    Path(path).write_bytes(encode_weights(w))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"file ends at byte {len(self.buf)}, needed {self.pos + n}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode_weights(buf: bytes) -> WeightSet:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise BadMagicError("bad magic: not a USLN weight file")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}")
    count = r.u32()
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        n = int(np.prod(dims, dtype=np.int64))
        params[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise WeightFileError(f"{len(buf) - r.pos} trailing bytes after last tensor")
    total = sum(a.size for a in params.values())
    if total != TOTAL_PARAMS:
        raise ParameterCountError(f"parameter-count mismatch: file holds {total}, expected {TOTAL_PARAMS}")
    try:
        return WeightSet(params)
    except ValueError as exc:
        raise LayoutMismatchError(str(exc)) from exc


def load_weights(path: str | Path) -> WeightSet:
    return decode_weights(Path(path).read_bytes())
