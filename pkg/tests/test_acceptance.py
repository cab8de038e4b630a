"""Acceptance criteria, one test per criterion.

Each criterion is a function returning an ``Outcome`` whose ``report`` holds
only deterministic values (no timings), so criterion 9 can compare two runs
for equality. ``RESULTS`` collects one PASS/FAIL line per criterion; the
conftest prints them after the run.
"""
import hashlib
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import oracles
import pytest
from cases import chromatic_pixels, gray_world_only, rgb_stretch_only, separated, white_patch_only

from usln import gradcheck
from usln.autodiff import (
    Tape,
    Tensor,
    abs_,
    add,
    backward,
    channel_mean,
    clamp,
    concat_channels,
    conv3x3,
    div,
    elementwise,
    global_stat,
    mean_all,
    minmax_stretch,
    mul,
    pointwise_conv,
    reciprocal,
    sub,
    sum_all,
    take_channels,
    tanh_act,
)
from usln.benchmark import OverfitConfig, run_overfit
from usln.colorspace import (
    hsi_to_rgb,
    hsi_to_rgb_array,
    lab_to_rgb,
    lab_to_rgb_array,
    rgb_to_hsi,
    rgb_to_hsi_array,
    rgb_to_lab,
    rgb_to_lab_array,
)
from usln.losses import combined_loss, mae_loss, ssim_loss
from usln.metrics import ciede2000, ssim_metric
from usln.model import (
    GROUP_SIZES,
    bind,
    dsbm_forward,
    encode_weights,
    init_weights,
    mcsm_forward,
    rem_forward,
    usln_forward,
)

DATA = Path(__file__).parent / "data"
RESULTS: dict[str, str] = {}


@dataclass
class Outcome:
    passed: bool
    detail: str
    report: dict = field(default_factory=dict)
    seconds: float = 0.0


def record(num: int, name: str, passed: bool, detail: str):
    RESULTS[f"{num} {name}"] = f"{'PASS' if passed else 'FAIL'}  criterion {num} ({name}): {detail}"


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    out.seconds = time.perf_counter() - t0
    return out


# --- 1 ---------------------------------------------------------------------------

def criterion_1() -> Outcome:
    w = init_weights()
    counts = {**w.group_counts(), "total": w.total}
    want = {**GROUP_SIZES, "total": 894}
    return Outcome(counts == want == {"dsbm": 192, "mcsm": 282, "rem": 420, "total": 894},
                   " ".join(f"{k}={v}" for k, v in counts.items()), counts)


# --- 2 ---------------------------------------------------------------------------

def criterion_2(seed: int = 0) -> Outcome:
    rng = np.random.default_rng(seed)
    gw, wp, st = gray_world_only(), white_patch_only(), rgb_stretch_only()
    worst = {"gray_world": 0.0, "white_patch": 0.0, "global_stretch": 0.0}
    for _ in range(20):
        x = rng.uniform(size=(3, 32, 32))
        worst["gray_world"] = max(worst["gray_world"],
                                  float(np.abs(dsbm_forward(Tensor(x), gw).data - oracles.gray_world(x)).max()))
        worst["white_patch"] = max(worst["white_patch"],
                                   float(np.abs(dsbm_forward(Tensor(x), wp).data - oracles.white_patch(x)).max()))
        worst["global_stretch"] = max(worst["global_stretch"],
                                      float(np.abs(mcsm_forward(Tensor(x), st).data
                                                   - oracles.global_stretch(x)).max()))
    ok = all(v < 1e-5 for v in worst.values())
    return Outcome(ok, "max |diff| " + " ".join(f"{k}={v:.2e}" for k, v in worst.items()) + " (limit 1e-5)",
                   worst)


# --- 3 ---------------------------------------------------------------------------

def _away(rng, shape, points, lo, hi, gap=0.02):
    """Uniform values pushed at least ``gap`` away from each kink point."""
    x = rng.uniform(lo, hi, shape)
    for p in points:
        near = np.abs(x - p) < gap
        x[near] += np.where(x[near] >= p, 2 * gap, -2 * gap)
    return x


def _img(rng, hw=(4, 5)):
    return rng.uniform(0.05, 0.95, (3, *hw))


def _rem(z, k, b):
    return rem_forward(z, {"rem.x.conv3x3.weight": k, "rem.x.conv3x3.bias": b}, "x")


OPS = {
    "add": (add, lambda r: [_img(r), r.normal(size=(3, 1, 1))]),
    "sub": (sub, lambda r: [_img(r), _img(r)]),
    "mul": (mul, lambda r: [_img(r), r.normal(size=(3, 1, 1))]),
    "div": (div, lambda r: [_img(r), r.uniform(0.5, 1.5, (3, 4, 5))]),
    "elementwise": (lambda a, b: elementwise(a, b, "mul"), lambda r: [_img(r), _img(r)]),
    "reciprocal": (lambda a: reciprocal(a, 1e-6), lambda r: [r.uniform(0.3, 1.0, (3, 1, 1))]),
    "tanh": (tanh_act, lambda r: [r.normal(size=(3, 4, 5))]),
    "abs": (abs_, lambda r: [_away(r, (3, 4, 5), [0.0], -1, 1)]),
    "clamp": (lambda a: clamp(a, 0.0, 1.0), lambda r: [_away(r, (3, 4, 5), [0.0, 1.0], -0.5, 1.5)]),
    "sum_all": (sum_all, lambda r: [_img(r)]),
    "mean_all": (mean_all, lambda r: [_img(r)]),
    "channel_mean": (channel_mean, lambda r: [_img(r)]),
    "take_channels": (lambda a: take_channels(a, [2, 0]), lambda r: [_img(r)]),
    "concat_channels": (lambda a, b: concat_channels([a, b]), lambda r: [_img(r), _img(r)[:1]]),
    "pointwise_conv": (pointwise_conv, lambda r: [_img(r), r.normal(size=(3, 3)), r.normal(size=3)]),
    "conv3x3": (conv3x3, lambda r: [_img(r), r.normal(size=(3, 3, 3, 3)), r.normal(size=3)]),
    "stat_average": (lambda a: global_stat(a, "average").values, lambda r: [_img(r)]),
    "stat_maximum": (lambda a: global_stat(a, "maximum").values, lambda r: [separated(r, (3, 4, 5))]),
    "stat_minimum": (lambda a: global_stat(a, "minimum").values, lambda r: [separated(r, (3, 4, 5))]),
    "minmax_stretch": (minmax_stretch, lambda r: [separated(r, (3, 4, 5))]),
    "rgb_to_hsi": (rgb_to_hsi, lambda r: [chromatic_pixels(r, 12).reshape(3, 3, 4)]),
    "hsi_to_rgb": (hsi_to_rgb, lambda r: [rgb_to_hsi_array(chromatic_pixels(r, 12).reshape(3, 3, 4))]),
    "rgb_to_lab": (rgb_to_lab, lambda r: [_img(r)]),
    "lab_to_rgb": (lab_to_rgb, lambda r: [rgb_to_lab_array(r.uniform(0.1, 0.9, (3, 4, 5)))]),
    "rem": (_rem, lambda r: [_img(r), r.normal(0, 0.3, (3, 3, 3, 3)), r.normal(0, 0.3, 3)]),
    "mae_loss": (mae_loss, lambda r: [_img(r), _img(r)]),
    "ssim_loss": (ssim_loss, lambda r: [_img(r), _img(r)]),
}
OP_CASES, NETWORK_CASES = 90, 10


def _network_case(i: int) -> tuple[float, int]:
    """Directional check of the full loss w.r.t. all 894 parameters; returns (error, probes skipped)."""
    rng = np.random.default_rng(10_000 + i)
    w = init_weights(i, 0.02)
    x, y = rng.uniform(0.05, 0.95, (3, 16, 16)), rng.uniform(size=(3, 16, 16))
    params = {k: v.astype(np.float64) for k, v in w.items()}

    def loss(p):
        return combined_loss(usln_forward(Tensor(x), p), Tensor(y)).total

    leaves = bind(w, Tape())
    g = backward(loss(leaves))
    grads = {k: g.of(t) for k, t in leaves.items()}
    for skipped in range(20):
        res = gradcheck.check_direction(loss, params, grads, seed=100 * i + skipped)
        if res.smooth:
            return res.error, skipped
    raise AssertionError(f"network case {i}: no smooth probe direction found")


def criterion_3(seed: int = 0) -> Outcome:
    per_op: dict[str, float] = {}
    names = list(OPS)
    for i in range(OP_CASES):
        name = names[i % len(names)]
        fn, gen = OPS[name]
        err = gradcheck.check(fn, gen(np.random.default_rng([seed, i])), seed=i, step=1e-4)
        per_op[name] = max(per_op.get(name, 0.0), err)
    net = [_network_case(seed * NETWORK_CASES + i) for i in range(NETWORK_CASES)]
    worst_op = max(per_op, key=per_op.get)
    worst_net = max(e for e, _ in net)
    skipped = sum(s for _, s in net)
    ok = per_op[worst_op] < 1e-4 and worst_net < 1e-3
    detail = (f"{OP_CASES} op cases over {len(OPS)} ops, worst {worst_op}={per_op[worst_op]:.1e} (limit 1e-4); "
              f"{NETWORK_CASES} end-to-end cases worst {worst_net:.1e} (limit 1e-3), "
              f"{skipped} probes across a kink excluded")
    return Outcome(ok, detail, {"per_op": per_op, "network": net})


# --- 4 ---------------------------------------------------------------------------

HSI_ANCHORS = {  # rgb -> (h, s, i)
    (1.0, 0.0, 0.0): (0.0, 1.0, 1 / 3),
    (0.0, 1.0, 0.0): (1 / 3, 1.0, 1 / 3),
    (0.0, 0.0, 1.0): (2 / 3, 1.0, 1 / 3),
    (0.5, 0.5, 0.5): (0.0, 0.0, 0.5),
    (0.0, 0.0, 0.0): (0.0, 0.0, 0.0),
    (1.0, 1.0, 1.0): (0.0, 0.0, 1.0),
}
LAB_ANCHORS = {  # rgb -> unnormalized (L, a, b)
    (1.0, 1.0, 1.0): (100.0, 0.0, 0.0),
    (0.0, 0.0, 0.0): (0.0, 0.0, 0.0),
}


def criterion_4(seed: int = 0) -> Outcome:
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(3, 1000, 1))
    hsi_rt = float(np.abs(hsi_to_rgb_array(rgb_to_hsi_array(x)) - x).max())
    lab_rt = float(np.abs(lab_to_rgb_array(rgb_to_lab_array(x)) - x).max())
    tensor_rt = float(max(np.abs(hsi_to_rgb(rgb_to_hsi(Tensor(x))).data - x).max(),
                          np.abs(lab_to_rgb(rgb_to_lab(Tensor(x))).data - x).max()))
    anchor = 0.0
    for rgb, hsi in HSI_ANCHORS.items():
        px = np.array(rgb).reshape(3, 1, 1)
        anchor = max(anchor, float(np.abs(rgb_to_hsi_array(px).ravel() - hsi).max()),
                     float(np.abs(hsi_to_rgb_array(np.array(hsi).reshape(3, 1, 1)).ravel() - rgb).max()))
    for rgb, lab in LAB_ANCHORS.items():
        got = rgb_to_lab_array(np.array(rgb).reshape(3, 1, 1)).ravel()
        anchor = max(anchor, float(np.abs(got - lab).max()))
    ok = max(hsi_rt, lab_rt, tensor_rt) < 1e-4 and anchor < 1e-9
    detail = (f"1000 pixels: HSI round trip {hsi_rt:.1e}, Lab round trip {lab_rt:.1e}, "
              f"taped {tensor_rt:.1e} (limit 1e-4); {len(HSI_ANCHORS) + len(LAB_ANCHORS)} anchors max {anchor:.1e}")
    return Outcome(ok, detail, {"hsi": hsi_rt, "lab": lab_rt, "tensor": tensor_rt, "anchor": anchor})


# --- 5 ---------------------------------------------------------------------------

def criterion_5() -> Outcome:
    rows = np.loadtxt(DATA / "ciede2000_pairs.csv", delimiter=",", skiprows=1)
    got = ciede2000(rows[:, 1:4], rows[:, 4:7])
    err = np.abs(got - rows[:, 7])
    return Outcome(len(rows) == 34 and bool(err.max() < 1e-4),
                   f"{len(rows)} pairs, max |dE00 - reference| = {err.max():.1e} (limit 1e-4)",
                   {"values": got.tolist()})


# --- 6 ---------------------------------------------------------------------------

def criterion_6(seed: int = 0) -> Outcome:
    rng = np.random.default_rng(seed)
    worst = 0.0
    values = []
    for _ in range(20):
        a = rng.integers(0, 256, (32, 32, 3)).astype(np.uint8)
        b = np.clip(a + rng.normal(0, rng.uniform(5, 60), a.shape), 0, 255).astype(np.uint8)
        got = ssim_metric(a, b)
        ref = oracles.brute_force_ssim(a @ [0.299, 0.587, 0.114], b @ [0.299, 0.587, 0.114])
        worst = max(worst, abs(got - ref))
        values.append(got)
    return Outcome(worst < 1e-6, f"20 images, max |ssim - brute force| = {worst:.1e} (limit 1e-6)",
                   {"values": values})


# --- 7 ---------------------------------------------------------------------------

def criterion_7(seed: int = 0) -> Outcome:
    cfg = OverfitConfig(data_seed=seed)
    cfg.train.seed = seed
    res = run_overfit(cfg)
    finite = all(np.all(np.isfinite(v)) for _, v in res.weights.items())
    ok = res.mean_psnr >= 30 and res.loss_ratio < 0.1 and finite
    detail = (f"8 pairs, 300 epochs: train PSNR {res.mean_psnr:.2f} dB (min {min(res.psnr):.2f}, need >= 30), "
              f"loss epoch 300 / epoch 1 = {res.loss_ratio:.4f} (need < 0.1)")
    report = {"psnr": res.psnr, "losses": [h.total for h in res.history],
              "weights_sha256": hashlib.sha256(encode_weights(res.weights)).hexdigest()}
    return Outcome(ok, detail, report)


# --- runners ---------------------------------------------------------------------

CRITERIA = {2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6, 7: criterion_7}
SECONDS = {2: 10, 3: 120, 4: 5, 5: 1, 6: 10, 7: 300}
NAMES = {1: "parameter accounting", 2: "classical equivalence", 3: "gradient suite", 4: "colorspace suite",
         5: "CIEDE2000", 6: "SSIM metric", 7: "overfit benchmark", 8: "UIEB benchmark", 9: "determinism"}
_RUNS: dict[tuple[int, int], Outcome] = {}


def run(num: int, attempt: int = 0) -> Outcome:
    if (num, attempt) not in _RUNS:
        _RUNS[num, attempt] = timed(CRITERIA[num])
    return _RUNS[num, attempt]


def test_criterion_1():
    out = timed(criterion_1)
    record(1, NAMES[1], out.passed, out.detail)
    assert out.passed, out.detail


@pytest.mark.parametrize("num", [2, 3, 4, 5, 6, pytest.param(7, marks=pytest.mark.slow)])
def test_criterion(num):
    out = run(num)
    in_time = out.seconds < SECONDS[num]
    passed = out.passed and in_time
    record(num, NAMES[num], passed, f"{out.detail}; {out.seconds:.1f} s (limit {SECONDS[num]} s)")
    assert out.passed, out.detail
    assert in_time, f"took {out.seconds:.1f} s, limit {SECONDS[num]} s"


UIEB_ENV = ("USLN_UIEB_TRAIN", "USLN_UIEB_TEST")


@pytest.mark.skipif(not all(os.environ.get(k) for k in UIEB_ENV),
                    reason="set USLN_UIEB_TRAIN and USLN_UIEB_TEST to manifest paths to run")
def test_criterion_8(tmp_path):
    from usln.benchmark import run_uieb
    res = run_uieb(os.environ["USLN_UIEB_TRAIN"], os.environ["USLN_UIEB_TEST"], tmp_path)
    ok = abs(res.psnr - 23.78) <= 1.5 and res.ssim >= 0.88 and res.seconds < 7200
    record(8, NAMES[8], ok, f"Test-90 PSNR {res.psnr:.2f} dB (target 23.78 +/- 1.5), SSIM {res.ssim:.3f} "
                            f"(need >= 0.88), training {res.seconds / 60:.1f} min (limit 120)")
    assert ok


@pytest.mark.slow
def test_criterion_9():
    mismatched = []
    for num in CRITERIA:
        first, second = run(num, 0), run(num, 1)
        if first.report != second.report:
            mismatched.append(num)
    passed = not mismatched
    detail = ("two runs of criteria 2-7 gave identical reports" if passed
              else f"reports differ for criteria {mismatched}")
    record(9, NAMES[9], passed, detail)
    assert passed, detail


def teardown_module():
    if "8 " + NAMES[8] not in RESULTS:
        RESULTS["8 " + NAMES[8]] = (f"SKIP  criterion 8 ({NAMES[8]}): optional, needs the UIEB data; "
                                    f"set {' and '.join(UIEB_ENV)} to manifest paths")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
