"""Central finite-difference checks for autodiff graphs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward, mul, sum_all


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b| / max(|a|, |b|)`` in the 2-norm; 0 when both vanish."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale < 1e-300 else float(np.linalg.norm(a - b) / scale)


def check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], seed: int = 0,
          step: float = 1e-4) -> float:
    """Worst relative error between analytic and numerical gradients of ``fn``.

    The output is reduced with a fixed random projection so every output
    element contributes. Each input is checked separately.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    probe = fn(*[Tensor(x) for x in inputs])
    proj = np.random.default_rng(seed).normal(size=probe.shape)

    def scalar(xs):
        return float((fn(*[Tensor(x) for x in xs]).data * proj).sum())

    tape = Tape()
    leaves = [tape.variable(x) for x in inputs]
    grads = backward(sum_all(mul(fn(*leaves), proj)))
    worst = 0.0
    for k, x in enumerate(inputs):
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xs = [a.copy() for a in inputs]
            xs[k][idx] += step
            up = scalar(xs)
            xs[k][idx] -= 2 * step
            numeric[idx] = (up - scalar(xs)) / (2 * step)
        worst = max(worst, relative_error(grads.of(leaves[k]), numeric))
    return worst


@dataclass
class DirectionalCheck:
    error: float
    kink: float

    @property
    def smooth(self) -> bool:
        return self.kink < KINK_TOL


# one-sided slopes of a smooth function agree to about step * curvature
KINK_TOL = 1e-3


def check_direction(loss_fn: Callable[[dict], Tensor], params: dict[str, np.ndarray],
                    grads: dict[str, np.ndarray], seed: int = 0, step: float = 1e-7) -> DirectionalCheck:
    """Compare ``<grad, d>`` with a central difference along a random direction ``d``.

    ``kink`` is the relative gap between the forward and backward one-sided
    slopes. A large gap means the probe crossed a clamp or a max/min switch,
    where no derivative exists, and the case says nothing about the gradient.
    """
    rng = np.random.default_rng(seed)
    direction = {k: rng.normal(size=v.shape) for k, v in params.items()}

    def at(t):
        return float(loss_fn({k: v + t * direction[k] for k, v in params.items()}).data.item())

    f0, up, down = at(0.0), at(step), at(-step)
    fwd, bwd = (up - f0) / step, (f0 - down) / step
    analytic = sum(float((grads[k] * direction[k]).sum()) for k in params)
    return DirectionalCheck(relative_error(np.array([analytic]), np.array([(up - down) / (2 * step)])),
                            relative_error(np.array([fwd]), np.array([bwd])))
