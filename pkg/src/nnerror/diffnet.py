"""Fixed-shape sin network with an exact time derivative.

The network maps a scalar time ``t`` to a ``D``-vector through two hidden
layers of equal width with ``sin`` activations::

    N(t) = W3 sin(W2 sin(W1 t + b1) + b2) + b3

Because the shape never changes, the forward pass carries a tangent
(``dN/dt``) alongside the primal value and the reverse pass is written out by
hand over that extended graph.  Everything works on a batch of times at once.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
DEFAULT_LR = 3e-3


class TrainingDiverged(RuntimeError):
    """Raised when a loss or intermediate value stops being finite."""

    def __init__(self, message: str, iteration: int | None = None, t: float | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.t = t


@dataclass
class NetworkParams:
    W1: np.ndarray  # (width, 1)
    b1: np.ndarray  # (width,)
    W2: np.ndarray  # (width, width)
    b2: np.ndarray  # (width,)
    W3: np.ndarray  # (D, width)
    b3: np.ndarray  # (D,)

    def __post_init__(self):
        width = self.W1.shape[0]
        if width < 1 or self.W1.shape != (width, 1):
            raise ValueError(f"W1 must be (width, 1), got {self.W1.shape}")
        if self.W2.shape != (width, width) or self.b1.shape != (width,) or self.b2.shape != (width,):
            raise ValueError("hidden layers must share one width")
        if self.W3.ndim != 2 or self.W3.shape[1] != width or self.b3.shape != (self.W3.shape[0],):
            raise ValueError("output layer shape mismatch")

    @property
    def width(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W3.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_NAMES]

    def copy(self) -> "NetworkParams":
        return NetworkParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(*(np.zeros_like(a) for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, flat: np.ndarray) -> "NetworkParams":
        """Build params shaped like ``self`` from a flat vector."""
        out, i = [], 0
        for a in self.arrays():
            out.append(np.array(flat[i:i + a.size], dtype=float).reshape(a.shape))
            i += a.size
        return NetworkParams(*out)

    def to_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d, prefix: str = "") -> "NetworkParams":
        return cls(*(np.array(d[prefix + name], dtype=float) for name in PARAM_NAMES))


@dataclass
class NetEval:
    """Network output and its time derivative; shape ``(D,)`` or ``(n, D)``."""

    value: np.ndarray
    time_derivative: np.ndarray


def _truncated_normal(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 3.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 3.0
    return x * scale


def init_params(seed: int, width: int = 32, out_dim: int = 2) -> NetworkParams:
    """Normal weights truncated at 3 sigma, sigma = 1/sqrt(fan_in); zero biases."""
    if width < 1 or out_dim < 1:
        raise ValueError("width and out_dim must be >= 1")
    rng = np.random.default_rng(seed)
    return NetworkParams(
        W1=_truncated_normal(rng, (width, 1), 1.0),
        b1=np.zeros(width),
        W2=_truncated_normal(rng, (width, width), 1.0 / np.sqrt(width)),
        b2=np.zeros(width),
        W3=_truncated_normal(rng, (out_dim, width), 1.0 / np.sqrt(width)),
        b3=np.zeros(out_dim),
    )


@dataclass
class _Cache:
    t: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    h2: np.ndarray
    # tangent path; None for value-only passes
    c1: np.ndarray | None = None
    dh1: np.ndarray | None = None
    da2: np.ndarray | None = None
    c2: np.ndarray | None = None
    dh2: np.ndarray | None = None


def _forward(params: NetworkParams, t: np.ndarray, with_derivative: bool):
    w1 = params.W1[:, 0]
    a1 = np.multiply.outer(t, w1) + params.b1
    h1 = np.sin(a1)
    a2 = h1 @ params.W2.T + params.b2
    h2 = np.sin(a2)
    value = h2 @ params.W3.T + params.b3
    cache = _Cache(t, a1, h1, a2, h2)
    if not with_derivative:
        return value, None, cache
    c1 = np.cos(a1)
    dh1 = c1 * w1
    da2 = dh1 @ params.W2.T
    c2 = np.cos(a2)
    dh2 = c2 * da2
    deriv = dh2 @ params.W3.T
    cache.c1, cache.dh1, cache.da2, cache.c2, cache.dh2 = c1, dh1, da2, c2, dh2
    return value, deriv, cache


def forward(params: NetworkParams, t) -> NetEval:
    """Evaluate ``N(t)`` and ``dN/dt`` at a scalar time or a 1-D array of times."""
    t_arr = np.asarray(t, dtype=float)
    value, deriv, _ = _forward(params, np.atleast_1d(t_arr), True)
    if t_arr.ndim == 0:
        return NetEval(value[0], deriv[0])
    return NetEval(value, deriv)


def forward_value(params: NetworkParams, t) -> np.ndarray:
    """``N(t)`` only, skipping the tangent path."""
    t_arr = np.asarray(t, dtype=float)
    value, _, _ = _forward(params, np.atleast_1d(t_arr), False)
    return value[0] if t_arr.ndim == 0 else value


def _backward(params: NetworkParams, cache: _Cache, g_value: np.ndarray,
              g_deriv: np.ndarray | None) -> NetworkParams:
    w1 = params.W1[:, 0]
    g_W3 = g_value.T @ cache.h2
    g_b3 = g_value.sum(axis=0)
    g_h2 = g_value @ params.W3
    if g_deriv is None:
        g_a2 = g_h2 * np.cos(cache.a2)
        g_W2 = g_a2.T @ cache.h1
        g_b2 = g_a2.sum(axis=0)
        g_a1 = (g_a2 @ params.W2) * np.cos(cache.a1)
        g_W1 = (g_a1 * cache.t[:, None]).sum(axis=0)
    else:
        g_W3 += g_deriv.T @ cache.dh2
        g_dh2 = g_deriv @ params.W3
        # dh2 = cos(a2) * da2
        g_da2 = g_dh2 * cache.c2
        g_a2 = g_h2 * cache.c2 - g_dh2 * cache.da2 * cache.h2
        g_W2 = g_a2.T @ cache.h1 + g_da2.T @ cache.dh1
        g_b2 = g_a2.sum(axis=0)
        g_h1 = g_a2 @ params.W2
        g_dh1 = g_da2 @ params.W2
        # dh1 = cos(a1) * w1
        g_a1 = g_h1 * cache.c1 - g_dh1 * w1 * cache.h1
        g_W1 = (g_a1 * cache.t[:, None]).sum(axis=0) + (g_dh1 * cache.c1).sum(axis=0)
    g_b1 = g_a1.sum(axis=0)
    return NetworkParams(g_W1[:, None], g_b1, g_W2, g_b2, g_W3, g_b3)


LossFn = Callable[[NetEval], tuple[float, np.ndarray, np.ndarray | None]]


def loss_gradient(params: NetworkParams, t, scalar_loss: LossFn,
                  with_derivative: bool = True) -> tuple[float, NetworkParams]:
    """Reverse-accumulate a scalar loss over a batch of times.

    ``scalar_loss`` receives the batched :class:`NetEval` and returns
    ``(loss, dloss/dvalue, dloss/dtime_derivative)``.  The last entry may be
    ``None`` when the loss ignores the derivative; passing
    ``with_derivative=False`` then skips the tangent pass entirely.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    value, deriv, cache = _forward(params, t, with_derivative)
    if deriv is None:
        deriv = np.full_like(value, np.nan)
    _check_finite(value, t)
    if with_derivative:
        _check_finite(deriv, t)
    loss, g_value, g_deriv = scalar_loss(NetEval(value, deriv))
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss!r}")
    if not with_derivative:
        g_deriv = None
    return float(loss), _backward(params, cache, g_value, g_deriv)


def _check_finite(arr: np.ndarray, t: np.ndarray) -> None:
    ok = np.all(np.isfinite(arr), axis=-1)
    if not ok.all():
        bad = float(t[np.argmin(ok)])
        raise TrainingDiverged(f"non-finite network output at t={bad}", t=bad)


@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    # first and second moments over the flattened parameter vector
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def copy(self) -> "AdamState":
        out = AdamState(**{f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("m", "v")})
        out.m = None if self.m is None else self.m.copy()
        out.v = None if self.v is None else self.v.copy()
        return out


def sgd_step(params: NetworkParams, gradient: NetworkParams, state: AdamState) -> NetworkParams:
    """One Adam update with bias correction.  ``state`` is advanced in place."""
    for p, g in zip(params.arrays(), gradient.arrays()):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
    g = gradient.flatten()
    if state.m is None:
        state.m = np.zeros_like(g)
        state.v = np.zeros_like(g)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    step = (state.lr / c1) * state.m / (np.sqrt(state.v / c2) + state.eps)
    return params.unflatten(params.flatten() - step)
