"""Unsupervised network solver for z' = F(z), z(0) = z0.

The prediction is ``zhat(t) = z0 + (1 - exp(-t)) N(t)`` so the initial
condition holds exactly, and training minimises the mean squared residual
``ell(t) = dzhat/dt - F(zhat(t))`` over a fresh random batch of times each step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffnet import (DEFAULT_LR, AdamState, NetEval, NetworkParams, TrainingDiverged, forward, init_params,
                      loss_gradient, sgd_step)
from .systems import DynamicalSystem, flow, flow_jacobian

DIVERGENCE_LIMIT = 1e6


@dataclass
class SolverState:
    net: NetworkParams
    z0: np.ndarray
    T: float = 10.0
    M: int = 100
    iteration: int = 0
    optimizer: AdamState = field(default_factory=AdamState)

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=float)
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if not np.all(np.isfinite(self.z0)):
            raise ValueError("z0 must be finite")
        if self.z0.shape != (self.net.out_dim,):
            raise ValueError(f"z0 has shape {self.z0.shape}, network outputs {self.net.out_dim}")

    @classmethod
    def create(cls, z0, seed: int, *, T: float = 10.0, M: int = 100, width: int = 32,
               lr: float = DEFAULT_LR) -> "SolverState":
        z0 = np.asarray(z0, dtype=float)
        return cls(init_params(seed, width, z0.size), z0, T, M, optimizer=AdamState(lr=lr))

    def copy(self) -> "SolverState":
        return SolverState(self.net.copy(), self.z0.copy(), self.T, self.M, self.iteration, self.optimizer.copy())


@dataclass
class ResidualSample:
    """Residual and prediction at one time, or stacked along axis 0 for a grid."""

    t: np.ndarray | float
    ell: np.ndarray
    zhat: np.ndarray


def envelope(t):
    """Return ``1 - exp(-t)`` and its derivative ``exp(-t)``."""
    e = np.exp(-np.asarray(t, dtype=float))
    return -np.expm1(-np.asarray(t, dtype=float)), e


def lift(z0: np.ndarray, t, ev: NetEval) -> tuple[np.ndarray, np.ndarray]:
    """Map raw network output to (zhat, dzhat/dt)."""
    phi, dphi = envelope(t)
    phi = np.asarray(phi)[..., None]
    dphi = np.asarray(dphi)[..., None]
    return z0 + phi * ev.value, dphi * ev.value + phi * ev.time_derivative


def predict(s: SolverState, t) -> np.ndarray:
    return lift(s.z0, t, forward(s.net, t))[0]


def predict_with_derivative(s: SolverState, t) -> tuple[np.ndarray, np.ndarray]:
    return lift(s.z0, t, forward(s.net, t))


def residual(s: SolverState, sys: DynamicalSystem, t) -> ResidualSample:
    zhat, dzhat = predict_with_derivative(s, t)
    return ResidualSample(t, dzhat - flow(sys, zhat), zhat)


def sample_times(M: int, T: float, rng: np.random.Generator) -> np.ndarray:
    """0, T and M-1 sorted uniform draws from the open interval (0, T)."""
    if M < 2:
        raise ValueError("M must be at least 2")
    inner = rng.uniform(0.0, T, size=M - 1)
    # uniform() is half-open on [0, T); redraw the measure-zero t=0 case
    while np.any(inner == 0.0):
        inner[inner == 0.0] = rng.uniform(0.0, T, size=int(np.sum(inner == 0.0)))
    return np.concatenate([[0.0], np.sort(inner), [float(T)]])


def residual_loss(s: SolverState, sys: DynamicalSystem, t: np.ndarray) -> tuple[float, NetworkParams]:
    """Mean of ell*ell over the batch and the D components, with its parameter gradient."""
    phi, dphi = envelope(t)
    phi, dphi = phi[:, None], dphi[:, None]
    scale = 2.0 / (len(t) * s.z0.size)

    def loss(ev: NetEval):
        zhat = s.z0 + phi * ev.value
        dzhat = dphi * ev.value + phi * ev.time_derivative
        ell = dzhat - flow(sys, zhat)
        g_ell = scale * ell
        # d ell / d zhat = -F_z(zhat)
        g_zhat = -np.einsum("ni,nij->nj", g_ell, flow_jacobian(sys, zhat))
        g_value = phi * g_zhat + dphi * g_ell
        g_deriv = phi * g_ell
        return float(np.mean(ell * ell)), g_value, g_deriv

    return loss_gradient(s.net, t, loss)


def train_step(s: SolverState, sys: DynamicalSystem, rng: np.random.Generator) -> float:
    """One Adam step on a fresh batch.  Returns the loss before the step."""
    t = sample_times(s.M, s.T, rng)
    try:
        L, grad = residual_loss(s, sys, t)
    except TrainingDiverged as exc:
        exc.iteration = s.iteration
        raise
    if not L <= DIVERGENCE_LIMIT:
        raise TrainingDiverged(f"loss {L:.3g} exceeded {DIVERGENCE_LIMIT:g} at iteration {s.iteration}",
                               iteration=s.iteration)
    s.net = sgd_step(s.net, grad, s.optimizer)
    s.iteration += 1
    return L


def train(s: SolverState, sys: DynamicalSystem, iterations: int, rng: np.random.Generator) -> list[float]:
    return [train_step(s, sys, rng) for _ in range(iterations)]
