"""Fixed-step RK4 ground truth and the comparison metrics (tau, mean/max error)."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .systems import DynamicalSystem, flow

DEFAULT_STEPS = 100_000
METRIC_POINTS = 2001


class IntegrationFailure(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class ReferenceTrajectory:
    times: np.ndarray
    states: np.ndarray
    h: float

    def state_at(self, t) -> np.ndarray:
        """Linear interpolation between grid nodes; exact on the nodes themselves."""
        t = np.asarray(t, dtype=float)
        cols = [np.interp(t, self.times, self.states[:, i]) for i in range(self.states.shape[1])]
        return np.stack(cols, axis=-1)


def rk4_integrate(sys: DynamicalSystem, z0, T: float, h: float | None = None) -> ReferenceTrajectory:
    """Classical RK4; the last step is shortened so the grid ends exactly at T."""
    if h is None:
        h = T / DEFAULT_STEPS
    if not h > 0 or T / h < 1:
        raise ValueError("need h > 0 and T/h >= 1")
    n_full = int(np.floor(T / h + 1e-9))
    times = np.arange(n_full + 1) * h
    if T - times[-1] > 1e-12 * T:
        times = np.append(times, T)
    else:
        times[-1] = T
    steps = np.diff(times)
    f = sys.flow_scalar or (lambda z: tuple(flow(sys, np.array(z))))
    states = np.empty((len(times), sys.dimension))
    z = tuple(float(v) for v in np.asarray(z0, dtype=float))
    states[0] = z
    for i, dt in enumerate(steps.tolist()):
        half = 0.5 * dt
        try:
            k1 = f(z)
            k2 = f(tuple(a + half * b for a, b in zip(z, k1)))
            k3 = f(tuple(a + half * b for a, b in zip(z, k2)))
            k4 = f(tuple(a + dt * b for a, b in zip(z, k3)))
        except OverflowError:
            z = (math.inf,)
        else:
            z = tuple(a + (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                      for a, b1, b2, b3, b4 in zip(z, k1, k2, k3, k4))
        if not math.isfinite(sum(z)):
            raise IntegrationFailure(f"state became non-finite at t={times[i + 1]:.6g}", float(times[i + 1]))
        states[i + 1] = z
    return ReferenceTrajectory(times, states, h)


def energy_drift(sys: DynamicalSystem, ref: ReferenceTrajectory) -> float:
    H = sys.hamiltonian(ref.states)
    return float(np.max(np.abs(H - H[0])) / max(1.0, abs(H[0])))


def metric_indices(n_nodes: int, n_points: int = METRIC_POINTS) -> np.ndarray:
    if n_points >= n_nodes:
        return np.arange(n_nodes)
    return np.unique(np.round(np.linspace(0, n_nodes - 1, n_points)).astype(int))


def external_error(predictor: Callable[[np.ndarray], np.ndarray], ref: ReferenceTrajectory,
                   n_points: int = METRIC_POINTS):
    """Compare a predictor with the reference on a uniform subsample of its grid.

    Returns ``(dz_avg, dz_max, times, dz)`` where ``dz = z_ref - predictor`` and
    the averages are over the Euclidean norm of ``dz`` at each time.
    """
    idx = metric_indices(len(ref.times), n_points)
    t = ref.times[idx]
    dz = ref.states[idx] - np.asarray(predictor(t))
    mag = np.linalg.norm(dz, axis=-1)
    return float(mag.mean()), float(mag.max()), t, dz


def runtime_meter(setup_seconds: float, train_seconds: float, iterations: int) -> float:
    """Per-iteration cost with the setup amortised over the iterations of use."""
    if iterations <= 0:
        raise ValueError("iterations must be positive")
    return (setup_seconds + train_seconds) / iterations


class Stopwatch:
    """Accumulating monotonic timer, usable as a context manager."""

    def __init__(self):
        self.elapsed = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed += time.perf_counter() - self._start
        return False


@dataclass
class MetricsReport:
    arm: str
    seed: int
    system: str
    K: int
    iterations: int
    tau: float
    dz_avg: float
    dz_max: float
    bound: float = float("nan")
    bound_dz_max: float = float("nan")
    bound_at_boundary: bool = False
    discrepancy: float = float("nan")
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.dz_avg <= self.dz_max):
            raise ValueError("need 0 <= dz_avg <= dz_max")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("extra")
        return row
