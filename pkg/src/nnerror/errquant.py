"""Error quantification from the residual alone.

Given residuals ``ell`` and predictions ``zhat`` on a uniform grid, the error
``dz = z - zhat`` obeys

    dz' = F_z dz + 1/2 dz^T F_zz dz + ... - ell

with all derivatives of F taken at ``zhat``.  :func:`integrate_error` steps
this relation with forward Euler from ``dz(0) = 0``; :func:`error_bound` gives
the cruder global estimate ``l_max / sigma_min``.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .solver import ResidualSample, SolverState, residual
from .systems import DynamicalSystem, flow_jacobian, flow_second_derivative, min_singular_value


class BoundUndefined(ValueError):
    pass


class EstimatorBlowUp(RuntimeError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@dataclass
class ErrorDataset:
    times: np.ndarray   # (n,)
    ell: np.ndarray     # (n, D)
    zhat: np.ndarray    # (n, D)
    dz_ec: np.ndarray   # (n, D)
    dt: float
    k: int | None = None
    order: int = 2
    setup_seconds: float = 0.0

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def l_max(self) -> float:
        return float(np.max(np.linalg.norm(self.ell, axis=-1)))

    def __len__(self):
        return len(self.times)


def error_bound(l_max: float, sigma_min: float) -> float:
    if not sigma_min > 0:
        raise BoundUndefined(f"sigma_min={sigma_min!r}: flow Jacobian is singular on the trajectory")
    return l_max / sigma_min


def _check_uniform(times: np.ndarray) -> float:
    if len(times) < 2 or times[0] != 0.0:
        raise ValueError("grid must start at 0 and have at least two points")
    steps = np.diff(times)
    dt = float(times[-1] / (len(times) - 1))
    if not np.allclose(steps, dt, rtol=1e-9, atol=0.0):
        raise ValueError("grid must be uniformly spaced")
    return dt


def integrate_error(sys: DynamicalSystem, samples: ResidualSample, order: int = 2) -> ErrorDataset:
    """Forward-Euler recursion for dz, truncating the Taylor series at ``order``."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    times = np.asarray(samples.t, dtype=float)
    ell = np.asarray(samples.ell, dtype=float)
    zhat = np.asarray(samples.zhat, dtype=float)
    dt = _check_uniform(times)
    fz = flow_jacobian(sys, zhat)
    fzz = flow_second_derivative(sys, zhat) if order == 2 else None
    n, D = ell.shape
    dz = np.zeros((n, D))
    cur = np.zeros(D)
    # overflow is reported through EstimatorBlowUp instead
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n - 1):
            rate = fz[i] @ cur - ell[i]
            if fzz is not None:
                rate += 0.5 * (fzz[i] @ cur) @ cur
            cur = cur + dt * rate
            if not np.all(np.isfinite(cur)):
                raise EstimatorBlowUp(f"error recursion left finite range at grid index {i + 1}", i + 1)
            dz[i + 1] = cur
    return ErrorDataset(times, ell, zhat, dz, dt, order=order)


def residual_grid(s: SolverState, sys: DynamicalSystem, n_points: int) -> ResidualSample:
    times = np.linspace(0.0, s.T, n_points)
    times[-1] = s.T
    return residual(s, sys, times)


def generate_correction_dataset(s: SolverState, sys: DynamicalSystem, k: int = 50,
                                order: int = 2) -> ErrorDataset:
    """Residuals on kM+1 uniform points, then the error recursion; no training."""
    if k < 2:
        raise ValueError("k must be at least 2")
    start = time.perf_counter()
    ds = integrate_error(sys, residual_grid(s, sys, k * s.M + 1), order)
    ds.k = k
    ds.setup_seconds = time.perf_counter() - start
    return ds


def sigma_min_on_grid(sys: DynamicalSystem, zhat: np.ndarray) -> float:
    return float(np.min(min_singular_value(flow_jacobian(sys, zhat))))


def bound_from_dataset(sys: DynamicalSystem, ds: ErrorDataset) -> tuple[float, float, float]:
    """``(l_max, sigma_min, bound)`` with both extrema taken over the dataset grid."""
    sigma = sigma_min_on_grid(sys, ds.zhat)
    return ds.l_max, sigma, error_bound(ds.l_max, sigma)


def write_dataset_csv(ds: ErrorDataset, path) -> None:
    D = ds.ell.shape[1]
    header = (["t"] + [f"ell_{i + 1}" for i in range(D)] + [f"zhat_{i + 1}" for i in range(D)]
              + [f"dzec_{i + 1}" for i in range(D)])
    table = np.column_stack([ds.times, ds.ell, ds.zhat, ds.dz_ec])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows([[repr(float(x)) for x in row] for row in table])


def read_dataset_csv(path, k: int | None = None, order: int = 2) -> ErrorDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    D = sum(1 for h in header if h.startswith("ell_"))
    times = body[:, 0]
    return ErrorDataset(times, body[:, 1:1 + D], body[:, 1 + D:1 + 2 * D], body[:, 1 + 2 * D:1 + 3 * D],
                        _check_uniform(times), k=k, order=order)
