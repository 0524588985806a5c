"""Hamiltonian systems with hand-coded derivatives.

Every function accepts a single state ``(D,)`` or a batch ``(n, D)`` and keeps
the leading batch axis.  Tensor convention for the flow's second derivative::

    F_zz[..., i, j, k] = d^2 F_i / dz_j dz_k
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def symplectic_matrix(dim: int) -> np.ndarray:
    if dim % 2:
        raise ValueError("symplectic form needs an even dimension")
    n = dim // 2
    J = np.zeros((dim, dim))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


@dataclass(frozen=True)
class DynamicalSystem:
    name: str
    dimension: int
    hamiltonian: Callable[[np.ndarray], np.ndarray]
    grad_h: Callable[[np.ndarray], np.ndarray]
    hess_h: Callable[[np.ndarray], np.ndarray]
    third_h: Callable[[np.ndarray], np.ndarray]
    # F on plain float tuples; lets step-by-step integrators skip numpy overhead
    flow_scalar: Callable[[tuple], tuple] | None = None

    @property
    def J(self) -> np.ndarray:
        return symplectic_matrix(self.dimension)

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dimension:
            raise ValueError(f"{self.name} expects states of length {self.dimension}, got {z.shape}")
        return z


# nonlinear oscillator: H = (x^2 + p^2)/2 + x^4/4

def _osc_h(z):
    x, p = z[..., 0], z[..., 1]
    return 0.5 * (x * x + p * p) + 0.25 * x ** 4


def _osc_grad(z):
    x, p = z[..., 0], z[..., 1]
    return np.stack([x + x ** 3, p], axis=-1)


def _osc_hess(z):
    x = z[..., 0]
    out = np.zeros(z.shape + (2,))
    out[..., 0, 0] = 1.0 + 3.0 * x * x
    out[..., 1, 1] = 1.0
    return out


def _osc_third(z):
    out = np.zeros(z.shape + (2, 2))
    out[..., 0, 0, 0] = 6.0 * z[..., 0]
    return out


def _osc_flow_scalar(z):
    x, p = z
    return (p, -x - x * x * x)


# Henon-Heiles: H = (x^2 + y^2 + px^2 + py^2)/2 + x^2 y - y^3/3

def _hh_h(z):
    x, y, px, py = (z[..., i] for i in range(4))
    return 0.5 * (x * x + y * y + px * px + py * py) + x * x * y - y ** 3 / 3.0


def _hh_grad(z):
    x, y, px, py = (z[..., i] for i in range(4))
    return np.stack([x + 2.0 * x * y, y + x * x - y * y, px, py], axis=-1)


def _hh_hess(z):
    x, y = z[..., 0], z[..., 1]
    out = np.zeros(z.shape + (4,))
    out[..., 0, 0] = 1.0 + 2.0 * y
    out[..., 0, 1] = out[..., 1, 0] = 2.0 * x
    out[..., 1, 1] = 1.0 - 2.0 * y
    out[..., 2, 2] = 1.0
    out[..., 3, 3] = 1.0
    return out


_HH_THIRD = np.zeros((4, 4, 4))
_HH_THIRD[0, 0, 1] = _HH_THIRD[0, 1, 0] = _HH_THIRD[1, 0, 0] = 2.0
_HH_THIRD[1, 1, 1] = -2.0


def _hh_third(z):
    return np.broadcast_to(_HH_THIRD, z.shape[:-1] + (4, 4, 4)).copy()


def _hh_flow_scalar(z):
    x, y, px, py = z
    return (px, py, -x - 2.0 * x * y, -y - x * x + y * y)


NONLINEAR_OSCILLATOR = DynamicalSystem("nl-osc", 2, _osc_h, _osc_grad, _osc_hess, _osc_third, _osc_flow_scalar)
HENON_HEILES = DynamicalSystem("henon-heiles", 4, _hh_h, _hh_grad, _hh_hess, _hh_third, _hh_flow_scalar)

SYSTEMS = {s.name: s for s in (NONLINEAR_OSCILLATOR, HENON_HEILES)}


def get_system(name: str) -> DynamicalSystem:
    try:
        return SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None


def flow(sys: DynamicalSystem, z) -> np.ndarray:
    """F(z) = J grad H(z)."""
    z = sys._check(z)
    return sys.grad_h(z) @ sys.J.T


def flow_jacobian(sys: DynamicalSystem, z) -> np.ndarray:
    """F_z(z) = J Hess H(z)."""
    z = sys._check(z)
    return np.einsum("ia,...aj->...ij", sys.J, sys.hess_h(z))


def flow_second_derivative(sys: DynamicalSystem, z) -> np.ndarray:
    z = sys._check(z)
    return np.einsum("ia,...ajk->...ijk", sys.J, sys.third_h(z))


def _sym_eigvals_2x2(a: np.ndarray) -> np.ndarray:
    p, q, r = a[..., 0, 0], a[..., 0, 1], a[..., 1, 1]
    mean = 0.5 * (p + r)
    rad = np.hypot(0.5 * (p - r), q)
    return np.stack([mean - rad, mean + rad], axis=-1)


def jacobi_eigvals(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 30) -> np.ndarray:
    """Eigenvalues of symmetric matrices ``(..., n, n)`` by cyclic Jacobi rotations.

    Rotations are applied to the whole batch at once; sweeping stops when the
    off-diagonal mass of every matrix is below ``tol`` relative to its norm.
    """
    a = np.array(a, dtype=float)
    batch_shape = a.shape[:-2]
    n = a.shape[-1]
    a = a.reshape((-1, n, n))
    scale = np.maximum(np.sqrt((a * a).sum(axis=(1, 2))), np.finfo(float).tiny)
    idx = np.arange(len(a))
    for _ in range(max_sweeps):
        off2 = (a * a).sum(axis=(1, 2)) - (np.diagonal(a, axis1=1, axis2=2) ** 2).sum(axis=1)
        off = np.sqrt(np.clip(off2, 0.0, None))
        if np.all(off <= tol * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                active = np.abs(apq) > 0.0
                if not active.any():
                    continue
                app, aqq = a[:, p, p], a[:, q, q]
                # tiny apq overflows theta to inf, which correctly gives t = 0
                with np.errstate(over="ignore", divide="ignore"):
                    theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                    t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- R^T A R with R the (p, q) plane rotation
                ap = a[:, :, p].copy()
                aq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * ap - s[:, None] * aq
                a[:, :, q] = s[:, None] * ap + c[:, None] * aq
                rp = a[:, p, :].copy()
                rq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * rp - s[:, None] * rq
                a[:, q, :] = s[:, None] * rp + c[:, None] * rq
                a[idx, p, q] = 0.0
                a[idx, q, p] = 0.0
    return np.sort(np.diagonal(a, axis1=1, axis2=2), axis=1).reshape(batch_shape + (n,))


def min_singular_value(m) -> np.ndarray | float:
    """Smallest singular value of a square matrix, or of each in a batch."""
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    gram = np.swapaxes(m, -1, -2) @ m
    if m.shape[-1] == 1:
        ev = gram[..., 0]
    elif m.shape[-1] == 2:
        ev = _sym_eigvals_2x2(gram)
    else:
        ev = jacobi_eigvals(gram)
    out = np.sqrt(np.clip(ev[..., 0], 0.0, None))
    return float(out) if out.ndim == 0 else out
