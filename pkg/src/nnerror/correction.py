"""Second-network error correction.

Two ways to train ``dzhat(t) = scale * (1 - exp(-t)) N2(t)``, where ``scale``
is a fixed estimate of the error's size so that N2 works at O(1) output:

* ``regression`` fits the recursion estimate ``dz_ec`` directly.  No time
  derivative of any network is needed, which is what makes it cheap.
* ``residual`` makes the second network a solver in its own right, driving
  ``ell2 = ell - [F_z dzhat + 1/2 dzhat^T F_zz dzhat] + d(dzhat)/dt`` to zero on
  the stored grid of the frozen primary solver.

Either way the final answer is ``zhat(t) + dzhat(t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffnet import (AdamState, NetEval, NetworkParams, TrainingDiverged, forward, forward_value, init_params,
                      loss_gradient, sgd_step)
from .errquant import BoundUndefined, ErrorDataset, error_bound, sigma_min_on_grid
from .solver import DIVERGENCE_LIMIT, SolverState, envelope, predict
from .systems import DynamicalSystem, flow_jacobian, flow_second_derivative

MODES = ("regression", "residual")


class OffGridError(ValueError):
    """Residual-mode quantities exist only on the stored grid."""


@dataclass
class CorrectionState:
    net2: NetworkParams
    dataset: ErrorDataset
    M: int = 100
    mode: str = "regression"
    iteration: int = 0
    optimizer: AdamState = field(default_factory=AdamState)
    order: int = 2
    # dzhat = scale * (1 - exp(-t)) N2(t); matches the network's O(1) output to the target size
    scale: float = 1.0
    # F_z, F_zz at the stored zhat grid; filled lazily for residual mode
    fz: np.ndarray | None = None
    fzz: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.net2.out_dim != self.dataset.ell.shape[1]:
            raise ValueError("correction network output does not match the dataset dimension")

    @classmethod
    def create(cls, solver: SolverState, dataset: ErrorDataset, seed: int, mode: str = "regression",
               sys: DynamicalSystem | None = None, lr: float | None = None,
               scale: float | None = None) -> "CorrectionState":
        """Duplicate the primary's shape with freshly initialised weights.

        Without an explicit ``scale``, regression mode uses the largest
        ``|dz_ec|`` in the dataset and residual mode uses the bound
        ``l_max / sigma_min``; both fall back to 1 when degenerate.
        """
        net2 = init_params(seed, solver.net.width, solver.net.out_dim)
        opt = AdamState(lr=solver.optimizer.lr if lr is None else lr)
        if scale is None:
            scale = default_scale(dataset, mode, sys)
        c = cls(net2, dataset, solver.M, mode, optimizer=opt, order=dataset.order, scale=scale)
        if mode == "residual":
            if sys is None:
                raise ValueError("residual mode needs the dynamical system")
            c.fz = flow_jacobian(sys, dataset.zhat)
            c.fzz = flow_second_derivative(sys, dataset.zhat)
        return c

    def copy(self) -> "CorrectionState":
        return CorrectionState(self.net2.copy(), self.dataset, self.M, self.mode, self.iteration,
                               self.optimizer.copy(), self.order, self.scale, self.fz, self.fzz)


def default_scale(dataset: ErrorDataset, mode: str, sys: DynamicalSystem | None = None) -> float:
    if mode == "regression":
        size = float(np.max(np.abs(dataset.dz_ec)))
    else:
        if sys is None:
            return 1.0
        try:
            size = error_bound(dataset.l_max, sigma_min_on_grid(sys, dataset.zhat))
        except BoundUndefined:
            return 1.0
    return size if np.isfinite(size) and size > 0 else 1.0


def _envelope(c: CorrectionState, t):
    phi, dphi = envelope(t)
    return c.scale * np.asarray(phi)[..., None], c.scale * np.asarray(dphi)[..., None]


def predict_correction(c: CorrectionState, t) -> np.ndarray:
    return _envelope(c, t)[0] * forward_value(c.net2, t)


def predict_correction_with_derivative(c: CorrectionState, t) -> tuple[np.ndarray, np.ndarray]:
    ev = forward(c.net2, t)
    phi, dphi = _envelope(c, t)
    return phi * ev.value, dphi * ev.value + phi * ev.time_derivative


def corrected_prediction(s: SolverState, c: CorrectionState, t) -> np.ndarray:
    return predict(s, t) + predict_correction(c, t)


def assemble_batch(dataset: ErrorDataset, M: int, rng: np.random.Generator) -> np.ndarray:
    """Row indices: first and last row plus M-1 distinct interior rows, sorted."""
    n = len(dataset)
    if n < M + 1:
        raise ValueError(f"dataset has {n} rows, a batch needs {M + 1}")
    inner = rng.choice(np.arange(1, n - 1), size=M - 1, replace=False)
    return np.concatenate([[0], np.sort(inner), [n - 1]])


def _guard(L: float, iteration: int) -> None:
    if not L <= DIVERGENCE_LIMIT:
        raise TrainingDiverged(f"correction loss {L:.3g} exceeded {DIVERGENCE_LIMIT:g} at iteration {iteration}",
                               iteration=iteration)


def regression_loss(c: CorrectionState, rows: np.ndarray) -> tuple[float, NetworkParams]:
    t = c.dataset.times[rows]
    target = c.dataset.dz_ec[rows]
    phi = _envelope(c, t)[0]
    scale = 2.0 / target.size

    def loss(ev: NetEval):
        ell2 = target - phi * ev.value
        return float(np.mean(ell2 * ell2)), -scale * phi * ell2, None

    return loss_gradient(c.net2, t, loss, with_derivative=False)


def regression_train_step(c: CorrectionState, rng: np.random.Generator) -> float:
    if c.mode != "regression":
        raise ValueError("regression_train_step needs mode='regression'")
    rows = assemble_batch(c.dataset, c.M, rng)
    L, grad = regression_loss(c, rows)
    _guard(L, c.iteration)
    c.net2 = sgd_step(c.net2, grad, c.optimizer)
    c.iteration += 1
    return L


def _grid_rows(c: CorrectionState, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    times = c.dataset.times
    rows = np.clip(np.searchsorted(times, t), 0, len(times) - 1)
    # accept the neighbour below when t sits a rounding error under a node
    lower = np.clip(rows - 1, 0, len(times) - 1)
    rows = np.where(np.abs(times[lower] - t) < np.abs(times[rows] - t), lower, rows)
    if not np.all(np.abs(times[rows] - t) <= 1e-12 * max(1.0, c.dataset.T)):
        raise OffGridError("appendix residual is only defined on the stored grid points")
    return rows


def _ensure_tensors(c: CorrectionState, sys: DynamicalSystem | None) -> None:
    if c.fz is None:
        if sys is None:
            raise ValueError("flow derivatives not cached and no system given")
        c.fz = flow_jacobian(sys, c.dataset.zhat)
        c.fzz = flow_second_derivative(sys, c.dataset.zhat)


def _appendix_terms(c: CorrectionState, rows: np.ndarray, dz: np.ndarray, ddz: np.ndarray):
    fz = c.fz[rows]
    lin = np.einsum("nij,nj->ni", fz, dz)
    if c.order == 2:
        fzz_dz = np.einsum("nijk,nk->nij", c.fzz[rows], dz)
        lin = lin + 0.5 * np.einsum("nij,nj->ni", fzz_dz, dz)
        dlin = fz + fzz_dz
    else:
        dlin = fz
    return c.dataset.ell[rows] - lin + ddz, dlin


def appendix_residual(c: CorrectionState, s: SolverState | None, sys: DynamicalSystem | None, t) -> np.ndarray:
    """Second-solver residual at stored grid times (``s`` is unused; the grid already holds its data)."""
    scalar = np.ndim(t) == 0
    rows = _grid_rows(c, t)
    _ensure_tensors(c, sys)
    tt = c.dataset.times[rows]
    dz, ddz = predict_correction_with_derivative(c, tt)
    ell2, _ = _appendix_terms(c, rows, dz, ddz)
    return ell2[0] if scalar else ell2


def appendix_loss(c: CorrectionState, rows: np.ndarray) -> tuple[float, NetworkParams]:
    t = c.dataset.times[rows]
    phi, dphi = _envelope(c, t)
    scale = 2.0 / (len(rows) * c.net2.out_dim)

    def loss(ev: NetEval):
        dz = phi * ev.value
        ddz = dphi * ev.value + phi * ev.time_derivative
        ell2, dlin = _appendix_terms(c, rows, dz, ddz)
        g = scale * ell2
        # d ell2 / d dz = -(F_z + F_zz dz); d ell2 / d ddz = I
        g_dz = -np.einsum("ni,nij->nj", g, dlin)
        return float(np.mean(ell2 * ell2)), phi * g_dz + dphi * g, phi * g

    return loss_gradient(c.net2, t, loss)


def appendix_train_step(c: CorrectionState, s: SolverState | None, sys: DynamicalSystem | None,
                        rng: np.random.Generator) -> float:
    if c.mode != "residual":
        raise ValueError("appendix_train_step needs mode='residual'")
    _ensure_tensors(c, sys)
    rows = assemble_batch(c.dataset, c.M, rng)
    L, grad = appendix_loss(c, rows)
    _guard(L, c.iteration)
    c.net2 = sgd_step(c.net2, grad, c.optimizer)
    c.iteration += 1
    return L


def train_correction(c: CorrectionState, iterations: int, rng: np.random.Generator,
                     s: SolverState | None = None, sys: DynamicalSystem | None = None) -> list[float]:
    if c.mode == "regression":
        return [regression_train_step(c, rng) for _ in range(iterations)]
    return [appendix_train_step(c, s, sys, rng) for _ in range(iterations)]
