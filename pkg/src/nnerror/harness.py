"""Seeded multi-run experiments comparing standard training with corrected arms.

Every run draws an initial condition, trains the primary solver for ``K``
iterations and checkpoints it.  Each arm then starts from that checkpoint:

``standard``  keeps training the primary for ``extra_iters`` iterations.
``alg1``      builds the ``dz_ec`` dataset and regresses a second network on it.
``appendix``  trains a second network on the residual of the error equation.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .correction import CorrectionState, corrected_prediction, train_correction
from .diffnet import DEFAULT_LR, TrainingDiverged
from .errquant import (BoundUndefined, ErrorDataset, EstimatorBlowUp, error_bound, integrate_error, residual_grid,
                       sigma_min_on_grid)
from .reference import (IntegrationFailure, MetricsReport, ReferenceTrajectory, Stopwatch, external_error,
                        metric_indices, rk4_integrate, runtime_meter)
from .solver import SolverState, predict, train
from .systems import DynamicalSystem, get_system

log = logging.getLogger(__name__)

ARMS = ("standard", "alg1", "appendix")
RUN_ERRORS = (TrainingDiverged, IntegrationFailure, EstimatorBlowUp, FloatingPointError)

# Henon-Heiles orbits escape to infinity above this energy
HH_ESCAPE_ENERGY = 1.0 / 6.0


@dataclass
class ExperimentConfig:
    system: str = "nl-osc"
    runs: int = 11
    seed: int = 0
    K: int = 2000
    extra_iters: int = 3000
    k: int = 50
    M: int = 100
    T: float = 10.0
    width: int = 32
    lr: float = DEFAULT_LR
    order: int = 2
    arms: tuple = ("standard", "alg1")
    ref_steps: int = 100_000
    metric_points: int = 2001
    bounded_hh: bool = True
    parallel: bool = False
    serial_timing: bool = False

    def __post_init__(self):
        if isinstance(self.arms, str):
            self.arms = tuple(a.strip() for a in self.arms.split(",") if a.strip())
        self.arms = tuple(self.arms)
        if self.runs < 1 or self.K < 1:
            raise ValueError("runs and K must be at least 1")
        if not self.arms:
            raise ValueError("at least one arm is required")
        bad = set(self.arms) - set(ARMS)
        if bad:
            raise ValueError(f"unknown arms {sorted(bad)}; choose from {ARMS}")
        get_system(self.system)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        """Read ``key = value`` lines (``#`` comments allowed); ``overrides`` win."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        with open(path) as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, value = line.partition("=")
                key = key.strip().replace("-", "_")
                if key == "iters":
                    key = "extra_iters"
                if key not in types:
                    raise ValueError(f"unknown config key {key!r} in {path}")
                values[key] = _coerce(value.strip(), types[key])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _coerce(value: str, type_name: str):
    if type_name == "bool":
        return value.lower() in ("1", "true", "yes", "on")
    if type_name == "int":
        return int(value)
    if type_name == "float":
        return float(value)
    return value


def hh_y_upper(x: float) -> float:
    return math.sqrt(3.0) * (1.0 - abs(x))


def sample_initial_conditions(system: str | DynamicalSystem, rng: np.random.Generator,
                              bounded: bool = True) -> np.ndarray:
    """Random phase-space start for the named system.

    Henon-Heiles draws are redrawn while their energy is at or above the
    escape energy 1/6 when ``bounded`` is set; such orbits leave the potential
    well and blow up in finite time.
    """
    sys = get_system(system) if isinstance(system, str) else system
    if sys.name == "nl-osc":
        return np.array([rng.uniform(0.3, 2.3), rng.uniform(0.0, 2.0)])
    if sys.name == "henon-heiles":
        while True:
            x = rng.uniform(-0.5, 0.5)
            y = rng.uniform(-0.5, hh_y_upper(x))
            z0 = np.array([x, y, rng.normal(0.25, 0.1), rng.normal(0.10, 0.1)])
            if not bounded or sys.hamiltonian(z0) < HH_ESCAPE_ENERGY:
                return z0
    raise ValueError(f"no initial-condition sampler for {sys.name!r}")


@dataclass
class PrimaryRun:
    """State shared by every arm of one seed, captured at the K checkpoint."""

    seed: int
    sys: DynamicalSystem
    solver: SolverState
    ref: ReferenceTrajectory
    dataset: ErrorDataset | None
    estimator_error: str | None
    k_seconds: float
    bound: float
    bound_dz_max: float
    bound_at_boundary: bool
    discrepancy: float
    dz_external: np.ndarray | None
    seeds: dict = field(default_factory=dict)


def _seed_streams(seed: int) -> dict:
    names = ("ic", "net", "primary", "standard", "correction", "net2")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return dict(zip(names, children))


def primary_setup(config: ExperimentConfig, seed: int, z0=None):
    """Initial condition, untrained solver and batch generator for one seed."""
    sys = get_system(config.system)
    streams = _seed_streams(seed)
    if z0 is None:
        z0 = sample_initial_conditions(sys, np.random.default_rng(streams["ic"]), config.bounded_hh)
    net_seed = int(streams["net"].generate_state(1)[0])
    s = SolverState.create(z0, net_seed, T=config.T, M=config.M, width=config.width, lr=config.lr)
    return sys, s, np.random.default_rng(streams["primary"]), streams


def primary_phase(config: ExperimentConfig, seed: int) -> PrimaryRun:
    """Train to the checkpoint and quantify its error internally and externally."""
    sys, s, rng, streams = primary_setup(config, seed)
    ref = rk4_integrate(sys, s.z0, config.T, config.T / config.ref_steps)
    with Stopwatch() as sw:
        train(s, sys, config.K, rng)

    grid = residual_grid(s, sys, config.k * config.M + 1)
    try:
        sigma = sigma_min_on_grid(sys, grid.zhat)
        l_max = float(np.max(np.linalg.norm(grid.ell, axis=-1)))
        bound = error_bound(l_max, sigma)
    except (BoundUndefined, ValueError):
        bound = float("nan")
    _, bound_dz_max, t_metric, dz_metric = external_error(lambda t: predict(s, t), ref, config.metric_points)
    at_boundary = bool(np.argmax(np.linalg.norm(dz_metric, axis=-1)) == len(t_metric) - 1)

    dataset, estimator_error, discrepancy, dz_ext = None, None, float("nan"), None
    try:
        dataset = integrate_error(sys, grid, config.order)
        dataset.k = config.k
    except EstimatorBlowUp as exc:
        estimator_error = str(exc)
    dz_ext = ref.state_at(grid.t) - grid.zhat
    if dataset is not None:
        ext_max = np.max(np.linalg.norm(dz_ext, axis=-1))
        gap = np.mean(np.linalg.norm(dataset.dz_ec - dz_ext, axis=-1))
        discrepancy = float(gap / ext_max) if ext_max > 0 else 0.0
    return PrimaryRun(seed, sys, s, ref, dataset, estimator_error, sw.elapsed, bound, bound_dz_max, at_boundary,
                      discrepancy, dz_ext, streams)


def _timed_dataset(config: ExperimentConfig, run: PrimaryRun) -> ErrorDataset:
    """Rebuild the dz_ec dataset inside a stopwatch so its cost lands in tau."""
    with Stopwatch() as sw:
        ds = integrate_error(run.sys, residual_grid(run.solver, run.sys, config.k * config.M + 1), config.order)
    ds.k = config.k
    ds.setup_seconds = sw.elapsed
    return ds


def finish_arm(config: ExperimentConfig, arm: str, run: PrimaryRun) -> tuple[MetricsReport, np.ndarray]:
    """Continue one arm from the checkpoint; returns metrics and predictions on the metric grid."""
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}")
    extra = config.extra_iters
    base = dict(arm=arm, seed=run.seed, system=config.system, K=config.K, bound=run.bound,
                bound_dz_max=run.bound_dz_max, bound_at_boundary=run.bound_at_boundary,
                discrepancy=run.discrepancy)
    if arm == "standard":
        s = run.solver.copy()
        with Stopwatch() as sw:
            train(s, run.sys, extra, np.random.default_rng(run.seeds["standard"]))
        predictor = lambda t: predict(s, t)
        tau = runtime_meter(0.0, sw.elapsed, extra) if extra else runtime_meter(0.0, run.k_seconds, config.K)
        iterations = config.K + extra
    else:
        if arm == "alg1":
            if run.dataset is None:
                raise EstimatorBlowUp(f"no dz_ec dataset: {run.estimator_error}", -1)
            ds = _timed_dataset(config, run)
            mode = "regression"
        else:
            with Stopwatch() as setup:
                grid = residual_grid(run.solver, run.sys, config.k * config.M + 1)
                # the residual-mode corrector reads only ell and zhat from the grid
                ds = ErrorDataset(grid.t, grid.ell, grid.zhat, np.zeros_like(grid.ell),
                                  config.T / (config.k * config.M), config.k, config.order)
            ds.setup_seconds = setup.elapsed
            mode = "residual"
        net2_seed = int(run.seeds["net2"].generate_state(1)[0])
        with Stopwatch() as sw:
            c = CorrectionState.create(run.solver, ds, net2_seed, mode, sys=run.sys, lr=config.lr)
            train_correction(c, extra, np.random.default_rng(run.seeds["correction"]), run.solver, run.sys)
        predictor = lambda t: corrected_prediction(run.solver, c, t)
        tau = runtime_meter(ds.setup_seconds, sw.elapsed, max(extra, 1))
        iterations = config.K + extra
    dz_avg, dz_max, _, dz = external_error(predictor, run.ref, config.metric_points)
    report = MetricsReport(tau=tau, dz_avg=dz_avg, dz_max=dz_max, iterations=iterations, **base)
    idx = metric_indices(len(run.ref.times), config.metric_points)
    return report, run.ref.states[idx] - dz


def run_arm(config: ExperimentConfig, arm: str, seed: int) -> MetricsReport:
    try:
        run = primary_phase(config, seed)
        return finish_arm(config, arm, run)[0]
    except RUN_ERRORS as exc:
        raise type(exc)(f"[arm={arm} seed={seed}] {exc}", *_extra_args(exc)) from exc


def _extra_args(exc) -> tuple:
    if isinstance(exc, IntegrationFailure):
        return (exc.t,)
    if isinstance(exc, EstimatorBlowUp):
        return (exc.index,)
    return ()


@dataclass
class RunFailure:
    arm: str
    seed: int
    error: str


@dataclass
class RunArtifacts:
    """Per-seed series for trajectory and error-overlay files."""

    seed: int
    t: np.ndarray
    reference: np.ndarray
    predictions: dict
    grid_t: np.ndarray | None = None
    dz_internal: np.ndarray | None = None
    dz_external: np.ndarray | None = None


@dataclass
class StudyReport:
    config: ExperimentConfig
    reports: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)

    def by_arm(self, arm: str) -> list[MetricsReport]:
        return [r for r in self.reports if r.arm == arm]

    def medians(self, arm: str) -> dict:
        rows = self.by_arm(arm)
        if not rows:
            return {"tau": float("nan"), "dz_avg": float("nan"), "dz_max": float("nan"), "runs": 0}
        return {key: float(np.median([getattr(r, key) for r in rows])) for key in ("tau", "dz_avg", "dz_max")} | {
            "runs": len(rows)}

    def paired(self, arm: str, other: str, key: str = "dz_avg") -> list[tuple[int, float, float]]:
        """``(seed, arm value, other value)``; a failed arm contributes ``inf``."""
        a = {r.seed: getattr(r, key) for r in self.by_arm(arm)}
        b = {r.seed: getattr(r, key) for r in self.by_arm(other)}
        seeds = [self.config.seed + i for i in range(self.config.runs)]
        return [(sd, a.get(sd, math.inf), b.get(sd, math.inf)) for sd in seeds]

    @property
    def run_count(self) -> int:
        return self.config.runs

    def primary_rows(self) -> list[MetricsReport]:
        """One report per seed (the first arm that completed) for checkpoint-level quantities."""
        seen, out = set(), []
        for r in self.reports:
            if r.seed not in seen:
                seen.add(r.seed)
                out.append(r)
        return out


def _run_seed(config: ExperimentConfig, seed: int):
    reports, failures = [], []
    try:
        run = primary_phase(config, seed)
    except RUN_ERRORS as exc:
        log.warning("seed %d failed before the checkpoint: %s", seed, exc)
        return reports, [RunFailure(arm, seed, str(exc)) for arm in config.arms], None
    idx = metric_indices(len(run.ref.times), config.metric_points)
    art = RunArtifacts(seed, run.ref.times[idx], run.ref.states[idx], {})
    if run.dataset is not None:
        art.grid_t, art.dz_internal, art.dz_external = run.dataset.times, run.dataset.dz_ec, run.dz_external
    for arm in config.arms:
        try:
            report, pred = finish_arm(config, arm, run)
        except RUN_ERRORS as exc:
            log.warning("arm %s seed %d failed: %s", arm, seed, exc)
            failures.append(RunFailure(arm, seed, str(exc)))
            continue
        reports.append(report)
        art.predictions[arm] = pred
    return reports, failures, art


def run_study(config: ExperimentConfig) -> StudyReport:
    seeds = [config.seed + i for i in range(config.runs)]
    if config.parallel and not config.serial_timing and len(seeds) > 1:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_run_seed, [config] * len(seeds), seeds))
    else:
        results = [_run_seed(config, sd) for sd in seeds]
    study = StudyReport(config)
    for reports, failures, art in results:
        study.reports.extend(reports)
        study.failures.extend(failures)
        if art is not None:
            study.artifacts.append(art)
    return study
