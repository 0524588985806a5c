"""Checkpoints as flat ``.npz`` key -> array maps."""
from __future__ import annotations

import numpy as np

from .correction import CorrectionState
from .diffnet import AdamState, NetworkParams
from .solver import SolverState


def save_solver(path, s: SolverState, system: str = "") -> None:
    np.savez(path, **s.net.to_dict(), iteration=np.array(s.iteration), z0=s.z0, T=np.array(s.T),
             M=np.array(s.M), lr=np.array(s.optimizer.lr), system=np.array(system))


def load_solver(path) -> tuple[SolverState, str]:
    """Restore network weights and configuration; optimizer moments start fresh."""
    with np.load(path) as d:
        net = NetworkParams.from_dict(d)
        s = SolverState(net, d["z0"], float(d["T"]), int(d["M"]), int(d["iteration"]),
                        AdamState(lr=float(d["lr"])))
        return s, str(d["system"])


def save_corrected(path, s: SolverState, c: CorrectionState, system: str = "") -> None:
    np.savez(path, **s.net.to_dict("net_"), **c.net2.to_dict("net2_"), z0=s.z0, T=np.array(s.T),
             mode=np.array(c.mode), scale=np.array(c.scale), iteration=np.array(s.iteration),
             iteration2=np.array(c.iteration), system=np.array(system))


def load_corrected(path) -> tuple[SolverState, NetworkParams, dict]:
    """Return ``(solver, net2, meta)``; ``meta`` holds mode, scale, system and iteration2."""
    with np.load(path) as d:
        s = SolverState(NetworkParams.from_dict(d, "net_"), d["z0"], float(d["T"]), iteration=int(d["iteration"]))
        meta = {"mode": str(d["mode"]), "scale": float(d["scale"]), "system": str(d["system"]),
                "iteration2": int(d["iteration2"])}
        return s, NetworkParams.from_dict(d, "net2_"), meta
