import numpy as np

from nnerror import checkpoint
from nnerror.correction import CorrectionState, corrected_prediction, predict_correction
from nnerror.errquant import generate_correction_dataset
from nnerror.harness import ExperimentConfig, primary_setup
from nnerror.solver import predict, train


def _trained():
    sys, s, rng, _ = primary_setup(ExperimentConfig(T=2.0, width=8), 0)
    train(s, sys, 30, rng)
    return sys, s


def test_solver_round_trip(tmp_path):
    sys, s = _trained()
    path = tmp_path / "solver.npz"
    checkpoint.save_solver(path, s, sys.name)
    back, name = checkpoint.load_solver(path)
    assert name == "nl-osc" and back.iteration == 30 and back.T == s.T and back.M == s.M
    assert back.optimizer.lr == s.optimizer.lr
    t = np.linspace(0, 2, 33)
    assert np.array_equal(predict(back, t), predict(s, t))


def test_corrected_round_trip(tmp_path):
    sys, s = _trained()
    ds = generate_correction_dataset(s, sys, k=3)
    c = CorrectionState.create(s, ds, 9, "residual", sys=sys)
    c.iteration = 12
    path = tmp_path / "corrected.npz"
    checkpoint.save_corrected(path, s, c, sys.name)
    back, net2, meta = checkpoint.load_corrected(path)
    assert meta["mode"] == "residual" and meta["system"] == "nl-osc" and meta["scale"] == c.scale
    assert meta["iteration2"] == 12
    t = np.linspace(0, 2, 33)
    c2 = CorrectionState(net2, ds, mode="residual", scale=meta["scale"])
    assert np.array_equal(corrected_prediction(back, c2, t), corrected_prediction(s, c, t))
    assert np.array_equal(predict_correction(c2, t), predict_correction(c, t))
