"""Neural-network ODE solvers that estimate and correct their own error."""
from .correction import (CorrectionState, appendix_residual, appendix_train_step, assemble_batch,
                         corrected_prediction, predict_correction, regression_train_step)
from .diffnet import AdamState, NetEval, NetworkParams, TrainingDiverged, forward, init_params, loss_gradient, sgd_step
from .errquant import (ErrorDataset, EstimatorBlowUp, bound_from_dataset, error_bound, generate_correction_dataset,
                       integrate_error)
from .harness import ExperimentConfig, StudyReport, run_arm, run_study, sample_initial_conditions
from .reference import MetricsReport, ReferenceTrajectory, external_error, rk4_integrate, runtime_meter
from .solver import ResidualSample, SolverState, predict, residual, sample_times, train, train_step
from .systems import (HENON_HEILES, NONLINEAR_OSCILLATOR, DynamicalSystem, flow, flow_jacobian,
                      flow_second_derivative, get_system, min_singular_value)

__version__ = "0.1.0"
