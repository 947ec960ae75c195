"""Consistent checkpointing and roll-forward recovery of state estimates
for hierarchical control loops under sensor anomalies.

Modules:

* ``models`` - sub-system dynamics/measurement models and noise sampling
* ``estimator`` - extended Kalman filter (predict / gain / update)
* ``anomaly`` - anomaly injection and the detector abstraction
* ``store`` - append-only integrity-tagged checkpoint and control logs
* ``framework`` - the checkpointing/recovery loop and the coordinator
* ``analysis`` - recovered-error bounds, tolerable duration, gap bound
* ``robot`` - differential-drive ground-robot case study
* ``config``/``sim``/``cli`` - scenario schema, scheduler, command line
"""

from .estimator import EstimatorState, EstimatorStepResult, estimator_step
from .framework import (SafeStop, SubsystemRuntime, UnrecoverableError,
                        classify_checkpoint_set,
                        most_recent_consistent_checkpoint,
                        roll_forward_recover, subsystem_tick)
from .models import SubsystemModel, measure, sample_noise, step_dynamics
from .store import Checkpoint, ControlRecord, SecureStore

__all__ = [
    "Checkpoint", "ControlRecord", "EstimatorState", "EstimatorStepResult",
    "SafeStop", "SecureStore", "SubsystemModel", "SubsystemRuntime",
    "UnrecoverableError", "classify_checkpoint_set", "estimator_step",
    "measure", "most_recent_consistent_checkpoint", "roll_forward_recover",
    "sample_noise", "step_dynamics", "subsystem_tick",
]

__version__ = "0.1.0"
