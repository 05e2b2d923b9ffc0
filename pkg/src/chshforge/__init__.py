"""Noisy trajectory simulation and CHSH benchmarking of long-range CNOT realizations."""
from __future__ import annotations

from .circuit import Circuit, CircuitError, GateKind, Instruction, decompose_swaps, two_qubit_count, two_qubit_depth
from .harness import (
    CellResult,
    DistanceSweepResult,
    ExperimentConfig,
    HarnessError,
    SCurve,
    compute_s,
    cost_table,
    fit_noise_scale,
    postselect_filter,
    run_scurve,
    sweep_distance,
)
from .mitigation import ConfusionSet, MitigationError, QuasiDistribution, fit_confusion, mitigate
from .noise import NoiseModel, from_calibration
from .schedule import Durations, ScheduledCircuit, pad_dd, schedule_asap
from .simulator import Counts, SimulationError, TrajectoryCache, run_shots, statevector
from .synthesis import ChshCircuitSpec, CnotStrategy, build_chsh_circuit
from .topology import CalibrationData, CouplingMap, QubitChain, eagle_map, find_chain, load_calibration

__version__ = "0.1.0"
