"""Simulation and optimization of ground-state preparation ramps for
collective spins coupled to a single boson mode."""

__version__ = "0.1.0"

from .model import (
    KHZ,
    Basis,
    ModelParams,
    ParamsError,
    QuantumState,
    build_boson_ops,
    build_collective_spin_ops,
    build_hamiltonian,
    fock_x_state,
)
from .spectral import (
    EigensolverError,
    GapTable,
    SpectrumSlice,
    cat_state,
    gap_in_sector,
    gap_scan,
    ground_state,
    parity_of,
    spectrum_slice,
)
from .dynamics import (
    BangBangSchedule,
    ConstantSchedule,
    LocallyAdiabaticSchedule,
    PropagateOptions,
    PropagationError,
    RampError,
    TabulatedSchedule,
    ThermalEnsemble,
    Trajectory,
    TruncationError,
    la_schedule,
    propagate,
    propagate_thermal,
)
from .metrology import (
    CoherenceRecord,
    SpinDistribution,
    apply_collective_dephasing,
    coherence_extremal,
    fidelity_to_cat,
    qfi,
    spin_distribution,
    sx_depolarization,
)
from .protocols import (
    SweepGrid,
    SweepResult,
    compare_protocols,
    longitudinal_robustness,
    scaling_study,
    sweep_bang_bang,
)
from .io import ConfigError, RunConfig, parse_and_validate
