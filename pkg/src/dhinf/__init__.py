"""Weighted H-infinity analysis and output-feedback synthesis for linear
descriptor systems ``E x' = A x + B1 w + B2 u``."""

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    Measure,
    PerformanceReport,
    WorstCase,
    assess,
    compute_measure,
    freq_sweep_j0,
    riccati_stabilizing,
    worst_case,
)
from .descriptor import (  # noqa: E402
    DescriptorPlant,
    LinearSystem,
    ReducedPlant,
    Weights,
    apply_preliminary_feedback,
    check_impulse_free,
    finite_spectrum,
    lift_state,
    output_conditions,
    preliminary_feedback,
    reduce,
    structural_ranks,
)
from .errors import (  # noqa: E402
    DhinfError,
    DivergedError,
    ImpulsivePairError,
    InfeasibleError,
    InputError,
    NotStableError,
    NumericalError,
    UndecidedError,
)
from .sim import Disturbance, Trajectory, achieved_ratio, simulate  # noqa: E402
from .synthesis import (  # noqa: E402
    ClosedLoop,
    Regulator,
    SynthesisOptions,
    SynthesisResult,
    close_loop,
    optimize_gamma,
    synth_dynamic,
    synth_static,
    synth_static_special,
)

__all__ = [name for name in dir() if not name.startswith("_")]
