"""Classical-shadow estimation and readout-error mitigation for metasurface POVMs."""

__version__ = "0.1.0"

from .errors import (
    CapacityError,
    DataFormatError,
    DegenerateGroupError,
    EstimationError,
    FitError,
    InvalidArgumentError,
    MetashadowError,
    ModelError,
    NonConvergenceError,
    SingularityError,
)
from .qcore import StateDescriptor, exact_overlap, exact_purity, partial_trace, w_state
from .povm import ProbTable, born_table, build_povm, check_two_design
from .noise import LossyProbTable, NoiseParams, apply_composite, load_noise
from .mitigate import mitigate
from .estimate import ExperimentConfig, hamming_purity, run_experiment, shadow_fidelity
