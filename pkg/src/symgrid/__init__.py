"""Grid-based symbolic control with inherent robustness margins.

Build a finite abstraction of a discrete-time plant on a uniform grid,
compute how much perturbation every abstract transition tolerates for
free, synthesize controllers that maximize that tolerance, and validate
or break the abstraction relation under perturbation.
"""

from .geometry import (
    OVERFLOW,
    CellBlock,
    HyperRect,
    UniformGrid,
    block_margin,
    cell_bounds,
    covering_block,
    inflate,
    quantize,
)
from .systems import (
    InputGrid,
    PerturbationMap,
    SystemSpec,
    double_integrator,
    perturbed_step,
    step,
    unicycle,
)
from .reachability import (
    ExactLinearReach,
    GrowthBoundReach,
    make_reach_operator,
    reach_exact_linear,
    reach_growth_bound,
)
from .abstraction import SymbolicModel, build_abstraction, enabled_inputs, successors
from .margins import (
    InconsistentAbstractionError,
    MarginTable,
    block_from_cells,
    eta,
    margin_table,
    state_margin_field,
    uniform_margin,
)
from .synthesis import (
    ConcreteController,
    ControlledModel,
    Controller,
    DeterministicController,
    ProductPolicy,
    SpecDFA,
    cell_mask_inside,
    cosafe_controller,
    determinize_max_margin,
    label_cells,
    maximal_safety_controller,
    refine,
    region_labeling,
    sequential_reach_dfa,
)
from .simulation import (
    AltSimReport,
    SimPolicy,
    Trajectory,
    adversarial_escape_witness,
    check_alt_simulation,
    falsify_beyond_margin,
    simulate_closed_loop,
)

__version__ = "0.1.0"
