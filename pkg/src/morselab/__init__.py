"""morselab: a desk-scale laboratory for downward gradient semi-flows.

Critical points of classical action functionals, heat-flow Morse
complexes with integer coefficients, Conley index pairs, Morse
filtrations, rasterized cubical relative homology, and stable-foliation
graph maps, all on small analytic systems and discretized free-loop
spaces where every quantity can be checked against an independent
oracle.
"""

from .conley import (
    ConleyPair,
    Filtration,
    build_conley_pair,
    build_filtration,
    default_epsilon,
    verify_disjointness,
    verify_exit_set,
)
from .critical import (
    CriticalPoint,
    CritSet,
    MultistartSpec,
    find_critical_points,
)
from .errors import ConfigError, MissingStage, MorselabError
from .foliation import (
    LocalChart,
    build_chart,
    descending_gammas,
    sample_graph_map,
    sample_leaf,
    sample_stable_graph,
    shrink_into_ball,
    solve_mixed_cauchy,
    verify_action_decrease,
    verify_lambda_estimates,
    verify_leaf_compatibility,
    verify_leaf_convergence,
)
from .homology import (
    Grid,
    Mask,
    compare_with_morse,
    rasterize,
    relative_homology,
)
from .model import LoopSystem, ModelSystem, make_system
from .morse_complex import MorseComplex, build_morse_complex
from .semiflow import ActionBelow, FlowConfig, Trajectory, flow_states, integrate

__version__ = "0.1.0"

__all__ = [
    "ActionBelow",
    "ConfigError",
    "ConleyPair",
    "CriticalPoint",
    "CritSet",
    "Filtration",
    "FlowConfig",
    "Grid",
    "LocalChart",
    "LoopSystem",
    "Mask",
    "MissingStage",
    "ModelSystem",
    "MorseComplex",
    "MorselabError",
    "MultistartSpec",
    "Trajectory",
    "build_chart",
    "build_conley_pair",
    "build_filtration",
    "build_morse_complex",
    "compare_with_morse",
    "default_epsilon",
    "descending_gammas",
    "find_critical_points",
    "flow_states",
    "integrate",
    "make_system",
    "rasterize",
    "relative_homology",
    "sample_graph_map",
    "sample_leaf",
    "sample_stable_graph",
    "shrink_into_ball",
    "solve_mixed_cauchy",
    "verify_action_decrease",
    "verify_disjointness",
    "verify_exit_set",
    "verify_lambda_estimates",
    "verify_leaf_compatibility",
    "verify_leaf_convergence",
    "__version__",
]
