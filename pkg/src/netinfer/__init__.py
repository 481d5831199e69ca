"""Infer a network's topology and host-to-host routes from path-sharing and
path-distance measurements, by solving an integer program built from the
measured relations and reconstructing the network from its solution."""

__version__ = "0.1.0"

from .evaluate import EvalReport, NodeMapping, collapse_search, evaluate_networks, ns_score, ped
from .measurement import (
    ConstraintSet,
    DmRecord,
    PsmTriple,
    build_source_tree,
    derive_constraints,
    inject_errors,
    psm_value,
)
from .model import MipModel, ModelConfig, build_occam_model, build_stitch_model, linearize, soften
from .probesim import LinkModel, ProbeReport, report_to_constraints, simulate_trains
from .reconstruct import graph_construct_1, graph_construct_2, verify_solution
from .solver import Solution, SolverConfig, export_lp, import_solution, solve
from .topology import (
    Graph,
    Network,
    SourceTree,
    attach_hosts,
    compute_routes,
    export_dot,
    parse_topology,
    source_tree_of,
)

__all__ = [
    "ConstraintSet", "DmRecord", "EvalReport", "Graph", "LinkModel", "MipModel",
    "ModelConfig", "Network", "NodeMapping", "ProbeReport", "PsmTriple", "Solution",
    "SolverConfig", "SourceTree", "attach_hosts", "build_occam_model",
    "build_source_tree", "build_stitch_model", "collapse_search", "compute_routes",
    "derive_constraints", "evaluate_networks", "export_dot", "export_lp",
    "graph_construct_1", "graph_construct_2", "import_solution", "inject_errors",
    "linearize", "ns_score", "parse_topology", "ped", "psm_value",
    "report_to_constraints", "simulate_trains", "soften", "solve", "source_tree_of",
    "verify_solution",
]
