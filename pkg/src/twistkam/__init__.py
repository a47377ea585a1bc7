"""Twist maps of T*T^d, their periodic invariant graphs, and tori accumulating on them."""

from .core import FourierMap, RealBasis, TangentBlocks
from .genfun import FamilySpec, GeneratingFunction, make_family
from .twistmap import TwistMap
from .variational import InvariantGraph, build_invariant_graph, extremal_bvp, periodic_orbit
from .conjugacy import FlatStructure, MetricField, flat_structure, metric_field, monodromy_B
from .rescaling import NormalFormFrame, euler_defect, flow_convergence, rescale_map, verify_normal_form
from .kam import DiophantineVector, EmbeddedTorus, check_strongly_diophantine, construct_jm, solve_invariance
from .pipeline import ExperimentConfig, StageError, TheoremReport, run_pipeline

__version__ = "0.1.0"
