"""Discrete-time stochastic process algebra with immediate multiactions.

Text terms are parsed into static expressions, executed by a step semantics
into probabilistic transition systems, translated compositionally into safe
labeled Petri nets, solved through embedded and full discrete-time Markov
chains, and reduced modulo step stochastic bisimulation.
"""

from .expr import (
    Action,
    Activity,
    Multiset,
    Relabeling,
    StaticExpr,
    DynamicExpr,
    is_regular,
    sync_activities,
    sync_parts,
)
from .parser import ModelFile, ParseError, parse_dynamic, parse_model, parse_static, serialize
from .opsem import (
    Engine,
    SemanticsError,
    StateSpaceLimit,
    TransitionSystem,
    build_ts,
    inaction_closure,
    ts_isomorphic,
)
from .netsem import box_of, build_rg, check_safe_clean
from .markov import AnalysisError, Chain, solve_chain
from .equiv import bisim_equivalent, largest_autobisim, quotient
from .models import bundled_model_names, load_model

__all__ = [
    "Action", "Activity", "Multiset", "Relabeling", "StaticExpr", "DynamicExpr",
    "is_regular", "sync_activities", "sync_parts",
    "ModelFile", "ParseError", "parse_dynamic", "parse_model", "parse_static", "serialize",
    "Engine", "SemanticsError", "StateSpaceLimit", "TransitionSystem",
    "build_ts", "inaction_closure", "ts_isomorphic",
    "box_of", "build_rg", "check_safe_clean",
    "AnalysisError", "Chain", "solve_chain",
    "bisim_equivalent", "largest_autobisim", "quotient",
    "bundled_model_names", "load_model",
]

__version__ = "0.1.0"
