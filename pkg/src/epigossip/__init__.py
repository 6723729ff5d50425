"""Model checking and simulation of epistemic gossip protocols."""

from .core import (
    Call,
    GossipError,
    GossipSituation,
    Mode,
    Topology,
    allowed_calls,
    apply_call,
    apply_sequence,
    is_expert,
    parse_call,
    parse_calls,
    render_calls,
)
from .epistemic import (
    EpistemicState,
    ThreeValued,
    abstract,
    eval_bounded,
    eval_exact,
    initial_state,
    related,
    step_state,
)
from .explorer import (
    Outcome,
    Property,
    StateGraph,
    Verdict,
    Witness,
    build_graph,
    check,
    check_correctness,
    check_fair_termination,
    check_termination,
    extremal_terminating_lengths,
    find_scripted_computation,
)
from .logic import Guard, instantiate, k_depth, normalize_guard, parse_formula, render
from .protocol import Protocol, builtin, enabled_rules, load_protocol, parse_protocol
from .sim import RoundRobin, Scripted, Trace, UniformRandom, fairness_audit, run

__all__ = [name for name in dir() if not name.startswith("_")]
