import pytest

from epigossip.core import Mode, Topology, is_expert, parse_calls, render_calls
from epigossip.epistemic import abstract, eval_exact
from epigossip.explorer import (
    Outcome,
    Property,
    ResourceLimitExceeded,
    Witness,
    build_graph,
    check,
    check_correctness,
    check_fair_termination,
    check_termination,
    extremal_terminating_lengths,
    find_scripted_computation,
    has_cycle,
    is_fair_lasso,
    is_lasso,
    replay,
    terminating_sequences,
    unfold,
)
from epigossip.logic import Knows, instantiate, parse_formula, subformulas
from epigossip.protocol import BUILTIN_SOURCES, builtin, enabled_calls

import invariants
import oracles
from conftest import graph

MODES = list(Mode)
mode_ids = lambda m: m.value  # noqa: E731


def text(calls, style="numbers"):
    return render_calls(calls, style)


def assert_replays(p, v):
    """Fails verdicts carry witnesses the protocol really produces."""
    w = v.witness
    if w.is_lasso:
        assert is_lasso(p, w)
    else:
        r = find_scripted_computation(p, w.calls)
        assert r.valid and r.leaf and not r.all_expert


# -- building ------------------------------------------------------------------

def test_lns_graph_is_acyclic_with_expert_leaves():
    g = graph("LNS", 3)
    assert g.complete and not has_cycle(g)
    assert {str(g.state(v).situation) for v in g.leaves} == {"ABC.ABC.ABC"}


def test_r3_repeats_its_first_call():
    p = builtin("R3", 3)
    assert is_lasso(p, Witness(parse_calls("1<->2", 3), parse_calls("1<->2", 3)))


def test_ex28_push_orderings():
    g = graph("EX28", 3, Mode.PUSH)
    runs = {text(c, "letters") for c in terminating_sequences(g)}
    assert runs == {"a->c;b->c;c->a;c->b", "a->c;b->c;c->b;c->a",
                    "b->c;a->c;c->a;c->b", "b->c;a->c;c->b;c->a"}


def test_graph_numbering_is_deterministic():
    a = build_graph(builtin("HMS", 3, Mode.PULL))
    b = build_graph(builtin("HMS", 3, Mode.PULL))
    assert a.keys == b.keys and a.succ == b.succ


def test_edges_are_enabled_calls():
    for name in ("HMS", "R4"):
        g = graph(name, 3, Mode.PULL)
        p = g.protocol
        for v in range(len(g)):
            enabled = set(enabled_calls(p, g.state(v)))
            assert {(e[0], e[1]) for e in g.succ[v]} == enabled


def test_resource_limit_is_reported():
    g = build_graph(builtin("HMS", 3, Mode.PUSH), max_states=10)
    assert not g.complete and g.limit_reason == "max_states=10"
    for prop in Property:
        v = check(g, prop)
        assert v.outcome is Outcome.RESOURCE_LIMITED
        assert v.details["reason"] == "max_states=10"
    with pytest.raises(ResourceLimitExceeded):
        extremal_terminating_lengths(g)


def test_depth_limit_is_reported():
    g = build_graph(builtin("LNS", 4), max_depth=2)
    assert not g.complete and g.limit_reason == "max_depth=2"
    assert check_correctness(g).outcome is Outcome.RESOURCE_LIMITED


# -- verdicts ------------------------------------------------------------------

def test_correctness_examples():
    assert check_correctness(graph("R1", 4, Mode.PUSH)).holds
    v = check_correctness(graph("R1", 4))
    assert v.outcome is Outcome.FAILS
    assert_replays(graph("R1", 4).protocol, v)
    v = check_correctness(graph("R2", 5))
    assert text(v.witness.calls) == "1<->2;2<->3;3<->4;4<->5;5<->1;1<->2"
    assert v.details["missing"] == {2: [4]}


def test_termination_examples():
    assert check_termination(graph("LNS", 4)).holds
    v = check_termination(graph("LNS", 3, Mode.PUSH))
    assert v.outcome is Outcome.FAILS and len(v.witness.cycle) == 1
    call = v.witness.cycle[0]
    p = builtin("LNS", 3, Mode.PUSH)
    st = replay(p, v.witness.prefix)
    assert p.frame.step(st, call).situation.secrets[call.caller] == st.situation.secrets[call.caller]
    v = check_termination(graph("R4", 3, Mode.PULL))
    assert text(v.witness.cycle) == "1<-2"


def test_fair_termination_examples():
    assert check_fair_termination(graph("R3", 3)).holds
    v = check_fair_termination(graph("HMS", 3, Mode.PULL))
    assert v.outcome is Outcome.FAILS
    p = builtin("HMS", 3, Mode.PULL)
    assert is_fair_lasso(p, v.witness)
    (callee,) = {c.callee for c in v.witness.cycle}
    assert {c.caller for c in v.witness.cycle} == {0, 1, 2} - {callee}
    block = parse_calls("a<-c;b<-c", 3)
    assert is_fair_lasso(p, Witness(block, block))


@pytest.mark.parametrize("name", list(BUILTIN_SOURCES))
@pytest.mark.parametrize("mode", MODES, ids=mode_ids)
def test_witnesses_replay_and_termination_implies_fair_termination(name, mode):
    for n in (3, 4) if name != "EX28" else (3,):
        g = graph(name, n, mode)
        p = g.protocol
        verdicts = {prop: check(g, prop) for prop in Property}
        for v in verdicts.values():
            if v.outcome is Outcome.FAILS:
                assert_replays(p, v)
        if verdicts[Property.FAIR_TERMINATION].outcome is Outcome.FAILS:
            assert is_fair_lasso(p, verdicts[Property.FAIR_TERMINATION].witness)
        if verdicts[Property.TERMINATION].holds:
            assert verdicts[Property.FAIR_TERMINATION].holds


def test_extremal_lengths():
    lns4 = extremal_terminating_lengths(graph("LNS", 4))
    assert (lns4.min, lns4.max) == (4, 6)
    lns3 = extremal_terminating_lengths(graph("LNS", 3))
    assert (lns3.min, lns3.max) == (3, 3)
    ex = extremal_terminating_lengths(graph("EX28", 3, Mode.PUSH))
    assert (ex.min, ex.max) == (4, 4)
    r3 = extremal_terminating_lengths(graph("R3", 3))
    assert r3.unbounded and r3.min is not None


def test_scripted_computations():
    r = find_scripted_computation(builtin("LNS", 5), parse_calls("a<->e;a<->b;c<->d;a<->c;b<->d;e<->b", 5))
    assert r.valid and r.leaf and r.all_expert and r.length == 6
    r = find_scripted_computation(builtin("R2", 5), parse_calls("1<->2;2<->3;3<->4;4<->5;5<->1;1<->2", 5))
    assert r.valid and r.leaf and not r.all_expert
    r = find_scripted_computation(builtin("LNS", 3), parse_calls("a<->b;a<->b", 3))
    assert not r.valid and r.failing_step == 2


# -- quotient soundness ----------------------------------------------------------

def direct_tree(p, depth):
    """Computation tree prefixes from scratch: every node re-abstracts its whole sequence."""
    out = set()
    stack = [()]
    while stack:
        c = stack.pop()
        out.add(c)
        if len(c) < depth:
            st = abstract(c, p.n, p.mode, p.topology)
            stack.extend(c + (call,) for _, call in enabled_calls(p, st))
    return out


def guard_disagreements(p, c):
    """Guard values at ``c`` contradicted by the literal oracle."""
    st = abstract(c, p.n, p.mode, p.topology)
    bad = []
    for prog in p.programs:
        for rule in prog.rules:
            for k in {g for g in subformulas(rule.guard.body) if isinstance(g, Knows)}:
                refuted = oracles.bounded(k, c, p.mode, p.topology).value is False
                if refuted == eval_exact(k, st):
                    bad.append((c, k))
    return bad


@pytest.mark.parametrize("name", list(BUILTIN_SOURCES))
@pytest.mark.parametrize("mode", MODES, ids=mode_ids)
def test_quotient_unfolds_to_the_computation_tree(name, mode):
    p = builtin(name, 3, mode)
    g = graph(name, 3, mode, symmetry=False)
    tree = direct_tree(p, 6)
    assert unfold(g, 6) == tree
    short = [c for c in tree if len(c) <= (2 if p.topology is Topology.RING else 1)]
    assert [b for c in short for b in guard_disagreements(p, c)] == []


@pytest.mark.parametrize("name,n,mode", [
    ("LNS", 4, Mode.PUSH), ("HMS", 3, Mode.PULL), ("HMS", 4, Mode.PUSH_PULL),
    ("R3", 4, Mode.PUSH_PULL), ("R4", 4, Mode.PULL), ("R2", 5, Mode.PUSH_PULL), ("EX28", 3, Mode.PUSH_PULL),
], ids=str)
def test_symmetry_reduction_keeps_verdicts(name, n, mode):
    plain = graph(name, n, mode, symmetry=False)
    reduced = graph(name, n, mode, symmetry=True)
    assert reduced.reduced and len(reduced) < len(plain)
    p = plain.protocol
    for prop in Property:
        a, b = check(plain, prop), check(reduced, prop)
        assert a.outcome is b.outcome, prop
        if b.outcome is Outcome.FAILS:
            assert_replays(p, b)
            if not b.witness.is_lasso:
                assert len(b.witness.calls) == len(a.witness.calls)


# -- protocol-specific invariants ----------------------------------------------------

@pytest.mark.parametrize("n", [3, 4])
def test_lns_calls_each_pair_at_most_once(n):
    assert invariants.pair_once_violations(graph("LNS", n, symmetry=False)) == []


@pytest.mark.parametrize("n", [3, 4])
def test_r1_push_every_call_teaches_something(n):
    assert invariants.informative_call_violations(graph("R1", n, Mode.PUSH)) == []


@pytest.mark.parametrize("mode", MODES, ids=mode_ids)
def test_r3_disabled_iff_expert_and_successor_informed(mode):
    assert invariants.r3_disabled_violations(graph("R3", 3, mode)) == []


def test_r4_pull_disabled_iff_successor_known_to_share():
    assert invariants.r4_disabled_violations(graph("R4", 3, Mode.PULL)) == []


def formula_at(text_, i, n=3):
    return instantiate(parse_formula(text_), {"i": i}, n)


def test_r4_pull_fair_cycle_is_genuine():
    """The fair cycle found for R4 in pull mode holds up under the literal semantics.

    Every caller's guard, in its unnormalized form, is definitely true at
    each step of two unrollings, so the cycle really is a fair computation.
    """
    v = check_fair_termination(graph("R4", 3, Mode.PULL))
    assert v.outcome is Outcome.FAILS
    w = v.witness
    guard = "exists j: (F[i] secret(j) and not K[i] F[i+1] secret(j))"
    seq = w.prefix + w.cycle + w.cycle
    for k in range(len(w.prefix), len(seq)):
        caller = seq[k].caller
        r = oracles.bounded(formula_at(guard, caller), seq[:k], Mode.PULL, Topology.RING)
        assert r.value is True, (k, r)
    assert {c.caller for c in w.cycle} == {0, 1, 2}


def test_r3_push_four_agents_has_a_fair_loop():
    """Agents 1, 2 and 4 fall silent while agent 3 keeps pushing without effect."""
    v = check_fair_termination(graph("R3", 4, Mode.PUSH))
    assert v.outcome is Outcome.FAILS
    p = builtin("R3", 4, Mode.PUSH)
    st = replay(p, v.witness.prefix)
    assert st is not None and is_fair_lasso(p, v.witness)
    assert not all(is_expert(a, st.situation) for a in range(4))
