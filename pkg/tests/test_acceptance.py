"""Acceptance criteria, one PASS/FAIL line each.

Every criterion is computed as a list of checks.  A check marked ``known_gap``
is one we could not reproduce: the checker finds a replayable
counterexample.  Those are asserted in strict xfail tests, so pytest stays
green while the printed line still reads FAIL.
"""

import functools
from dataclasses import dataclass

import pytest

from epigossip.core import GossipSituation, Mode, apply_sequence, parse_calls, render_calls
from epigossip.explorer import (
    Outcome,
    Property,
    check,
    extremal_terminating_lengths,
    find_scripted_computation,
    is_fair_lasso,
    is_lasso,
    terminating_sequences,
)
from epigossip.protocol import builtin, parse_protocol
from epigossip.sim import Scripted, Stop, run

import invariants
import oracles
from conftest import graph
from formulas import depth_one_suite

PP, PUSH, PULL = Mode.PUSH_PULL, Mode.PUSH, Mode.PULL
T, FT, C = Property.TERMINATION, Property.FAIR_TERMINATION, Property.CORRECTNESS


@dataclass(frozen=True)
class Check:
    label: str
    ok: bool
    detail: str = ""
    known_gap: bool = False


def verdict(name, n, mode, prop):
    return check(graph(name, n, mode), prop)


def outcome(name, n, mode, prop):
    return verdict(name, n, mode, prop).outcome


def yes_no(name, n, mode, prop):
    return {Outcome.HOLDS: "yes", Outcome.FAILS: "no"}.get(outcome(name, n, mode, prop), "?")


def ring(calls):
    return render_calls(calls, "numbers")


def emit(capsys, number, checks):
    failed = [c for c in checks if not c.ok]
    status = "PASS" if not failed else "FAIL"
    line = f"criterion {number}: {status} ({len(checks) - len(failed)}/{len(checks)} checks)"
    if failed:
        line += " | " + "; ".join(f"{c.label}: {c.detail}" for c in failed)
    with capsys.disabled():
        print(f"\n{line}")


def assert_attainable(checks):
    bad = [c for c in checks if not c.ok and not c.known_gap]
    assert not bad, bad
    surprises = [c for c in checks if c.known_gap and c.ok]
    assert not surprises, f"documented gaps now pass, update the ledger: {surprises}"


def assert_complete(checks):
    bad = [c for c in checks if not c.ok]
    assert not bad, "; ".join(f"{c.label}: {c.detail}" for c in bad)


# -- 1: termination matrix -----------------------------------------------------------

TABLE = {  # (protocol, mode) -> (termination, fair termination)
    ("LNS", PP): ("yes", "yes"), ("LNS", PUSH): ("no", "no"), ("LNS", PULL): ("yes", "yes"),
    ("HMS", PP): ("yes", "yes"), ("HMS", PUSH): ("yes", "yes"), ("HMS", PULL): ("no", "no"),
    ("R3", PP): ("no", "yes"), ("R3", PUSH): ("no", "yes"), ("R3", PULL): ("no", "yes"),
    ("R4", PP): ("yes", "yes"), ("R4", PUSH): ("yes", "yes"), ("R4", PULL): ("no", "yes"),
}
# Fair lassos exist in these cells, verified by replay and by the literal oracle.
FAIR_GAPS = {("R4", PULL, 3), ("R4", PULL, 4), ("R3", PUSH, 4)}


@functools.cache
def criterion_1():
    checks = []
    for n in (3, 4):
        for (name, mode), expected in TABLE.items():
            for prop, want in zip((T, FT), expected):
                got = yes_no(name, n, mode, prop)
                gap = prop is FT and (name, mode, n) in FAIR_GAPS
                checks.append(Check(f"{name} n={n} {mode.value} {prop.value}", got == want,
                                    f"expected {want}, got {got}", gap))
    return checks


def test_criterion_1_termination_matrix(capsys):
    checks = criterion_1()
    assert len(checks) == 48
    emit(capsys, 1, checks)
    assert_attainable(checks)


@pytest.mark.xfail(strict=True, reason="fair lassos refute R4 pull (n=3, 4) and R3 push (n=4) fair termination")
def test_criterion_1_complete():
    assert_complete(criterion_1())


# -- 2: R1 ----------------------------------------------------------------------

@functools.cache
def criterion_2():
    checks = []
    for n in (3, 4):
        for prop in (T, C):
            got = outcome("R1", n, PUSH, prop)
            checks.append(Check(f"R1 push n={n} {prop.value}", got is Outcome.HOLDS, got.value))
    v = verdict("R1", 4, PP, C)
    checks.append(Check("R1 push-pull n=4 correctness fails", v.outcome is Outcome.FAILS, v.outcome.value))
    found = ring(v.witness.calls) if v.witness else "-"
    checks.append(Check("R1 push-pull n=4 witness", found == "1<->2;2<->3;3<->4",
                        f"expected 1<->2;2<->3;3<->4, got {found}", known_gap=True))
    if v.witness:
        r = find_scripted_computation(builtin("R1", 4), v.witness.calls)
        checks.append(Check("R1 push-pull n=4 witness is a non-expert leaf",
                            r.valid and r.leaf and not r.all_expert, str(r.failing_step)))
    stated = find_scripted_computation(builtin("R1", 4), parse_calls("1<->2;2<->3;3<->4", 4))
    checks.append(Check("stated R1 sequence is a computation", stated.valid,
                        f"call {stated.failing_step} is disabled", known_gap=True))
    v = verdict("R1", 3, PULL, T)
    lasso = v.witness
    checks.append(Check("R1 pull n=3 single-call lasso",
                        v.outcome is Outcome.FAILS and lasso.is_lasso and len(lasso.cycle) == 1
                        and is_lasso(builtin("R1", 3, PULL), lasso),
                        ring(lasso.calls) if lasso else v.outcome.value))
    return checks


def test_criterion_2_r1(capsys):
    checks = criterion_2()
    emit(capsys, 2, checks)
    assert_attainable(checks)


@pytest.mark.xfail(strict=True, reason="(1,2),(2,3),(3,4) is not a computation of R1: agent 2 is disabled after (1,2)")
def test_criterion_2_complete():
    assert_complete(criterion_2())


# -- 3: R2 ----------------------------------------------------------------------

@functools.cache
def criterion_3():
    checks = []
    for n in (3, 4):
        got = outcome("R2", n, PP, C)
        checks.append(Check(f"R2 n={n} correctness", got is Outcome.HOLDS, got.value))
    v = verdict("R2", 5, PP, C)
    found = ring(v.witness.calls) if v.witness else "-"
    checks.append(Check("R2 n=5 fails", v.outcome is Outcome.FAILS, v.outcome.value))
    checks.append(Check("R2 n=5 six-call witness ending in (1,2)",
                        found == "1<->2;2<->3;3<->4;4<->5;5<->1;1<->2", found))
    checks.append(Check("agent 3 lacks secret 5", v.details.get("missing") == {2: [4]},
                        str(v.details.get("missing"))))
    v = verdict("R2", 3, PP, T)
    cycle = ring(v.witness.cycle) if v.witness else "-"
    checks.append(Check("R2 n=3 lasso (1,2)", v.outcome is Outcome.FAILS and cycle == "1<->2", cycle))
    return checks


def test_criterion_3_r2(capsys):
    checks = criterion_3()
    emit(capsys, 3, checks)
    assert_complete(checks)


# -- 4: fair termination of R3 and R4 --------------------------------------------------

@functools.cache
def criterion_4():
    checks = []
    for n in (3, 4):
        for name, mode in (("R3", PP), ("R3", PUSH), ("R3", PULL), ("R4", PULL)):
            t = outcome(name, n, mode, T)
            checks.append(Check(f"{name} {mode.value} n={n} termination fails", t is Outcome.FAILS, t.value))
            v = verdict(name, n, mode, FT)
            detail = v.outcome.value
            if v.outcome is Outcome.FAILS:
                p = builtin(name, n, mode)
                detail += f", fair lasso {ring(v.witness.prefix)} | {ring(v.witness.cycle)}"
                detail += " (replays)" if is_fair_lasso(p, v.witness) else " (does not replay)"
            checks.append(Check(f"{name} {mode.value} n={n} fair termination", v.holds, detail,
                                (name, mode, n) in FAIR_GAPS))
    for n in (3, 4, 5):
        for mode in (PP, PUSH):
            for prop in (T, C):
                got = outcome("R4", n, mode, prop)
                checks.append(Check(f"R4 {mode.value} n={n} {prop.value}", got is Outcome.HOLDS, got.value))
    return checks


def test_criterion_4_fair_termination(capsys):
    checks = criterion_4()
    emit(capsys, 4, checks)
    assert_attainable(checks)


@pytest.mark.xfail(strict=True, reason="fair lassos refute R4 pull (n=3, 4) and R3 push (n=4) fair termination")
def test_criterion_4_complete():
    assert_complete(criterion_4())


# -- 5: LNS extremal lengths --------------------------------------------------------

def test_criterion_5_lns_lengths(capsys):
    n = 4
    ext = extremal_terminating_lengths(graph("LNS", n))
    r = find_scripted_computation(builtin("LNS", 5), parse_calls("a<->e;a<->b;c<->d;a<->c;b<->d;e<->b", 5))
    checks = [
        Check("LNS n=4 min = 2n-4", ext.min == 2 * n - 4 == 4, str(ext.min)),
        Check("LNS n=4 max = n(n-1)/2", ext.max == n * (n - 1) // 2 == 6, str(ext.max)),
        Check("LNS n=5 sequence is a valid all-expert leaf of length 6",
              r.valid and r.leaf and r.all_expert and r.length == 6 == 2 * 5 - 4,
              f"valid={r.valid} leaf={r.leaf} all_expert={r.all_expert} length={r.length}"),
    ]
    emit(capsys, 5, checks)
    assert_complete(checks)


# -- 6: golden trace ----------------------------------------------------------------

# Any agent may call anyone at any time; the guard is always true.
UNRESTRICTED = """protocol Any { mode: push-pull; topology: complete;
  agent i { forall j != i: rule K[i] F[i] secret(i) => call(i, j); } }"""


def test_criterion_6_golden_trace(capsys):
    p = parse_protocol(UNRESTRICTED, 3)
    calls = parse_calls("ab;ca;ab", 3)
    t = run(p, Scripted(calls), 10)
    got = [str(s) for s in t.situations]
    want = ["AB.AB.C", "ABC.AB.ABC", "ABC.ABC.ABC"]
    folded = [str(apply_sequence(calls[:k], GossipSituation.root(3))) for k in (1, 2, 3)]
    checks = [
        Check("scripted situations", got == want and t.stop is Stop.SCRIPT_END, str(got)),
        Check("left fold of the calls", folded == want, str(folded)),
    ]
    emit(capsys, 6, checks)
    assert_complete(checks)


# -- 7: EX28 ----------------------------------------------------------------------

def test_criterion_7_ex28(capsys):
    g = graph("EX28", 3, PUSH)
    runs = {render_calls(c) for c in terminating_sequences(g)}
    expected_runs = {f"{x};{y};{u};{w}" for x, y in (("a->c", "b->c"), ("b->c", "a->c"))
                     for u, w in (("c->a", "c->b"), ("c->b", "c->a"))}
    v = verdict("EX28", 3, PP, T)
    cycle = render_calls(v.witness.cycle) if v.witness else "-"
    checks = [
        Check("push termination", outcome("EX28", 3, PUSH, T) is Outcome.HOLDS, ""),
        Check("push correctness", outcome("EX28", 3, PUSH, C) is Outcome.HOLDS, ""),
        Check("leaves at depth 4", {g.depth[v_] for v_ in g.leaves} == {4}, str({g.depth[v_] for v_ in g.leaves})),
        Check("exactly the described orderings", runs == expected_runs, str(sorted(runs))),
        Check("push-pull lasso repeats a<->c", v.outcome is Outcome.FAILS and cycle in ("a<->c", "c<->a"), cycle),
    ]
    emit(capsys, 7, checks)
    assert_complete(checks)


# -- 8: semantics oracles -------------------------------------------------------------

def test_criterion_8_oracles(capsys):
    suite = depth_one_suite(200)
    checks = []
    for mode in Mode:
        bad = [b for f in suite for b in oracles.disagreements(f, mode)]
        checks.append(Check(f"exact vs bounded(4), {mode.value}, {len(suite)} formulas", not bad,
                            f"{len(bad)} disagreements"))
        for a in range(3):
            bad = oracles.relation_mismatches(mode, a)
            checks.append(Check(f"related vs rule closure, {mode.value}, agent {a}", not bad,
                                f"{len(bad)} mismatches"))
    emit(capsys, 8, checks)
    assert_complete(checks)


# -- 9: property suites -------------------------------------------------------------

def test_criterion_9_properties(capsys):
    checks = []
    for mode in Mode:
        bad = invariants.equivalence_violations(mode)
        checks.append(Check(f"equivalence laws {mode.value}", not bad, f"{len(bad)} violations"))
        bad = invariants.secret_agreement_violations(mode)
        checks.append(Check(f"secret agreement {mode.value}", not bad, f"{len(bad)} violations"))
    checks.append(Check("(ab,bc,ab) vs (ab,bc,ac) distinguishable", invariants.distinguishable_pair()))
    bad = invariants.convergence_violations()
    checks.append(Check("convergence of long random sequences", not bad, f"{len(bad)} violations"))
    produced = [(name, n, mode) for n in (3, 4) for name, mode in TABLE]
    produced += [(name, 3, mode) for name in ("R1", "R2", "EX28") for mode in Mode]
    bad = [cell for cell in produced
           if outcome(*cell, T) is Outcome.HOLDS and outcome(*cell, FT) is not Outcome.HOLDS]
    checks.append(Check(f"T implies FT over {len(produced)} cells", not bad, str(bad)))
    for n in (3, 4):
        bad = invariants.pair_once_violations(graph("LNS", n, symmetry=False))
        checks.append(Check(f"LNS pair-once n={n}", not bad, f"{len(bad)} paths"))
        bad = invariants.informative_call_violations(graph("R1", n, PUSH))
        checks.append(Check(f"R1 push measure grows n={n}", not bad, f"{len(bad)} edges"))
    for mode in Mode:
        bad = invariants.r3_disabled_violations(graph("R3", 3, mode))
        checks.append(Check(f"R3 disabled-equivalence {mode.value}", not bad, f"{len(bad)} nodes"))
    bad = invariants.r4_disabled_violations(graph("R4", 3, PULL))
    checks.append(Check("R4 pull disabled-equivalence", not bad, f"{len(bad)} nodes"))
    emit(capsys, 9, checks)
    assert_complete(checks)
