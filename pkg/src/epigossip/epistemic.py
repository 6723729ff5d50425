"""Gossip-model semantics.

Two independent routes to the truth of a guard:

* the *abstraction*: an :class:`EpistemicState` keeps the actual situation
  plus, per agent ``a``, the set of situations ``{d(root) : d ~a c}``.
  Formulas whose ``K`` operators are not nested are decided exactly on it.
* the *oracle*: :func:`related_sequences` enumerates ``d ~a c`` straight
  from the inductive rules, and :func:`eval_bounded` evaluates any formula
  over those sequences up to a length bound.

Situations inside the engine are packed ints (bit ``a*n + p`` set when agent
``a`` holds secret ``p``).
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .core import (
    Call,
    GossipError,
    GossipSituation,
    Mode,
    Topology,
    allowed_calls,
    apply_call,
    apply_sequence,
    check_agents,
    is_allowed,
)
from .logic import And, Familiar, Formula, FormulaError, Knows, Not, Or, is_ground, k_depth

_KIND = {Mode.PUSH_PULL: 0, Mode.PUSH: 1, Mode.PULL: 2}


class DepthError(FormulaError):
    """Raised when exact evaluation is asked for nested knowledge."""


class Frame:
    """Interning and memo tables for one ``(n, mode, topology)`` gossip model.

    Tables only memoize pure functions, so sharing a frame never changes a
    result.
    """

    def __init__(self, n: int, mode: Mode, topology: Topology):
        check_agents(n)
        self.n = n
        self.mode = mode
        self.topology = topology
        self.full = (1 << n) - 1
        self.calls = allowed_calls(topology, mode, n)
        self.index = {c: i for i, c in enumerate(self.calls)}
        kind = _KIND[mode]
        self._ops = [(c.caller * n, c.callee * n, kind) for c in self.calls]
        self._parts = [(c.caller, c.callee) for c in self.calls]
        self._without = [
            [op for op, c in zip(self._ops, self.calls) if not c.involves(x)] for x in range(n)
        ]
        self._interned: dict[frozenset, frozenset] = {}
        self._vid: dict[frozenset, int] = {}
        self._views: list[frozenset] = []
        self._step_memo: dict[tuple, frozenset] = {}
        self._compiled: dict[Formula, Callable] = {}
        self.root = GossipSituation.root(n).code()

    # -- situation codes --------------------------------------------------

    def apply(self, code: int, i: int) -> int:
        sa, sb, kind = self._ops[i]
        full = self.full
        u = ((code >> sa) | (code >> sb)) & full
        if kind == 0:
            return code | (u << sa) | (u << sb)
        if kind == 1:
            return code | (u << sb)
        return code | (u << sa)

    def component(self, code: int, a: int) -> int:
        return (code >> (a * self.n)) & self.full

    def close(self, seeds: Iterable[int], x: int) -> frozenset:
        """Least superset of ``seeds`` closed under every call without ``x``."""
        ops = self._without[x]
        full = self.full
        seen = set(seeds)
        stack = list(seen)
        while stack:
            s = stack.pop()
            for sa, sb, kind in ops:
                u = ((s >> sa) | (s >> sb)) & full
                if kind == 0:
                    t = s | (u << sa) | (u << sb)
                elif kind == 1:
                    t = s | (u << sb)
                else:
                    t = s | (u << sa)
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        return self.intern(frozenset(seen))

    def intern(self, view: frozenset) -> frozenset:
        view = self._interned.setdefault(view, view)
        if view not in self._vid:
            self._vid[view] = len(self._views)
            self._views.append(view)
        return view

    @property
    def distinct_views(self) -> int:
        return len(self._views)

    def view_id(self, view: frozenset) -> int:
        return self._vid[self.intern(view)]

    def view(self, vid: int) -> frozenset:
        return self._views[vid]

    # -- states -------------------------------------------------------------
    #
    # The explorer works on flat keys ``(code, vid_0, ..., vid_{n-1})``, where
    # ``vid_a`` numbers agent ``a``'s interned knowledge set.

    def initial(self) -> "EpistemicState":
        views = tuple(self.close((self.root,), a) for a in range(self.n))
        return EpistemicState(self.root, views, self)

    def key_of(self, st: "EpistemicState") -> tuple:
        return (st.code,) + tuple(self._vid[self.intern(v)] for v in st.views)

    def state_of(self, key: tuple) -> "EpistemicState":
        views = self._views
        return EpistemicState(key[0], tuple(views[v] for v in key[1:]), self)

    def step(self, st: "EpistemicState", call: Call) -> "EpistemicState":
        i = self.index.get(call)
        if i is None:
            raise GossipError(f"call {call} is not allowed on a {self.topology.value} of {self.n} agents")
        return self.state_of(self.successor(self.key_of(st), i))

    def successor(self, key: tuple, i: int) -> tuple:
        """Key reached from ``key`` by allowed call number ``i``."""
        n, full = self.n, self.full
        code = self.apply(key[0], i)
        out = list(key)
        out[0] = code
        for x in self._parts[i]:
            target = (code >> (x * n)) & full
            memo_key = (key[x + 1], i, target)
            new = self._step_memo.get(memo_key)
            if new is None:
                shift = x * n
                # In push-pull ab and ba have the same effect, so the calls
                # compatible with the performed one all produce the same images.
                cands = []
                for t in self._views[key[x + 1]]:
                    t2 = self.apply(t, i)
                    if (t2 >> shift) & full == target:
                        cands.append(t2)
                new = self._step_memo[memo_key] = self._vid[self.close(cands, x)]
            out[x + 1] = new
        return tuple(out)

    # -- evaluation ---------------------------------------------------------

    def compile(self, f: Formula) -> Callable[[int, tuple], bool]:
        """Compile a ground formula of K-depth at most 1 to ``pred(code, views)``."""
        fn = self._compiled.get(f)
        if fn is None:
            if not is_ground(f):
                raise FormulaError("only ground formulas can be evaluated; instantiate first")
            if k_depth(f) > 1:
                raise DepthError("exact evaluation supports K-depth <= 1; use eval_bounded")
            env: dict[str, object] = {}
            src = self._source(f, env)
            fn = eval(f"lambda s, v: {src}", env)  # noqa: S307 - source built from the AST above
            self._compiled[f] = fn
        return fn

    def _source(self, f: Formula, env: dict) -> str:
        if isinstance(f, Familiar):
            self._check(f.agent, f.owner)
            return f"(s & {1 << (f.agent * self.n + f.owner)} != 0)"
        if isinstance(f, Not):
            return f"(not {self._source(f.body, env)})"
        if isinstance(f, And):
            return f"({self._source(f.left, env)} and {self._source(f.right, env)})"
        if isinstance(f, Or):
            return f"({self._source(f.left, env)} or {self._source(f.right, env)})"
        if isinstance(f, Knows):
            self._check(f.agent)
            body = eval(f"lambda s: {self._source(f.body, env)}", {})  # noqa: S307
            name = f"k{len(env)}"
            env[name] = _knows_memo(body)
            return f"{name}(v[{f.agent}])"
        raise FormulaError(f"unsupported node {type(f).__name__}")

    def _check(self, *agents: int) -> None:
        for a in agents:
            if not 0 <= a < self.n:
                raise FormulaError(f"agent index {a} out of range for n={self.n}")


def _knows_memo(body: Callable[[int], bool]) -> Callable[[frozenset], bool]:
    cache: dict[frozenset, bool] = {}

    def knows(view: frozenset) -> bool:
        r = cache.get(view)
        if r is None:
            r = cache[view] = all(body(t) for t in view)
        return r

    return knows


@functools.lru_cache(maxsize=None)
def get_frame(n: int, mode: Mode, topology: Topology = Topology.COMPLETE) -> Frame:
    return Frame(n, mode, topology)


@dataclass(frozen=True)
class KnowledgeSet:
    owner: int
    situations: frozenset  # of GossipSituation


@dataclass(frozen=True, slots=True)
class EpistemicState:
    """Finite abstraction of a call sequence ``c``.

    ``code`` is ``c(root)``; ``views[a]`` is every situation agent ``a``
    considers possible after ``c``.  Two sequences with equal states satisfy
    the same depth-1 formulas and have the same successors.
    """

    code: int
    views: tuple
    frame: Frame = field(compare=False, repr=False)

    @property
    def n(self) -> int:
        return self.frame.n

    @property
    def situation(self) -> GossipSituation:
        return GossipSituation.from_code(self.code, self.frame.n)

    def knowledge(self, a: int) -> KnowledgeSet:
        n = self.frame.n
        return KnowledgeSet(a, frozenset(GossipSituation.from_code(t, n) for t in self.views[a]))

    def holds(self, f: Formula) -> bool:
        return eval_exact(f, self)


def initial_state(n: int, mode: Mode = Mode.PUSH_PULL, topology: Topology = Topology.COMPLETE) -> EpistemicState:
    return get_frame(n, mode, topology).initial()


def step_state(st: EpistemicState, call: Call) -> EpistemicState:
    if call.mode is not st.frame.mode:
        raise GossipError(f"{call.mode.value} call in a {st.frame.mode.value} model")
    return st.frame.step(st, call)


def abstract(c: Sequence[Call], n: int, mode: Mode = Mode.PUSH_PULL,
             topology: Topology = Topology.COMPLETE) -> EpistemicState:
    st = initial_state(n, mode, topology)
    for call in c:
        st = step_state(st, call)
    return st


def eval_exact(f: Formula, st: EpistemicState) -> bool:
    return st.frame.compile(f)(st.code, st.views)


# -- the indistinguishability relation ---------------------------------------

def _mode_of(*seqs: Sequence[Call]) -> Mode | None:
    modes = {c.mode for s in seqs for c in s}
    if len(modes) > 1:
        raise GossipError("sequences use different communication modes")
    return modes.pop() if modes else None


def compatible(c: Call, d: Call, a: int) -> bool:
    """Whether ``c`` and ``d`` may be matched for agent ``a`` (rule ii).

    Push-pull identifies ``ab`` with ``ba``.  In push and pull mode an agent
    knows whether she placed the call, so only identical calls match.
    """
    if not (c.involves(a) and d.involves(a)) or c.mode is not d.mode:
        return False
    if c.mode is Mode.PUSH_PULL:
        return c.partner(a) == d.partner(a)
    return c == d


def _projection(c: Sequence[Call], a: int, n: int) -> list[tuple[Call, frozenset]]:
    s = GossipSituation.root(n)
    out = []
    for call in c:
        s = apply_call(call, s)
        if call.involves(a):
            out.append((call, s.secrets[a]))
    return out


def related(c: Sequence[Call], d: Sequence[Call], a: int, n: int) -> bool:
    """Decide ``c ~a d``.

    Only ``a``'s own calls matter: both sequences must contain the same
    number of them, pairwise compatible, leaving ``a`` with the same
    secrets after each one.  Calls without ``a`` are free.
    """
    _mode_of(c, d)
    pc, pd = _projection(c, a, n), _projection(d, a, n)
    if len(pc) != len(pd):
        return False
    return all(compatible(x, y, a) and qx == qy for (x, qx), (y, qy) in zip(pc, pd))


# -- literal oracle ------------------------------------------------------------

def rule_closure(a: int, calls: Sequence[Call], max_len: int, n: int) -> set[tuple[tuple, tuple]]:
    """All pairs ``(c, d)`` with ``|c|, |d| <= max_len`` derivable by the rules.

    Breadth-first application of the base and step clauses; since every
    rule lengthens a side, pairs within the bound are derived from pairs
    within the bound, so the result is exact.
    """
    root = GossipSituation.root(n)
    sit: dict[tuple, GossipSituation] = {(): root}

    def at(seq: tuple) -> GossipSituation:
        s = sit.get(seq)
        if s is None:
            s = sit[seq] = apply_sequence(seq, root)
        return s

    silent = [e for e in calls if not e.involves(a)]
    own = [e for e in calls if e.involves(a)]
    frontier = [((), ())]
    seen = set(frontier)
    while frontier:
        nxt = []
        for c, d in frontier:
            new = []
            for e in silent:
                if len(c) < max_len:
                    new.append((c + (e,), d))
                if len(d) < max_len:
                    new.append((c, d + (e,)))
            if len(c) < max_len and len(d) < max_len:
                for e in own:
                    for e2 in own:
                        if compatible(e, e2, a):
                            c2, d2 = c + (e,), d + (e2,)
                            if at(c2).secrets[a] == at(d2).secrets[a]:
                                new.append((c2, d2))
            for pair in new:
                if pair not in seen:
                    seen.add(pair)
                    nxt.append(pair)
        frontier = nxt
    return seen


def related_sequences(c: Sequence[Call], a: int, calls: Sequence[Call], max_len: int,
                      n: int) -> list[tuple]:
    """Every ``d`` with ``c ~a d`` and ``|d| <= max_len``, shortest first.

    Derivations only append, so a derivation of ``(c, d)`` passes through
    pairs ``(prefix of c, prefix of d)``; the search tracks how much of ``c``
    has been consumed.
    """
    c = tuple(c)
    root = GossipSituation.root(n)
    silent = [e for e in calls if not e.involves(a)]
    own = [e for e in calls if e.involves(a)]
    start = (0, (), root, root)
    seen = {(0, ())}
    frontier = [start]
    found = []
    while frontier:
        nxt = []
        for k, d, sc, sd in frontier:
            if k == len(c):
                found.append(d)
            moves = []
            if k < len(c) and not c[k].involves(a):
                moves.append((k + 1, d, apply_call(c[k], sc), sd))
            if len(d) < max_len:
                for e in silent:
                    moves.append((k, d + (e,), sc, apply_call(e, sd)))
                if k < len(c) and c[k].involves(a):
                    sc2 = apply_call(c[k], sc)
                    for e in own:
                        if compatible(c[k], e, a):
                            sd2 = apply_call(e, sd)
                            if sc2.secrets[a] == sd2.secrets[a]:
                                moves.append((k + 1, d + (e,), sc2, sd2))
            for m in moves:
                key = (m[0], m[1])
                if key not in seen:
                    seen.add(key)
                    nxt.append(m)
        frontier = nxt
    order = {e: i for i, e in enumerate(calls)}
    found = sorted(set(found), key=lambda d: (len(d), [order[e] for e in d]))
    return found


@dataclass
class OracleCache:
    """Enumerated classes and situations, reusable across :func:`eval_bounded` calls.

    Only share one cache between calls with the same ``n``, mode and topology.
    """

    classes: dict = field(default_factory=dict)
    situations: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ThreeValued:
    """Outcome of bounded evaluation: ``value`` is True, False or None (unknown).

    ``witness`` is the related sequence that refuted a knowledge claim and
    so decided the value, when there is one.
    """

    value: bool | None
    witness: tuple | None = None

    @property
    def unknown(self) -> bool:
        return self.value is None

    def __str__(self) -> str:
        return {True: "true", False: "false", None: "unknown-at-bound"}[self.value]


def eval_bounded(f: Formula, c: Sequence[Call], bound: int, n: int,
                 mode: Mode = Mode.PUSH_PULL, topology: Topology = Topology.COMPLETE,
                 cache: OracleCache | None = None) -> ThreeValued:
    """Evaluate ``f`` at ``c`` straight from the truth definition.

    ``K[a] phi`` quantifies over the sequences ``d ~a c`` of length at most
    ``|c| + bound``.  A refuting ``d`` is conclusive; exhausting the search
    without one only yields unknown.

    ``cache`` carries the enumeration over to later calls.
    """
    if not is_ground(f):
        raise FormulaError("only ground formulas can be evaluated; instantiate first")
    c = tuple(c)
    found = _mode_of(c)
    if found is not None and found is not mode:
        raise GossipError(f"{found.value} sequence evaluated in a {mode.value} model")
    for call in c:
        if not is_allowed(call, topology, n):
            raise GossipError(f"call {call} not allowed on a {topology.value}")
    calls = allowed_calls(topology, mode, n)
    limit = len(c) + bound
    cache = OracleCache() if cache is None else cache
    classes, situations = cache.classes, cache.situations
    root = GossipSituation.root(n)

    def sit(seq: tuple) -> GossipSituation:
        s = situations.get(seq)
        if s is None:
            s = situations[seq] = apply_sequence(seq, root)
        return s

    def rec(g: Formula, seq: tuple) -> ThreeValued:
        if isinstance(g, Familiar):
            return ThreeValued(sit(seq).knows(g.agent, g.owner))
        if isinstance(g, Not):
            r = rec(g.body, seq)
            return ThreeValued(None if r.value is None else not r.value, r.witness)
        if isinstance(g, (And, Or)):
            decisive = isinstance(g, Or)  # value that settles the connective
            left = rec(g.left, seq)
            if left.value is decisive:
                return left
            right = rec(g.right, seq)
            if right.value is decisive:
                return right
            if left.value is None or right.value is None:
                return ThreeValued(None)
            return ThreeValued(not decisive)
        if isinstance(g, Knows):
            flat = k_depth(g.body) == 0
            key = (g.agent, seq, limit, flat)
            cls = classes.get(key)
            if cls is None:
                cls = related_sequences(seq, g.agent, calls, limit, n)
                if flat:
                    # a K-free body only sees d(root): keep the first d per situation
                    by_sit: dict[GossipSituation, tuple] = {}
                    for d in cls:
                        by_sit.setdefault(apply_sequence(d, root), d)
                    cls = list(by_sit.values())
                classes[key] = cls
            for d in cls:
                if rec(g.body, d).value is False:
                    return ThreeValued(False, d)
            return ThreeValued(None)
        raise FormulaError(f"unsupported node {type(g).__name__}")

    return rec(f, c)


def all_sequences(calls: Sequence[Call], max_len: int) -> Iterable[tuple]:
    for k in range(max_len + 1):
        yield from itertools.product(calls, repeat=k)
