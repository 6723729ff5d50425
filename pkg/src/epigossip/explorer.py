"""Exhaustive exploration of a protocol's abstract state graph.

States reached by different call sequences are merged when their
situation and all knowledge sets coincide, which keeps the graph finite.
Node ids follow breadth-first discovery with successors taken in
(agent, rule) order, so the path stored for each node is its
lexicographically least shortest path and every witness is reproducible.

Large graphs of symmetric protocols can be explored up to agent renaming:
each node then stands for a whole orbit of states, every edge records the
renaming that brought its target into canonical form, and witnesses are
translated back into concrete call sequences before they are reported.
"""

from __future__ import annotations

import enum
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .core import Call, GossipError, is_expert
from .epistemic import EpistemicState, Frame
from .protocol import Protocol, automorphisms, enabled_calls, enabled_rules

DEFAULT_MAX_STATES = 2_000_000
# Symmetric protocols switch to the reduced graph once the plain one grows past this.
SYMMETRY_THRESHOLD = 50_000


class Property(enum.Enum):
    CORRECTNESS = "correctness"
    TERMINATION = "termination"
    FAIR_TERMINATION = "fair-termination"


class Outcome(enum.Enum):
    HOLDS = "holds"
    FAILS = "fails"
    RESOURCE_LIMITED = "resource-limited"


@dataclass(frozen=True)
class Witness:
    """A leaf trace (``cycle`` empty) or a lasso ``prefix . cycle^omega``."""

    prefix: tuple[Call, ...]
    cycle: tuple[Call, ...] = ()

    @property
    def is_lasso(self) -> bool:
        return bool(self.cycle)

    @property
    def calls(self) -> tuple[Call, ...]:
        return self.prefix + self.cycle


@dataclass(frozen=True)
class Verdict:
    property: Property
    outcome: Outcome
    witness: Witness | None = None
    stats: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.outcome is Outcome.HOLDS


class ResourceLimitExceeded(GossipError):
    pass


def _inverse(sigma: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(sorted(range(len(sigma)), key=sigma.__getitem__))


class _Renaming:
    """Canonical forms of state keys under a group of agent permutations."""

    def __init__(self, frame: Frame, perms: list[tuple[int, ...]]):
        self.frame = frame
        self.perms = perms
        n = frame.n
        self._rows = [[self._row(s, q) for q in range(1 << n)] for s in perms]
        self._codes: dict[int, tuple[int, tuple[int, ...]]] = {}
        self._views: list[list[int]] = [[] for _ in perms]
        # position t of a renamed key comes from position order[k][t] of the original
        self._order = [[_inverse(s)[t] + 1 for t in range(n)] for s in perms]
        self._seen: dict[tuple, tuple[tuple, int]] = {}

    @staticmethod
    def _row(sigma, q):
        out = 0
        for p, t in enumerate(sigma):
            if (q >> p) & 1:
                out |= 1 << t
        return out

    def code(self, k: int, code: int) -> int:
        n, full = self.frame.n, self.frame.full
        rows = self._rows[k]
        sigma = self.perms[k]
        out = 0
        for a in range(n):
            out |= rows[(code >> (a * n)) & full] << (sigma[a] * n)
        return out

    def view(self, k: int, vid: int) -> int:
        self._grow()
        hit = self._views[k][vid]
        return hit if hit >= 0 else self._fill(k, vid)

    def _grow(self) -> None:
        missing = self.frame.distinct_views - len(self._views[0])
        if missing > 0:
            for tab in self._views:
                tab.extend([-1] * missing)

    def _fill(self, k: int, vid: int) -> int:
        fr = self.frame
        out = fr.view_id(frozenset(self.code(k, t) for t in fr.view(vid)))
        self._grow()
        self._views[k][vid] = out
        return out

    def canon(self, key: tuple) -> tuple[tuple, int]:
        """Least renaming of ``key`` and the index of the permutation producing it."""
        hit = self._seen.get(key)
        if hit is not None:
            return hit
        code = key[0]
        cc = self._codes.get(code)
        if cc is None:
            images = [self.code(k, code) for k in range(len(self.perms))]
            low = min(images)
            cc = self._codes[code] = (low, tuple(k for k, c in enumerate(images) if c == low))
        low, ks = cc
        self._grow()
        best = None
        for k in ks:
            tab = self._views[k]
            vids = [tab[key[i]] for i in self._order[k]]
            if -1 in vids:
                vids = [t if t >= 0 else self._fill(k, key[i]) for t, i in zip(vids, self._order[k])]
                tab = self._views[k]
            if best is None or vids < best[0]:
                best = (vids, k)
        hit = self._seen[key] = ((low, *best[0]), best[1])
        return hit


@dataclass
class StateGraph:
    protocol: Protocol
    keys: list[tuple]  # raw (situation code, view ids...) per node
    succ: list[list[tuple[int, Call, int, int]]]  # (agent, call, target, renaming)
    parent: list[tuple[int, int] | None]  # (predecessor, edge index there)
    depth: list[int]
    expanded: list[bool]
    perms: list[tuple[int, ...]] = field(default_factory=list)
    complete: bool = True
    limit_reason: str | None = None
    elapsed_ms: float = 0.0
    max_states: int | None = DEFAULT_MAX_STATES

    initial = 0

    def __post_init__(self) -> None:
        self.inverse = [_inverse(s) for s in self.perms]

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def reduced(self) -> bool:
        """Whether nodes stand for orbits under agent renaming."""
        return len(self.perms) > 1

    def state(self, v: int) -> EpistemicState:
        """The canonical representative of node ``v``."""
        return self.protocol.frame.state_of(self.keys[v])

    @property
    def num_edges(self) -> int:
        return sum(len(s) for s in self.succ)

    @property
    def leaves(self) -> list[int]:
        return [v for v in range(len(self.keys)) if self.expanded[v] and not self.succ[v]]

    def stats(self) -> dict:
        out = {"states": len(self.keys), "edges": self.num_edges,
               "elapsed_ms": round(self.elapsed_ms, 1)}
        if self.reduced:
            out["symmetry"] = len(self.perms)
        return out

    def edges_to(self, v: int) -> list[tuple[int, Call, int, int]]:
        edges = []
        while self.parent[v] is not None:
            u, i = self.parent[v]
            edges.append(self.succ[u][i])
            v = u
        return edges[::-1]

    def concretize(self, edges: Iterable[tuple[int, Call, int, int]],
                   pi: tuple[int, ...] | None = None) -> tuple[list[Call], tuple[int, ...]]:
        """Concrete calls along ``edges``; ``pi`` maps canonical agents to concrete ones."""
        if pi is None:
            pi = tuple(range(self.protocol.n))
        calls = []
        for _, call, _, k in edges:
            calls.append(Call(pi[call.caller], pi[call.callee], call.mode))
            if k:
                inv = self.inverse[k]
                pi = tuple(pi[inv[b]] for b in range(len(pi)))
        return calls, pi

    def path_to(self, v: int) -> tuple[Call, ...]:
        return tuple(self.concretize(self.edges_to(v))[0])

    def enabled_agents(self, v: int) -> frozenset[int]:
        return frozenset(e[0] for e in self.succ[v])


def build_graph(p: Protocol, max_states: int | None = DEFAULT_MAX_STATES,
                max_depth: int | None = None, symmetry: bool | None = None) -> StateGraph:
    """Breadth-first exploration from the initial state.

    ``symmetry=None`` explores the plain graph unless the protocol has
    nontrivial automorphisms and the plain graph outgrows
    ``SYMMETRY_THRESHOLD`` states; ``True`` and ``False`` force the choice.
    """
    perms = automorphisms(p) if symmetry is not False else []
    if len(perms) <= 1:
        return _explore(p, max_states, max_depth, None)
    if symmetry is None:
        cap = SYMMETRY_THRESHOLD if max_states is None else min(max_states, SYMMETRY_THRESHOLD)
        g = _explore(p, cap, max_depth, None)
        if g.complete or cap == max_states or g.limit_reason != f"max_states={cap}":
            g.max_states = max_states
            return g
    return _explore(p, max_states, max_depth, perms)


def _explore(p: Protocol, max_states, max_depth, perms) -> StateGraph:
    started = time.perf_counter()
    frame = p.frame
    calls = frame.calls
    edges_at = p._guards.edges
    successor = frame.successor
    ren = _Renaming(frame, perms) if perms else None
    root = frame.key_of(frame.initial())
    if ren is not None:
        root = ren.canon(root)[0]
    index: dict[tuple, int] = {root: 0}
    g = StateGraph(p, [root], [[]], [None], [0], [False],
                   perms=perms or [tuple(range(p.n))], max_states=max_states)
    keys, succ, parent, depth, expanded = g.keys, g.succ, g.parent, g.depth, g.expanded
    queue = deque([0])
    while queue:
        v = queue.popleft()
        key = keys[v]
        edges = edges_at(key)
        if max_depth is not None and depth[v] >= max_depth:
            if edges:
                g.complete = False
                g.limit_reason = f"max_depth={max_depth}"
            continue
        out = []
        for agent, i in edges:
            nxt = successor(key, i)
            k = 0
            if ren is not None:
                nxt, k = ren.canon(nxt)
            w = index.get(nxt)
            if w is None:
                if max_states is not None and len(keys) >= max_states:
                    g.complete = False
                    g.limit_reason = f"max_states={max_states}"
                    queue.clear()
                    break
                w = index[nxt] = len(keys)
                keys.append(nxt)
                succ.append([])
                parent.append((v, len(out)))
                depth.append(depth[v] + 1)
                expanded.append(False)
                queue.append(w)
            out.append((agent, calls[i], w, k))
        else:
            expanded[v] = True
        succ[v] = out
    g.elapsed_ms = (time.perf_counter() - started) * 1000
    return g


# -- graph algorithms ------------------------------------------------------------

def strongly_connected(g: StateGraph, allowed: set[int] | None = None) -> list[list[int]]:
    """Tarjan's algorithm, iterative, restricted to ``allowed`` nodes."""
    nodes = range(len(g.keys)) if allowed is None else sorted(allowed)
    ok = (lambda w: True) if allowed is None else allowed.__contains__
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    out: list[list[int]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, i = work[-1]
            succ = g.succ[v]
            while i < len(succ):
                w = succ[i][2]
                i += 1
                if not ok(w):
                    continue
                if w not in index:
                    work[-1] = (v, i)
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, 0))
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            else:
                work.pop()
                if work:
                    u = work[-1][0]
                    low[u] = min(low[u], low[v])
                if low[v] == index[v]:
                    comp = []
                    while True:
                        w = stack.pop()
                        on_stack.discard(w)
                        comp.append(w)
                        if w == v:
                            break
                    out.append(sorted(comp))
    return out


def _nontrivial(g: StateGraph, comp: list[int]) -> bool:
    if len(comp) > 1:
        return True
    v = comp[0]
    return any(e[2] == v for e in g.succ[v])


def _topological_order(g: StateGraph) -> list[int] | None:
    """Kahn's algorithm; None when the graph has a cycle."""
    cached = g.__dict__.get("_topo", False)
    if cached is not False:
        return cached
    indeg = [0] * len(g.keys)
    for out in g.succ:
        for e in out:
            indeg[e[2]] += 1
    order = [v for v in range(len(g.keys)) if indeg[v] == 0]
    for v in order:  # grows while iterating
        for e in g.succ[v]:
            w = e[2]
            indeg[w] -= 1
            if indeg[w] == 0:
                order.append(w)
    result = order if len(order) == len(g.keys) else None
    g.__dict__["_topo"] = result
    return result


def has_cycle(g: StateGraph) -> bool:
    return _topological_order(g) is None


def _shortest_walk(g: StateGraph, src: int, inside: set[int], goal) -> tuple[list[tuple], int]:
    """Shortest walk from ``src`` inside ``inside`` whose last edge satisfies ``goal``."""
    prev: dict[int, tuple | None] = {src: None}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for edge in g.succ[u]:
            agent, _, w, _ = edge
            if w not in inside:
                continue
            if goal(agent, w):
                walk = [edge]
                x = u
                while prev[x] is not None:
                    y, e = prev[x]
                    walk.append(e)
                    x = y
                return walk[::-1], w
            if w not in prev:
                prev[w] = (u, edge)
                queue.append(w)
    raise AssertionError("goal unreachable inside a strongly connected component")


def _cycle_through(g: StateGraph, entry: int, comp: set[int], required: Iterable[int]) -> list[tuple]:
    """Closed walk from ``entry`` inside ``comp`` with an edge of every agent in ``required``."""
    walk: list[tuple] = []
    cur = entry
    for agent in sorted(required):
        if any(e[0] == agent for e in walk):
            continue
        part, cur = _shortest_walk(g, cur, comp, lambda a, w, want=agent: a == want)
        walk += part
    if cur != entry or not walk:
        part, cur = _shortest_walk(g, cur, comp, lambda a, w: w == entry)
        walk += part
    return walk


def _lasso(g: StateGraph, entry: int, walk: list[tuple]) -> Witness:
    """Concrete lasso for a closed walk; renamings force repeating it until it closes."""
    prefix, start = g.concretize(g.edges_to(entry))
    cycle: list[Call] = []
    pi = start
    while True:
        calls, pi = g.concretize(walk, pi)
        cycle += calls
        if pi == start:
            return Witness(tuple(prefix), tuple(cycle))


# -- verdicts ------------------------------------------------------------------

def _limited(prop: Property, g: StateGraph) -> Verdict:
    return Verdict(prop, Outcome.RESOURCE_LIMITED, stats=g.stats(),
                   details={"reason": g.limit_reason})


def check_correctness(g: StateGraph) -> Verdict:
    if not g.complete:
        return _limited(Property.CORRECTNESS, g)
    n = g.protocol.n
    full = (1 << n * n) - 1
    for v in g.leaves:  # ascending ids: the first failing leaf has a shortest path
        if g.keys[v][0] == full:
            continue
        calls = g.path_to(v)
        s = replay(g.protocol, calls).situation
        missing = {a: [q for q in range(n) if not s.knows(a, q)]
                   for a in range(n) if not is_expert(a, s)}
        return Verdict(Property.CORRECTNESS, Outcome.FAILS, Witness(calls), g.stats(),
                       {"situation": s, "missing": missing})
    return Verdict(Property.CORRECTNESS, Outcome.HOLDS, stats=g.stats())


def find_lasso(g: StateGraph) -> Witness | None:
    if not has_cycle(g):
        return None
    comps = [c for c in strongly_connected(g) if _nontrivial(g, c)]
    if not comps:
        return None
    comp = min(comps, key=lambda c: c[0])
    entry = comp[0]
    return _lasso(g, entry, _cycle_through(g, entry, set(comp), ()))


def check_termination(g: StateGraph) -> Verdict:
    if not g.complete:
        return _limited(Property.TERMINATION, g)
    lasso = find_lasso(g)
    if lasso is None:
        return Verdict(Property.TERMINATION, Outcome.HOLDS, stats=g.stats())
    return Verdict(Property.TERMINATION, Outcome.FAILS, lasso, g.stats())


def fair_components(g: StateGraph) -> list[list[int]]:
    """Strongly connected node sets that carry a fair cycle.

    A cycle is fair when every agent enabled somewhere on it also places
    one of its calls.  An agent enabled inside a component but never
    calling inside it rules out every node where it is enabled; those are
    removed and the rest is decomposed again.
    """
    if not has_cycle(g):
        return []
    found = []
    work: list[set[int] | None] = [None]  # None stands for the whole graph
    while work:
        allowed = work.pop()
        for comp in strongly_connected(g, allowed):
            if not _nontrivial(g, comp):
                continue
            inside = set(comp)
            labels = {e[0] for v in comp for e in g.succ[v] if e[2] in inside}
            enabled = set().union(*(g.enabled_agents(v) for v in comp))
            bad = enabled - labels
            if not bad:
                found.append(comp)
                continue
            keep = {v for v in comp if not (g.enabled_agents(v) & bad)}
            if keep:
                work.append(keep)
    return sorted(found, key=lambda c: c[0])


def is_fair_lasso(p: Protocol, w: Witness) -> bool:
    """Replay check: the cycle is enabled, closes, and selects every agent it enables."""
    st = replay(p, w.prefix)
    if st is None or not w.cycle:
        return False
    entry = st
    enabled: set[int] = set()
    for call in w.cycle:
        pairs = enabled_calls(p, st)
        enabled |= {a for a, _ in pairs}
        if (call.caller, call) not in pairs:
            return False
        st = p.frame.step(st, call)
    return st == entry and enabled <= {c.caller for c in w.cycle}


def check_fair_termination(g: StateGraph) -> Verdict:
    if not g.complete:
        return _limited(Property.FAIR_TERMINATION, g)
    for comp in fair_components(g):
        entry = comp[0]
        required = set().union(*(g.enabled_agents(v) for v in comp))
        lasso = _lasso(g, entry, _cycle_through(g, entry, set(comp), required))
        if not g.reduced or is_fair_lasso(g.protocol, lasso):
            return Verdict(Property.FAIR_TERMINATION, Outcome.FAILS, lasso, g.stats())
    if not g.reduced or not has_cycle(g):
        return Verdict(Property.FAIR_TERMINATION, Outcome.HOLDS, stats=g.stats())
    # Renaming mixes agent labels along cycles, so an unconfirmed answer
    # from the reduced graph is settled on the plain one.
    return check_fair_termination(build_graph(g.protocol, g.max_states, symmetry=False))


CHECKS = {
    Property.CORRECTNESS: check_correctness,
    Property.TERMINATION: check_termination,
    Property.FAIR_TERMINATION: check_fair_termination,
}


def check(g: StateGraph, prop: Property) -> Verdict:
    return CHECKS[prop](g)


@dataclass(frozen=True)
class Extremes:
    min: int | None
    max: int | None  # None: computations of unbounded length exist

    @property
    def unbounded(self) -> bool:
        return self.max is None


def extremal_terminating_lengths(g: StateGraph) -> Extremes:
    if not g.complete:
        raise ResourceLimitExceeded(f"graph exploration stopped at {g.limit_reason}")
    leaves = g.leaves
    shortest = min((g.depth[v] for v in leaves), default=None)
    if has_cycle(g):
        return Extremes(shortest, None)
    longest: list[int | None] = [None] * len(g.keys)
    longest[0] = 0
    for v in _topological_order(g):
        if longest[v] is None:
            continue
        for e in g.succ[v]:
            w = e[2]
            if longest[w] is None or longest[w] < longest[v] + 1:
                longest[w] = longest[v] + 1
    return Extremes(shortest, max((longest[v] for v in leaves if longest[v] is not None), default=None))


def _require_plain(g: StateGraph) -> None:
    if g.reduced:
        raise GossipError("sequence enumeration needs a graph built with symmetry=False")


def terminating_sequences(g: StateGraph) -> Iterator[tuple[Call, ...]]:
    """Every call sequence from the root to a leaf; only sensible on small acyclic graphs."""
    _require_plain(g)
    stack = [(0, ())]
    while stack:
        v, calls = stack.pop()
        if not g.succ[v] and g.expanded[v]:
            yield calls
        for e in reversed(g.succ[v]):
            stack.append((e[2], calls + (e[1],)))


def unfold(g: StateGraph, depth: int) -> set[tuple[Call, ...]]:
    """All call sequences of length at most ``depth`` the graph admits from the root."""
    _require_plain(g)
    out = set()
    stack = [(0, ())]
    while stack:
        v, calls = stack.pop()
        out.add(calls)
        if len(calls) < depth:
            for e in g.succ[v]:
                stack.append((e[2], calls + (e[1],)))
    return out


def replay_from(p: Protocol, st: EpistemicState, calls: Sequence[Call]) -> EpistemicState | None:
    """State after ``calls`` from ``st`` if each one is enabled when placed, else None."""
    for call in calls:
        if (call.caller, call) not in enabled_calls(p, st):
            return None
        st = p.frame.step(st, call)
    return st


def replay(p: Protocol, calls: Sequence[Call]) -> EpistemicState | None:
    return replay_from(p, p.frame.initial(), calls)


def is_lasso(p: Protocol, w: Witness) -> bool:
    """The lasso's calls are enabled step by step and the cycle returns to its entry state."""
    st = replay(p, w.prefix)
    if st is None or not w.cycle:
        return False
    return replay_from(p, st, w.cycle) == st


@dataclass(frozen=True)
class ScriptResult:
    valid: bool
    leaf: bool
    all_expert: bool
    failing_step: int | None
    length: int
    state: EpistemicState


def find_scripted_computation(p: Protocol, calls: Sequence[Call]) -> ScriptResult:
    st = p.frame.initial()
    for k, call in enumerate(calls, start=1):
        if (call.caller, call) not in enabled_calls(p, st):
            return ScriptResult(False, False, False, k, k - 1, st)
        st = p.frame.step(st, call)
    s = st.situation
    return ScriptResult(True, not enabled_rules(p, st), all(is_expert(a, s) for a in range(p.n)),
                        None, len(calls), st)
