"""Rules, component programs, protocols and the protocol DSL.

A protocol file looks like::

    protocol LNS {
      mode: push-pull;
      topology: complete;
      agent i {
        forall j != i: rule not F[i] secret(j) => call(i, j);
      }
    }

A single block named by a variable is a schema instantiated for every agent.
Asymmetric protocols list one block per concrete agent instead.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .core import Call, GossipError, Mode, Topology, agent_name, check_agents
from .epistemic import EpistemicState, get_frame
from .logic import (
    AgentRef,
    And,
    Familiar,
    Formula,
    FormulaError,
    Guard,
    Knows,
    Not,
    Or,
    ParseError,
    TokenStream,
    Term,
    conj,
    instantiate,
    normalize_guard,
    parse_agent_expr,
    parse_disj,
    render,
    resolve_agent,
)


class ProtocolError(GossipError):
    pass


@dataclass(frozen=True)
class Rule:
    guard: Guard
    call: Call

    def __post_init__(self) -> None:
        if self.call.caller != self.guard.owner:
            raise ProtocolError("the owner of a rule must be the caller of its call")


@dataclass(frozen=True)
class ComponentProgram:
    owner: int
    rules: tuple[Rule, ...]

    def __post_init__(self) -> None:
        if not self.rules:
            raise ProtocolError(f"agent {self.owner + 1} has an empty program")


@dataclass(frozen=True)
class Protocol:
    name: str
    n: int
    mode: Mode
    topology: Topology
    programs: tuple[ComponentProgram, ...]
    source: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        check_agents(self.n)
        if [p.owner for p in self.programs] != list(range(self.n)):
            raise ProtocolError("a protocol needs exactly one program per agent, in agent order")
        for prog in self.programs:
            for rule in prog.rules:
                if rule.call.mode is not self.mode:
                    raise ProtocolError("a protocol uses a single mode of communication")

    @property
    def style(self) -> str:
        return self.topology.style

    @property
    def frame(self):
        return get_frame(self.n, self.mode, self.topology)

    @functools.cached_property
    def _guards(self) -> "_CompiledGuards":
        return _CompiledGuards(self)

    def rules(self) -> list[tuple[int, int, Rule]]:
        return [(p.owner, k, r) for p in self.programs for k, r in enumerate(p.rules)]

    def render(self) -> str:
        lines = [f"protocol {self.name}  ({self.mode.value}, {self.topology.value}, n={self.n})"]
        letters = self.topology is Topology.COMPLETE
        for prog in self.programs:
            for rule in prog.rules:
                lines.append(f"  {agent_name(prog.owner, self.style)}: "
                             f"{render(rule.guard.body, letters=letters)} => {rule.call.render(self.style)}")
        return "\n".join(lines)


class _CompiledGuards:
    """Guard predicates plus a per-view memo.

    A guard of agent ``a`` is a boolean combination of ``K[a]`` formulas,
    so its value depends on ``a``'s knowledge set alone.
    """

    def __init__(self, p: Protocol):
        frame = p.frame
        self.preds: list[list[Callable]] = [
            [frame.compile(r.guard.body) for r in prog.rules] for prog in p.programs
        ]
        self.calls = [[r.call for r in prog.rules] for prog in p.programs]
        self.memo: list[dict] = [{} for _ in p.programs]
        frame_index = frame.index
        self.call_ids = [[frame_index[c] for c in calls] for calls in self.calls]
        self.n = p.n
        self.frame = frame
        self.edge_memo: list[dict] = [{} for _ in p.programs]

    def enabled(self, a: int, st: EpistemicState) -> tuple[int, ...]:
        view = st.views[a]
        hit = self.memo[a].get(view)
        if hit is None:
            hit = tuple(k for k, pred in enumerate(self.preds[a]) if pred(st.code, st.views))
            self.memo[a][view] = hit
        return hit

    def edges(self, key: tuple) -> list[tuple[int, int]]:
        """Distinct enabled ``(agent, call index)`` pairs at a raw state key."""
        out = []
        for a in range(self.n):
            hit = self.edge_memo[a].get(key[a + 1])
            if hit is None:
                st = self.frame.state_of(key)
                ids = self.call_ids[a]
                hit = []
                for k in self.enabled(a, st):
                    if ids[k] not in hit:
                        hit.append(ids[k])
                hit = self.edge_memo[a][key[a + 1]] = tuple((a, i) for i in hit)
            out += hit
        return out


def _check_state(p: Protocol, st: EpistemicState) -> None:
    fr = st.frame
    if (fr.n, fr.mode, fr.topology) != (p.n, p.mode, p.topology):
        raise ProtocolError("state and protocol belong to different gossip models")


def enabled_rules(p: Protocol, st: EpistemicState) -> list[tuple[int, int, Call]]:
    """``(agent, rule index, call)`` for every rule whose guard holds at ``st``."""
    _check_state(p, st)
    g = p._guards
    out = []
    for a in range(p.n):
        for k in g.enabled(a, st):
            out.append((a, k, g.calls[a][k]))
    return out


def enabled_calls(p: Protocol, st: EpistemicState) -> list[tuple[int, Call]]:
    """Enabled ``(agent, call)`` pairs ordered by agent, then rule; duplicates dropped."""
    seen = []
    for a, _, call in enabled_rules(p, st):
        if (a, call) not in seen:
            seen.append((a, call))
    return seen


def enabled_agents(p: Protocol, st: EpistemicState) -> list[int]:
    _check_state(p, st)
    return [a for a in range(p.n) if p._guards.enabled(a, st)]


def _shape(f: Formula, sigma: Sequence[int]):
    """Renamed copy of a ground guard with ``and``/``or`` flattened into sets."""
    if isinstance(f, Familiar):
        return ("F", sigma[f.agent], sigma[f.owner])
    if isinstance(f, Knows):
        return ("K", sigma[f.agent], _shape(f.body, sigma))
    if isinstance(f, Not):
        return ("N", _shape(f.body, sigma))
    if isinstance(f, (And, Or)):
        kind = type(f)
        parts, stack = [], [f]
        while stack:
            g = stack.pop()
            if isinstance(g, kind):
                stack += [g.left, g.right]
            else:
                parts.append(_shape(g, sigma))
        return (kind.__name__, frozenset(parts))
    raise ProtocolError(f"unexpected {type(f).__name__} in an instantiated guard")


def automorphisms(p: Protocol) -> list[tuple[int, ...]]:
    """Agent permutations mapping the protocol onto itself, identity first.

    A permutation qualifies when it maps allowed calls to allowed calls and
    the set of rules, guards compared up to reordering of conjuncts and
    disjuncts, onto itself.
    """
    n = p.n
    ident = tuple(range(n))
    calls = {(c.caller, c.callee) for c in p.frame.calls}

    def rule_set(sigma):
        return frozenset(
            (sigma[prog.owner], sigma[r.call.caller], sigma[r.call.callee], _shape(r.guard.body, sigma))
            for prog in p.programs for r in prog.rules)

    base = rule_set(ident)
    out = [ident]
    for sigma in itertools.permutations(range(n)):
        if sigma == ident:
            continue
        if {(sigma[a], sigma[b]) for a, b in calls} != calls:
            continue
        if rule_set(sigma) == base:
            out.append(sigma)
    return out


def exit_condition(p: Protocol) -> Formula:
    parts = []
    for prog in p.programs:
        for rule in prog.rules:
            body = rule.guard.body
            parts.append(body.body if isinstance(body, Not) else Not(body))
    return conj(parts)


# -- DSL -----------------------------------------------------------------------

@dataclass
class _RuleSyntax:
    quant: tuple[str, tuple[AgentRef, ...]] | None
    guard: Formula
    caller: AgentRef
    callee: AgentRef
    line: int
    column: int


@dataclass
class _AgentBlock:
    name: str
    rules: list[_RuleSyntax]
    line: int
    column: int


def _parse_word(ts: TokenStream) -> str:
    """Read a hyphenated word such as ``push-pull``."""
    parts = [ts.expect_name().text]
    while ts.accept("-"):
        parts.append(ts.expect_name().text)
    return "-".join(parts)


def _parse_document(text: str):
    ts = TokenStream(text)
    ts.expect("protocol")
    name = ts.next()
    if name.kind not in ("name", "int"):
        raise ParseError("expected a protocol name", name.line, name.column, frozenset({"<name>"}))
    ts.expect("{")
    mode = topology = None
    blocks: list[_AgentBlock] = []
    while not ts.accept("}"):
        tok = ts.peek
        if ts.accept("mode"):
            ts.expect(":")
            word = _parse_word(ts)
            try:
                mode = Mode.parse(word)
            except GossipError:
                raise ParseError(f"unknown mode {word!r}", tok.line, tok.column,
                                 frozenset(m.value for m in Mode)) from None
            ts.expect(";")
        elif ts.accept("topology"):
            ts.expect(":")
            word = _parse_word(ts)
            try:
                topology = Topology.parse(word)
            except GossipError:
                raise ParseError(f"unknown topology {word!r}", tok.line, tok.column,
                                 frozenset({"complete", "ring"})) from None
            ts.expect(";")
        elif ts.accept("agent"):
            head = ts.next()
            if head.kind not in ("name", "int"):
                raise ParseError("expected an agent name", head.line, head.column, frozenset({"<name>"}))
            ts.expect("{")
            rules = []
            while not ts.accept("}"):
                rules.append(_parse_rule(ts))
            blocks.append(_AgentBlock(head.text, rules, head.line, head.column))
        else:
            raise ts.error("expected a protocol item", {"mode", "topology", "agent", "}"})
    if ts.peek.kind != "eof":
        raise ts.error("trailing input after protocol", {"<end>"})
    return name.text, mode, topology, blocks


def _parse_rule(ts: TokenStream) -> _RuleSyntax:
    start = ts.peek
    quant = None
    if ts.accept("forall"):
        var = ts.expect_name().text
        excluded: list[AgentRef] = []
        if ts.accept("!="):
            excluded.append(parse_agent_expr(ts))
            while ts.accept(","):
                excluded.append(parse_agent_expr(ts))
        ts.expect(":")
        quant = (var, tuple(excluded))
    ts.expect("rule")
    guard = parse_disj(ts)
    ts.expect("=>")
    ts.expect("call")
    ts.expect("(")
    caller = parse_agent_expr(ts)
    ts.expect(",")
    callee = parse_agent_expr(ts)
    ts.expect(")")
    ts.expect(";")
    return _RuleSyntax(quant, guard, caller, callee, start.line, start.column)


def parse_protocol(text: str, n: int, mode: Mode | None = None,
                   topology: Topology | None = None) -> Protocol:
    """Parse and instantiate a protocol for ``n`` agents.

    ``mode`` and ``topology`` override the declarations in the text.
    """
    check_agents(n)
    name, declared_mode, declared_top, blocks = _parse_document(text)
    mode = mode or declared_mode or Mode.PUSH_PULL
    topology = topology or declared_top or Topology.COMPLETE
    if not blocks:
        raise ProtocolError(f"protocol {name} has no agent blocks")

    schema = len(blocks) == 1 and not blocks[0].name.isdigit()
    chosen: dict[int, _AgentBlock] = {}
    if schema:
        chosen = {a: blocks[0] for a in range(n)}
    else:
        for blk in blocks:
            try:
                a = resolve_agent(Term(blk.name), {}, n)
            except FormulaError as exc:
                raise ParseError(str(exc), blk.line, blk.column) from None
            if a in chosen:
                raise ParseError(f"duplicate block for agent {blk.name}", blk.line, blk.column)
            chosen[a] = blk
        missing = [agent_name(a, topology.style) for a in range(n) if a not in chosen]
        if missing:
            raise ProtocolError(f"protocol {name} has no program for agents {', '.join(missing)}")

    programs = []
    for a in range(n):
        blk = chosen[a]
        base = {blk.name: a} if schema else {}
        rules = []
        for rs in blk.rules:
            bindings = [base]
            if rs.quant is not None:
                var, excluded = rs.quant
                skip = {resolve_agent(x, base, n) for x in excluded}
                bindings = [{**base, var: k} for k in range(n) if k not in skip]
            for binding in bindings:
                rules.append(_instantiate_rule(rs, binding, a, n, mode, topology))
        programs.append(ComponentProgram(a, tuple(rules)))
    return Protocol(name, n, mode, topology, tuple(programs), source=text)


def _instantiate_rule(rs: _RuleSyntax, binding: dict, owner: int, n: int, mode: Mode,
                      topology: Topology) -> Rule:
    where = f"rule at {rs.line}:{rs.column}"
    try:
        caller = resolve_agent(rs.caller, binding, n)
        callee = resolve_agent(rs.callee, binding, n)
        guard = normalize_guard(owner, instantiate(rs.guard, binding, n))
    except FormulaError as exc:
        raise ProtocolError(f"{where}: {exc}") from None
    if caller != owner:
        raise ProtocolError(f"{where}: caller must be the agent running the program")
    if callee == caller:
        raise ProtocolError(f"{where}: an agent cannot call itself")
    if topology is Topology.RING and callee != (caller + 1) % n:
        raise ProtocolError(f"{where}: on a ring an agent may only call its successor")
    return Rule(guard, Call(caller, callee, mode))


# -- builtins ------------------------------------------------------------------

BUILTIN_SOURCES = {
    "LNS": """\
protocol LNS {
  mode: push-pull;
  topology: complete;
  agent i {
    forall j != i: rule not F[i] secret(j) => call(i, j);
  }
}
""",
    "HMS": """\
protocol HMS {
  mode: push-pull;
  topology: complete;
  agent i {
    forall j != i: rule not K[i] F[j] secret(i) => call(i, j);
  }
}
""",
    "R1": """\
protocol R1 {
  mode: push-pull;
  topology: ring;
  agent i {
    rule exists j: (F[i] secret(j) and K[i] not F[i+1] secret(j)) => call(i, i+1);
  }
}
""",
    "R2": """\
protocol R2 {
  mode: push-pull;
  topology: ring;
  agent i {
    rule not K[i] F[i+1] secret(i-1) => call(i, i+1);
  }
}
""",
    "R3": """\
protocol R3 {
  mode: push-pull;
  topology: ring;
  agent i {
    rule not expert(i) or not K[i] F[i+1] secret(i-1) => call(i, i+1);
  }
}
""",
    "R4": """\
protocol R4 {
  mode: push-pull;
  topology: ring;
  agent i {
    rule exists j: (F[i] secret(j) and not K[i] F[i+1] secret(j)) => call(i, i+1);
  }
}
""",
    # c holds a strict superset of a's secrets: (forall x: F[a]x -> F[c]x) and (exists x: F[c]x and not F[a]x)
    "EX28": """\
protocol EX28 {
  mode: push;
  topology: complete;
  agent a {
    rule not K[a] ((forall x: (not F[a] secret(x) or F[c] secret(x)))
                   and (exists x: (F[c] secret(x) and not F[a] secret(x))))
         and not K[a] expert(a) => call(a, c);
  }
  agent b {
    rule not K[b] ((forall x: (not F[b] secret(x) or F[c] secret(x)))
                   and (exists x: (F[c] secret(x) and not F[b] secret(x))))
         and not K[b] expert(b) => call(b, c);
  }
  agent c {
    rule not K[c] expert(a) and K[c] expert(c) => call(c, a);
    rule not K[c] expert(b) and K[c] expert(c) => call(c, b);
  }
}
""",
}

BUILTIN_NOTES = {
    "LNS": "complete graph; call j while not familiar with j's secret",
    "HMS": "complete graph; call j while not knowing that j is familiar with my secret",
    "R1": "directed ring; call successor while knowing it lacks a secret I hold (mode as given)",
    "R2": "directed ring; call successor until knowing it holds my predecessor's secret",
    "R3": "directed ring; R2 guard, or not yet an expert",
    "R4": "directed ring; call successor while unsure it holds some secret I hold",
    "EX28": "three agents a, b, c; a and b push to c, then c pushes back (push mode)",
}


def builtin(name: str, n: int, mode: Mode | None = None) -> Protocol:
    key = name.upper()
    if key not in BUILTIN_SOURCES:
        raise ProtocolError(f"unknown builtin protocol {name!r}; known: {', '.join(BUILTIN_SOURCES)}")
    if key == "EX28" and n != 3:
        raise ProtocolError("EX28 is defined for exactly three agents")
    return parse_protocol(BUILTIN_SOURCES[key], n, mode)


def load_protocol(name_or_path: str, n: int, mode: Mode | None = None) -> Protocol:
    """A builtin name or a path to a protocol file."""
    if name_or_path.upper() in BUILTIN_SOURCES:
        return builtin(name_or_path, n, mode)
    try:
        with open(name_or_path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ProtocolError(f"no builtin or readable file named {name_or_path!r}: {exc.strerror}") from None
    return parse_protocol(text, n, mode)
