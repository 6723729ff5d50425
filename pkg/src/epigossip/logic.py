"""Epistemic guard formulas: AST, concrete syntax, instantiation.

Concrete syntax::

    F[x] secret(y)          x is familiar with the secret of y
    K[x] phi                x knows phi
    not / and / or          `not` binds tightest, then `and`, then `or`
    expert(x)               x holds every secret
    exists v [!= x, ...]: phi
    forall v [!= x, ...]: phi

Agent expressions are names (variables or agent letters) or 1-based
numerals, optionally followed by ``+k`` / ``-k`` ring offsets.  Ground
formulas carry plain ``int`` agent indices.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Union

from .core import GossipError


class FormulaError(GossipError):
    pass


class ParseError(FormulaError):
    def __init__(self, message: str, line: int, column: int, expected: frozenset[str] = frozenset()):
        self.line = line
        self.column = column
        self.expected = expected
        detail = f" (expected one of: {', '.join(sorted(expected))})" if expected else ""
        super().__init__(f"{line}:{column}: {message}{detail}")


class UnboundVariable(FormulaError):
    pass


class OutsideGuardLanguage(FormulaError):
    pass


# -- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """Symbolic agent reference: a variable, letter or numeral plus a ring offset."""

    name: str
    offset: int = 0


AgentRef = Union[int, Term]


def _pos():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Familiar:
    agent: AgentRef
    owner: AgentRef
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Not:
    body: "Formula"
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Knows:
    agent: AgentRef
    body: "Formula"
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Expert:
    agent: AgentRef
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Exists:
    var: str
    excluded: tuple[AgentRef, ...]
    body: "Formula"
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Forall:
    var: str
    excluded: tuple[AgentRef, ...]
    body: "Formula"
    pos: tuple[int, int] | None = _pos()


Formula = Union[Familiar, Not, And, Or, Knows, Expert, Exists, Forall]


@dataclass(frozen=True)
class Guard:
    """A rule guard: a formula of the owner's guard language."""

    owner: int
    body: Formula


def conj(parts: list[Formula]) -> Formula:
    if not parts:
        raise FormulaError("empty conjunction")
    out = parts[0]
    for p in parts[1:]:
        out = And(out, p)
    return out


def disj(parts: list[Formula]) -> Formula:
    if not parts:
        raise FormulaError("empty disjunction")
    out = parts[0]
    for p in parts[1:]:
        out = Or(out, p)
    return out


def subformulas(f: Formula) -> Iterator[Formula]:
    yield f
    if isinstance(f, (Not, Knows, Exists, Forall)):
        yield from subformulas(f.body)
    elif isinstance(f, (And, Or)):
        yield from subformulas(f.left)
        yield from subformulas(f.right)


# -- rendering ---------------------------------------------------------------

def _render_agent(a: AgentRef, letters: bool) -> str:
    if isinstance(a, int):
        return chr(ord("a") + a) if letters else str(a + 1)
    if a.offset > 0:
        return f"{a.name}+{a.offset}"
    if a.offset < 0:
        return f"{a.name}-{-a.offset}"
    return a.name


def render(f: Formula, letters: bool = False) -> str:
    """Render in the concrete syntax.

    The default numeric style round-trips through :func:`parse_formula`;
    ``letters=True`` is for display on complete graphs.
    """
    return _render(f, 0, letters, True)


# ctx: 0 = or-operand, 1 = and-operand, 2 = unary operand.  ``tail`` is true
# when nothing follows in the enclosing text, which is the only place a
# quantifier may appear unparenthesized since its body extends rightwards.
def _render(f: Formula, ctx: int, letters: bool, tail: bool) -> str:
    ag = lambda a: _render_agent(a, letters)  # noqa: E731
    if isinstance(f, Familiar):
        return f"F[{ag(f.agent)}] secret({ag(f.owner)})"
    if isinstance(f, Expert):
        return f"expert({ag(f.agent)})"
    if isinstance(f, Not):
        return "not " + _render(f.body, 2, letters, tail)
    if isinstance(f, Knows):
        return f"K[{ag(f.agent)}] " + _render(f.body, 2, letters, tail)
    if isinstance(f, And):
        if ctx > 1:
            return "(" + _render(f, 1, letters, True) + ")"
        return _render(f.left, 1, letters, False) + " and " + _render(f.right, 2, letters, tail)
    if isinstance(f, Or):
        if ctx > 0:
            return "(" + _render(f, 0, letters, True) + ")"
        return _render(f.left, 0, letters, False) + " or " + _render(f.right, 1, letters, tail)
    if isinstance(f, (Exists, Forall)):
        if not tail:
            return "(" + _render(f, 0, letters, True) + ")"
        word = "exists" if isinstance(f, Exists) else "forall"
        excl = ""
        if f.excluded:
            excl = " != " + ", ".join(ag(x) for x in f.excluded)
        return f"{word} {f.var}{excl}: " + _render(f.body, 0, letters, True)
    raise TypeError(f"not a formula: {f!r}")


# -- lexer -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<op>=>|!=|[\[\]\(\)\{\},:;+\-])
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'op', 'int', 'name', 'eof'
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        for i, ch in enumerate(chunk):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


KEYWORDS = {"not", "and", "or", "exists", "forall", "secret", "expert", "F", "K"}


class TokenStream:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def peek(self) -> Token:
        return self.tokens[self.i]

    def peek_at(self, k: int) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek
        return tok.kind in ("op", "name") and tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.next()
            return True
        return False

    def error(self, message: str, expected: set[str] | frozenset[str] = frozenset()) -> ParseError:
        tok = self.peek
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        return ParseError(f"{message}, found {found}", tok.line, tok.column, frozenset(expected))

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r}", {text})
        return self.next()

    def expect_name(self) -> Token:
        tok = self.peek
        if tok.kind != "name" or tok.text in KEYWORDS:
            raise self.error("expected a name", {"<name>"})
        return self.next()


# -- parser ------------------------------------------------------------------

_ATOM_START = {"F", "K", "expert", "exists", "forall", "(", "not"}


def parse_agent_expr(ts: TokenStream) -> AgentRef:
    tok = ts.peek
    if tok.kind == "int":
        ts.next()
        base = tok.text
    elif tok.kind == "name" and tok.text not in KEYWORDS:
        ts.next()
        base = tok.text
    else:
        raise ts.error("expected an agent", {"<name>", "<integer>"})
    offset = 0
    while ts.at("+") or ts.at("-"):
        sign = 1 if ts.next().text == "+" else -1
        num = ts.peek
        if num.kind != "int":
            raise ts.error("expected an integer offset", {"<integer>"})
        ts.next()
        offset += sign * int(num.text)
    if tok.kind == "int" and offset == 0:
        if int(base) < 1:
            raise ParseError("agent numerals are 1-based", tok.line, tok.column)
        return int(base) - 1
    return Term(base, offset)


def parse_disj(ts: TokenStream) -> Formula:
    tok = ts.peek
    left = parse_conj(ts)
    while ts.accept("or"):
        left = Or(left, parse_conj(ts), pos=(tok.line, tok.column))
    return left


def parse_conj(ts: TokenStream) -> Formula:
    tok = ts.peek
    left = parse_unary(ts)
    while ts.accept("and"):
        left = And(left, parse_unary(ts), pos=(tok.line, tok.column))
    return left


def parse_unary(ts: TokenStream) -> Formula:
    tok = ts.peek
    if ts.accept("not"):
        return Not(parse_unary(ts), pos=(tok.line, tok.column))
    return parse_atom(ts)


def parse_atom(ts: TokenStream) -> Formula:
    tok = ts.peek
    pos = (tok.line, tok.column)
    if ts.at("F") and ts.peek_at(1).text == "[":
        ts.next()
        ts.expect("[")
        agent = parse_agent_expr(ts)
        ts.expect("]")
        ts.expect("secret")
        ts.expect("(")
        owner = parse_agent_expr(ts)
        ts.expect(")")
        return Familiar(agent, owner, pos=pos)
    if ts.at("K") and ts.peek_at(1).text == "[":
        ts.next()
        ts.expect("[")
        agent = parse_agent_expr(ts)
        ts.expect("]")
        return Knows(agent, parse_unary(ts), pos=pos)
    if ts.accept("expert"):
        ts.expect("(")
        agent = parse_agent_expr(ts)
        ts.expect(")")
        return Expert(agent, pos=pos)
    if ts.at("exists") or ts.at("forall"):
        cls = Exists if ts.next().text == "exists" else Forall
        var = ts.expect_name().text
        excluded: list[AgentRef] = []
        if ts.accept("!="):
            excluded.append(parse_agent_expr(ts))
            while ts.accept(","):
                excluded.append(parse_agent_expr(ts))
        ts.expect(":")
        return cls(var, tuple(excluded), parse_disj(ts), pos=pos)
    if ts.accept("("):
        inner = parse_disj(ts)
        ts.expect(")")
        return inner
    raise ts.error("expected a formula", {"F[", "K[", "expert(", "exists", "forall", "not", "("})


def parse_formula(text: str) -> Formula:
    ts = TokenStream(text)
    f = parse_disj(ts)
    if ts.peek.kind != "eof":
        raise ts.error("trailing input", {"and", "or", "<end>"})
    return f


# -- analysis ------------------------------------------------------------------

def free_vars(f: Formula) -> set[str]:
    def refs(a: AgentRef) -> set[str]:
        return {a.name} if isinstance(a, Term) and not a.name.isdigit() else set()

    if isinstance(f, Familiar):
        return refs(f.agent) | refs(f.owner)
    if isinstance(f, Expert):
        return refs(f.agent)
    if isinstance(f, Not):
        return free_vars(f.body)
    if isinstance(f, Knows):
        return refs(f.agent) | free_vars(f.body)
    if isinstance(f, (And, Or)):
        return free_vars(f.left) | free_vars(f.right)
    out = free_vars(f.body) - {f.var}
    for x in f.excluded:
        out |= refs(x)
    return out


def is_ground(f: Formula) -> bool:
    for g in subformulas(f):
        if isinstance(g, (Expert, Exists, Forall)):
            return False
        agents = (g.agent, g.owner) if isinstance(g, Familiar) else (
            (g.agent,) if isinstance(g, Knows) else ())
        if any(not isinstance(a, int) for a in agents):
            return False
    return True


def k_depth(f: Formula) -> int:
    if isinstance(f, (Familiar, Expert)):
        return 0
    if isinstance(f, Knows):
        return 1 + k_depth(f.body)
    if isinstance(f, (And, Or)):
        return max(k_depth(f.left), k_depth(f.right))
    return k_depth(f.body)


def resolve_agent(a: AgentRef, binding: Mapping[str, int], n: int) -> int:
    if isinstance(a, int):
        base = a
        offset = 0
    else:
        offset = a.offset
        if a.name in binding:
            base = binding[a.name]
        elif a.name.isdigit():
            base = int(a.name) - 1
        elif len(a.name) == 1 and a.name.islower() and ord(a.name) - ord("a") < n:
            # agent letters are names of concrete agents unless rebound
            base = ord(a.name) - ord("a")
        else:
            raise UnboundVariable(f"unbound agent variable {a.name!r}")
    if not 0 <= base < n:
        raise FormulaError(f"agent index {base + 1} out of range for n={n}")
    return (base + offset) % n


def instantiate(f: Formula, binding: Mapping[str, int], n: int) -> Formula:
    """Ground ``f``: resolve agents mod ``n``, expand quantifiers and ``expert``."""
    r = lambda a: resolve_agent(a, binding, n)  # noqa: E731
    if isinstance(f, Familiar):
        return Familiar(r(f.agent), r(f.owner))
    if isinstance(f, Expert):
        a = r(f.agent)
        return conj([Familiar(a, p) for p in range(n)])
    if isinstance(f, Not):
        return Not(instantiate(f.body, binding, n))
    if isinstance(f, Knows):
        return Knows(r(f.agent), instantiate(f.body, binding, n))
    if isinstance(f, And):
        return And(instantiate(f.left, binding, n), instantiate(f.right, binding, n))
    if isinstance(f, Or):
        return Or(instantiate(f.left, binding, n), instantiate(f.right, binding, n))
    excluded = {r(x) for x in f.excluded}
    parts = [
        instantiate(f.body, {**binding, f.var: k}, n) for k in range(n) if k not in excluded
    ]
    if not parts:
        raise FormulaError(f"quantifier over {f.var!r} ranges over no agents")
    return disj(parts) if isinstance(f, Exists) else conj(parts)


def desugar(f: Formula) -> Formula:
    """Rewrite a ground formula into the core grammar (F, not, and, K)."""
    if isinstance(f, Familiar):
        return f
    if isinstance(f, Not):
        return Not(desugar(f.body))
    if isinstance(f, And):
        return And(desugar(f.left), desugar(f.right))
    if isinstance(f, Or):
        return Not(And(Not(desugar(f.left)), Not(desugar(f.right))))
    if isinstance(f, Knows):
        return Knows(f.agent, desugar(f.body))
    raise FormulaError("desugar needs a ground formula; instantiate first")


def _mentions_only_owner(f: Formula, owner: int) -> bool:
    for g in subformulas(f):
        if isinstance(g, Knows):
            return False
        if isinstance(g, Familiar) and g.agent != owner:
            return False
    return True


def _wrap(f: Formula, owner: int) -> Formula:
    if _mentions_only_owner(f, owner):
        return Knows(owner, f)
    if isinstance(f, Knows):
        if f.agent != owner:
            raise OutsideGuardLanguage(f"knowledge of agent {f.agent + 1} in a guard of agent {owner + 1}")
        return f
    if isinstance(f, Not):
        return Not(_wrap(f.body, owner))
    if isinstance(f, And):
        return And(_wrap(f.left, owner), _wrap(f.right, owner))
    if isinstance(f, Or):
        return Or(_wrap(f.left, owner), _wrap(f.right, owner))
    raise OutsideGuardLanguage(
        f"{render(f, letters=True)!r} is not a statement agent {owner + 1} can evaluate locally")


def normalize_guard(owner: int, f: Formula) -> Guard:
    """Bring a ground formula into the owner's guard language.

    Agent ``a`` always knows her own secret set, so any Knows-free
    subformula about ``F[a]`` atoms only is equivalent to ``K[a]`` of it
    and gets wrapped.  Anything else must already be a boolean combination
    of ``K[a]`` formulas.
    """
    if not is_ground(f):
        raise FormulaError("normalize_guard needs a ground formula")
    return Guard(owner, _wrap(f, owner))


def in_guard_language(owner: int, f: Formula) -> bool:
    if isinstance(f, Knows):
        return f.agent == owner
    if isinstance(f, Not):
        return in_guard_language(owner, f.body)
    if isinstance(f, (And, Or)):
        return in_guard_language(owner, f.left) and in_guard_language(owner, f.right)
    return False
