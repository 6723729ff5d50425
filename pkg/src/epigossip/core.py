"""Agents, secrets, calls and gossip situations.

Agents are integer indices ``0 .. n-1``.  Secret ``i`` belongs to agent
``i``.  A secret set is an ``n``-bit mask.  Complete-graph protocols render
agents as lowercase letters (``a``, ``b``, ...) and secrets as uppercase
letters; ring protocols render both as 1-based integers.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence


class GossipError(ValueError):
    """Base class for invalid input to the library."""


class Mode(enum.Enum):
    PUSH_PULL = "push-pull"
    PUSH = "push"
    PULL = "pull"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        key = text.strip().lower().replace("_", "-")
        aliases = {"pushpull": "push-pull", "pp": "push-pull"}
        key = aliases.get(key, key)
        for mode in cls:
            if mode.value == key:
                return mode
        raise GossipError(f"unknown mode {text!r}")

    @property
    def arrow(self) -> str:
        return {"push-pull": "<->", "push": "->", "pull": "<-"}[self.value]


class Topology(enum.Enum):
    COMPLETE = "complete"
    RING = "ring"

    @classmethod
    def parse(cls, text: str) -> "Topology":
        key = text.strip().lower()
        if key in ("directed-ring", "dr"):
            key = "ring"
        for top in cls:
            if top.value == key:
                return top
        raise GossipError(f"unknown topology {text!r}")

    @property
    def style(self) -> str:
        return "numbers" if self is Topology.RING else "letters"


def check_agents(n: int) -> None:
    if n < 3:
        raise GossipError(f"at least three agents are required, got {n}")


# -- rendering -------------------------------------------------------------

def agent_name(a: int, style: str = "letters") -> str:
    if style == "letters":
        if a >= 26:
            raise GossipError("letter names are limited to 26 agents")
        return chr(ord("a") + a)
    return str(a + 1)


def secret_name(p: int, style: str = "letters") -> str:
    return agent_name(p, style).upper()


def parse_agent(token: str, n: int | None = None) -> int:
    """Parse ``'c'`` or ``'3'`` (1-based) into an agent index."""
    token = token.strip()
    if token.isdigit():
        a = int(token) - 1
    elif len(token) == 1 and token.isalpha():
        a = ord(token.lower()) - ord("a")
    else:
        raise GossipError(f"bad agent name {token!r}")
    if a < 0 or (n is not None and a >= n):
        raise GossipError(f"agent {token!r} out of range for n={n}")
    return a


@dataclass(frozen=True, slots=True)
class Call:
    caller: int
    callee: int
    mode: Mode = Mode.PUSH_PULL

    def __post_init__(self) -> None:
        if self.caller == self.callee:
            raise GossipError("an agent cannot call itself")

    def involves(self, a: int) -> bool:
        return a == self.caller or a == self.callee

    def partner(self, a: int) -> int:
        return self.callee if a == self.caller else self.caller

    def render(self, style: str = "letters") -> str:
        return agent_name(self.caller, style) + self.mode.arrow + agent_name(self.callee, style)

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True, slots=True)
class GossipSituation:
    """Per-agent secret masks; ``secrets[a]`` is the set Q_a."""

    secrets: tuple[int, ...]

    def __post_init__(self) -> None:
        for a, q in enumerate(self.secrets):
            if not (q >> a) & 1:
                raise GossipError(f"agent {a} lost its own secret")

    @classmethod
    def root(cls, n: int) -> "GossipSituation":
        return cls(tuple(1 << a for a in range(n)))

    @property
    def n(self) -> int:
        return len(self.secrets)

    def knows(self, a: int, p: int) -> bool:
        return bool((self.secrets[a] >> p) & 1)

    def render(self, style: str = "letters") -> str:
        return ".".join(
            "".join(secret_name(p, style) for p in range(self.n) if (q >> p) & 1)
            for q in self.secrets
        )

    def __str__(self) -> str:
        return self.render()

    @classmethod
    def parse(cls, text: str) -> "GossipSituation":
        parts = text.strip().split(".")
        n = len(parts)
        masks = []
        for part in parts:
            q = 0
            for ch in part:
                q |= 1 << parse_agent(ch, n)
            masks.append(q)
        return cls(tuple(masks))

    # Packed form used by the epistemic engine: bit a*n + p is "a holds p".
    def code(self) -> int:
        n = self.n
        out = 0
        for a, q in enumerate(self.secrets):
            out |= q << (a * n)
        return out

    @classmethod
    def from_code(cls, code: int, n: int) -> "GossipSituation":
        full = (1 << n) - 1
        return cls(tuple((code >> (a * n)) & full for a in range(n)))


def apply_call(call: Call, s: GossipSituation) -> GossipSituation:
    a, b = call.caller, call.callee
    q = list(s.secrets)
    union = q[a] | q[b]
    if call.mode is Mode.PUSH_PULL:
        q[a] = q[b] = union
    elif call.mode is Mode.PUSH:
        q[b] = union
    else:
        q[a] = union
    return GossipSituation(tuple(q))


def apply_sequence(seq: Iterable[Call], s: GossipSituation) -> GossipSituation:
    modes = set()
    for call in seq:
        modes.add(call.mode)
        if len(modes) > 1:
            raise GossipError("call sequence mixes communication modes")
        s = apply_call(call, s)
    return s


def is_expert(a: int, s: GossipSituation) -> bool:
    return s.secrets[a] == (1 << s.n) - 1


def ring_offset(a: int, k: int, n: int) -> int:
    check_agents(n)
    return (a + k) % n


def allowed_calls(topology: Topology, mode: Mode, n: int) -> list[Call]:
    check_agents(n)
    if topology is Topology.RING:
        return [Call(i, (i + 1) % n, mode) for i in range(n)]
    return [Call(i, j, mode) for i in range(n) for j in range(n) if i != j]


def is_allowed(call: Call, topology: Topology, n: int) -> bool:
    if not (0 <= call.caller < n and 0 <= call.callee < n):
        return False
    if topology is Topology.RING:
        return call.callee == (call.caller + 1) % n
    return True


# -- call text ---------------------------------------------------------------

_CALL_RE = re.compile(r"^\s*([A-Za-z]|\d+)\s*(<->|->|<-)\s*([A-Za-z]|\d+)\s*$")
_ARROWS = {"<->": Mode.PUSH_PULL, "->": Mode.PUSH, "<-": Mode.PULL}


def parse_call(text: str, n: int | None = None, mode: Mode | None = None) -> Call:
    """Parse ``a<->b``, ``a->b``, ``a<-b`` or the push-pull shorthand ``ab``."""
    m = _CALL_RE.match(text)
    if m:
        caller, arrow, callee = m.groups()
        call_mode = _ARROWS[arrow]
    else:
        stripped = text.strip()
        if len(stripped) == 2 and stripped.isalpha():
            caller, callee = stripped
            call_mode = Mode.PUSH_PULL
        else:
            raise GossipError(f"cannot parse call {text!r}")
    if mode is not None and call_mode is not mode:
        raise GossipError(f"call {text.strip()!r} is not a {mode.value} call")
    return Call(parse_agent(caller, n), parse_agent(callee, n), call_mode)


def parse_calls(text: str, n: int | None = None, mode: Mode | None = None) -> tuple[Call, ...]:
    calls = tuple(parse_call(part, n, mode) for part in text.split(";") if part.strip())
    if len({c.mode for c in calls}) > 1:
        raise GossipError("call sequence mixes communication modes")
    return calls


def render_calls(calls: Sequence[Call], style: str = "letters") -> str:
    return ";".join(c.render(style) for c in calls)
