"""Single computations under pluggable schedulers."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Sequence

from .core import Call, GossipSituation, agent_name, render_calls
from .epistemic import EpistemicState
from .protocol import Protocol, enabled_rules


class Stop(enum.Enum):
    EXIT = "exit"
    STEP_LIMIT = "step-limit"
    SCRIPT_END = "script-end"
    SCRIPT_INVALID = "script-invalid"


class Scheduler:
    """Picks one ``(agent, rule, call)`` among the enabled ones, or ends the run."""

    label = "scheduler"

    def reset(self) -> None:
        pass

    def choose(self, step: int, options: list[tuple[int, int, Call]], n: int):
        raise NotImplementedError


class UniformRandom(Scheduler):
    """Uniform draw over enabled (agent, rule) pairs."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = random.Random(seed)

    @property
    def label(self) -> str:
        return f"random(seed={self.seed})"

    def reset(self) -> None:
        self.rng = random.Random(self.seed)

    def choose(self, step, options, n):
        return self.rng.choice(options)


class RoundRobin(Scheduler):
    """Serves agents in cyclic order, skipping disabled ones; lowest enabled rule first."""

    label = "round-robin"

    def __init__(self):
        self.next_agent = 0

    def reset(self) -> None:
        self.next_agent = 0

    def choose(self, step, options, n):
        by_agent = {}
        for opt in options:
            by_agent.setdefault(opt[0], opt)  # options come ordered by agent, then rule
        for k in range(n):
            a = (self.next_agent + k) % n
            if a in by_agent:
                self.next_agent = (a + 1) % n
                return by_agent[a]
        raise AssertionError("no enabled agent")


class Scripted(Scheduler):
    """Replays a fixed call sequence; a disabled call invalidates the run."""

    label = "script"

    def __init__(self, calls: Sequence[Call]):
        self.calls = tuple(calls)

    def choose(self, step, options, n):
        if step >= len(self.calls):
            return Stop.SCRIPT_END
        call = self.calls[step]
        for opt in options:
            if opt[2] == call:
                return opt
        return Stop.SCRIPT_INVALID


@dataclass
class Trace:
    protocol: Protocol
    scheduler: str
    calls: list[Call] = field(default_factory=list)
    situations: list[GossipSituation] = field(default_factory=list)
    enabled: list[frozenset[int]] = field(default_factory=list)  # before each step, and at the end
    stop: Stop = Stop.EXIT
    failing_step: int | None = None  # 1-based, for an invalid script

    @property
    def final(self) -> GossipSituation:
        return self.situations[-1] if self.situations else GossipSituation.root(self.protocol.n)

    def render(self) -> str:
        p = self.protocol
        style = p.style
        lines = [f"# protocol={p.name} n={p.n} mode={p.mode.value} "
                 f"topology={p.topology.value} scheduler={self.scheduler}"]
        for k, (call, s) in enumerate(zip(self.calls, self.situations), start=1):
            lines.append(f"step {k}: {call.render(style)} -> {s.render(style)}")
        end = f"# stop={self.stop.value} steps={len(self.calls)}"
        if self.failing_step is not None:
            end += f" failing_step={self.failing_step}"
        lines.append(end)
        return "\n".join(lines)

    def calls_text(self) -> str:
        return render_calls(self.calls, self.protocol.style)


def run(p: Protocol, sched: Scheduler, max_steps: int = 1000) -> Trace:
    if max_steps < 0:
        raise ValueError("max_steps must be non-negative")
    sched.reset()
    trace = Trace(p, sched.label)
    st: EpistemicState = p.frame.initial()
    step = 0
    while True:
        options = enabled_rules(p, st)
        trace.enabled.append(frozenset(a for a, _, _ in options))
        if not options:
            trace.stop = Stop.EXIT
            break
        if step >= max_steps:
            trace.stop = Stop.STEP_LIMIT
            break
        choice = sched.choose(step, options, p.n)
        if isinstance(choice, Stop):
            trace.stop = choice
            if choice is Stop.SCRIPT_INVALID:
                trace.failing_step = step + 1
            break
        call = choice[2]
        st = p.frame.step(st, call)
        trace.calls.append(call)
        trace.situations.append(st.situation)
        step += 1
    if trace.stop is Stop.EXIT and isinstance(sched, Scripted) and step < len(sched.calls):
        # the script asks for a call after the protocol has exited
        trace.stop = Stop.SCRIPT_INVALID
        trace.failing_step = step + 1
    return trace


@dataclass(frozen=True)
class AgentAudit:
    agent: int
    enabled: int
    selected: int
    starved_suffix: int  # length of the final run of enabled-but-not-selected steps
    flagged: bool


def fairness_audit(t: Trace, window: int | None = None) -> list[AgentAudit]:
    """Finite-trace stand-in for fairness.

    An agent is flagged when it was enabled, and never selected, at each of
    the last ``window`` steps or more (default ``n**2``).  Only states in
    which a call was placed count as steps.
    """
    n = t.protocol.n
    k = n * n if window is None else window
    out = []
    for a in range(n):
        enabled = selected = run_len = 0
        for en, call in zip(t.enabled, t.calls):
            if a in en:
                enabled += 1
            if call.caller == a:
                selected += 1
                run_len = 0
            elif a in en:
                run_len += 1
            else:
                run_len = 0
        out.append(AgentAudit(a, enabled, selected, run_len, run_len >= k))
    return out


def render_audit(t: Trace, audit: list[AgentAudit]) -> str:
    style = t.protocol.style
    rows = ["agent,enabled,selected,starved_suffix,flagged"]
    for r in audit:
        rows.append(f"{agent_name(r.agent, style)},{r.enabled},{r.selected},"
                    f"{r.starved_suffix},{str(r.flagged).lower()}")
    return "\n".join(rows)
