"""``epigossip`` command line: check, simulate, eval, related, protocols, report."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from .core import (
    GossipError,
    Mode,
    Topology,
    agent_name,
    parse_agent,
    parse_calls,
    render_calls,
    secret_name,
)
from .epistemic import abstract, eval_bounded, eval_exact, related
from .explorer import (
    DEFAULT_MAX_STATES,
    Outcome,
    Property,
    Verdict,
    build_graph,
    check,
)
from .logic import instantiate, parse_formula
from .protocol import BUILTIN_NOTES, BUILTIN_SOURCES, Protocol, builtin, load_protocol
from .sim import RoundRobin, Scripted, Stop, UniformRandom, fairness_audit, render_audit, run

EXIT_OK, EXIT_FAIL, EXIT_LIMIT, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _mode(text: str | None) -> Mode | None:
    return None if text is None else Mode.parse(text)


def _add_model_flags(sp, topology=False):
    sp.add_argument("--agents", "-n", type=int, default=3, help="number of agents (>= 3)")
    sp.add_argument("--mode", choices=[m.value for m in Mode],
                    help="communication mode (default: the protocol's own, else push-pull)")
    if topology:
        sp.add_argument("--topology", choices=[t.value for t in Topology], default="complete")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="epigossip", description="Epistemic gossip protocol checker and simulator.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("check", help="decide correctness and (fair) termination")
    sp.add_argument("--protocol", "-p", required=True, help="builtin name or protocol file")
    _add_model_flags(sp)
    sp.add_argument("--property", default="all",
                    choices=[p.value for p in Property] + ["all"])
    sp.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES)
    sp.add_argument("--symmetry", choices=["auto", "on", "off"], default="auto",
                    help="explore up to agent renaming (auto: only for large graphs)")
    sp.add_argument("--json", action="store_true", help="one JSON object per property per line")

    sp = sub.add_parser("simulate", help="run one computation")
    sp.add_argument("--protocol", "-p", required=True)
    _add_model_flags(sp)
    sp.add_argument("--scheduler", choices=["random", "round-robin", "script"], default="random")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--script", default=None, help='calls such as "a<->b;c<->a"')
    sp.add_argument("--max-steps", type=int, default=1000)
    sp.add_argument("--audit", action="store_true", help="append the fairness audit as CSV")
    sp.add_argument("--window", type=int, default=None, help="audit window (default n*n)")

    sp = sub.add_parser("eval", help="evaluate a formula after a call sequence")
    sp.add_argument("--formula", "-f", required=True)
    sp.add_argument("--trace", "-t", default="")
    _add_model_flags(sp, topology=True)
    sp.add_argument("--method", choices=["exact", "bounded"], default="exact")
    sp.add_argument("--bound", type=int, default=4, help="extra calls searched by --method bounded")

    sp = sub.add_parser("related", help="decide whether two call sequences look alike to an agent")
    sp.add_argument("--left", required=True)
    sp.add_argument("--right", required=True)
    sp.add_argument("--agent", required=True)
    _add_model_flags(sp, topology=True)

    sub.add_parser("protocols", help="list builtin protocols")

    sp = sub.add_parser("report", help="termination matrix as CSV plus a figure")
    sp.add_argument("--agents", "-n", type=int, nargs="+", default=[3, 4])
    sp.add_argument("--protocols", nargs="+", default=["LNS", "HMS", "R3", "R4"])
    sp.add_argument("--out", default="report", help="directory for the CSV and PNG files")
    sp.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES)
    return ap


# -- check -----------------------------------------------------------------------

def verdict_record(p: Protocol, v: Verdict) -> dict:
    style = p.style
    rec = {
        "protocol": p.name,
        "n": p.n,
        "mode": p.mode.value,
        "topology": p.topology.value,
        "property": v.property.value,
        "verdict": v.outcome.value,
        "witness": None,
    }
    if v.witness is not None:
        rec["witness"] = render_calls(v.witness.calls, style)
        if v.witness.is_lasso:
            rec["cycle_start"] = len(v.witness.prefix)
    if "missing" in v.details:
        rec["missing"] = {agent_name(a, style): [secret_name(q, style) for q in qs]
                          for a, qs in v.details["missing"].items()}
    if "reason" in v.details:
        rec["limit"] = v.details["reason"]
    rec["stats"] = {k: v.stats[k] for k in ("states", "edges", "elapsed_ms") if k in v.stats}
    return rec


def format_human(rec: dict) -> str:
    head = (f"{rec['protocol']} n={rec['n']} {rec['mode']} {rec['topology']} "
            f"{rec['property']}: {rec['verdict']}")
    st = rec["stats"]
    head += f"  [{st.get('states')} states, {st.get('edges')} edges, {st.get('elapsed_ms')} ms]"
    lines = [head]
    if rec["witness"] is not None:
        if "cycle_start" in rec:
            calls = rec["witness"].split(";")
            k = rec["cycle_start"]
            lines.append(f"  lasso: {';'.join(calls[:k]) or '(empty)'} then repeat {';'.join(calls[k:])}")
        else:
            lines.append(f"  witness: {rec['witness'] or '(empty)'}")
    for agent, secrets in rec.get("missing", {}).items():
        lines.append(f"  agent {agent} lacks {', '.join(secrets)}")
    if "limit" in rec:
        lines.append(f"  stopped at {rec['limit']}")
    return "\n".join(lines)


def cmd_check(args, out) -> int:
    p = load_protocol(args.protocol, args.agents, _mode(args.mode))
    props = list(Property) if args.property == "all" else [Property(args.property)]
    symmetry = {"auto": None, "on": True, "off": False}[args.symmetry]
    g = build_graph(p, max_states=args.max_states, symmetry=symmetry)
    outcomes = []
    for prop in props:
        v = check(g, prop)
        outcomes.append(v.outcome)
        rec = verdict_record(p, v)
        print(json.dumps(rec) if args.json else format_human(rec), file=out)
    if Outcome.FAILS in outcomes:
        return EXIT_FAIL
    if Outcome.RESOURCE_LIMITED in outcomes:
        return EXIT_LIMIT
    return EXIT_OK


# -- simulate --------------------------------------------------------------------

def cmd_simulate(args, out) -> int:
    p = load_protocol(args.protocol, args.agents, _mode(args.mode))
    if args.scheduler == "script":
        if args.script is None:
            raise UsageError("--scheduler script needs --script")
        sched = Scripted(parse_calls(args.script, p.n, p.mode))
    elif args.scheduler == "round-robin":
        sched = RoundRobin()
    else:
        sched = UniformRandom(args.seed)
    t = run(p, sched, args.max_steps)
    print(t.render(), file=out)
    if args.audit:
        print(render_audit(t, fairness_audit(t, args.window)), file=out)
    if t.stop is Stop.SCRIPT_INVALID:
        return EXIT_USAGE
    if t.stop is Stop.STEP_LIMIT:
        return EXIT_FAIL
    return EXIT_OK


# -- eval / related -------------------------------------------------------------------

def _sequence_mode(args, *texts: str) -> Mode:
    if args.mode is not None:
        return Mode.parse(args.mode)
    for text in texts:
        calls = parse_calls(text, args.agents)
        if calls:
            return calls[0].mode
    return Mode.PUSH_PULL


def cmd_eval(args, out) -> int:
    mode = _sequence_mode(args, args.trace)
    topology = Topology.parse(args.topology)
    n = args.agents
    calls = parse_calls(args.trace, n, mode)
    f = instantiate(parse_formula(args.formula), {}, n)
    if args.method == "exact":
        print(str(eval_exact(f, abstract(calls, n, mode, topology))).lower(), file=out)
        return EXIT_OK
    r = eval_bounded(f, calls, args.bound, n, mode, topology)
    line = str(r)
    if r.witness is not None:
        line += f" witness={render_calls(r.witness, topology.style) or '(empty)'}"
    print(line, file=out)
    return EXIT_OK


def cmd_related(args, out) -> int:
    mode = _sequence_mode(args, args.left, args.right)
    n = args.agents
    left = parse_calls(args.left, n, mode)
    right = parse_calls(args.right, n, mode)
    agent = parse_agent(args.agent, n)
    print(str(related(left, right, agent, n)).lower(), file=out)
    return EXIT_OK


def cmd_protocols(args, out) -> int:
    for name in BUILTIN_SOURCES:
        n = 3
        p = builtin(name, n)
        print(f"{name:5} {p.topology.value:8} {p.mode.value:9} {BUILTIN_NOTES[name]}", file=out)
    return EXIT_OK


def cmd_report(args, out) -> int:
    from .report import termination_matrix, write_report

    rows = termination_matrix(args.protocols, args.agents, max_states=args.max_states)
    csv_path, png_path = write_report(rows, args.out)
    with open(csv_path, encoding="utf-8") as fh:
        out.write(fh.read())
    print(f"# wrote {csv_path} and {png_path}", file=out)
    if any(r["termination"] == "resource-limited" or r["fair_termination"] == "resource-limited"
           for r in rows):
        return EXIT_LIMIT
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "eval": cmd_eval,
    "related": cmd_related,
    "protocols": cmd_protocols,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except GossipError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
