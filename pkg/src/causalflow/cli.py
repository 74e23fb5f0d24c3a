"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 admission or parse rejection,
3 invariant violation (``check``) or a demo trace mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from decimal import Decimal
from pathlib import Path

from . import scenarios
from .errors import (
    AdmissionRejected, CausalFlowError, DefinitionError, FormulaError, HistoryError,
    StepLimitExceeded,
)
from .evaluate import Truth, evaluate
from .events import Key
from .formula import to_text
from .parser import parse_history
from .policy import ConflictMode, ConflictPolicy, lww_value
from .store import LOG_NAME, Workspace, check

EXIT_OK, EXIT_USAGE, EXIT_REJECTED, EXIT_VIOLATION = 0, 1, 2, 3
DEFAULT_WORKSPACE = ".causalflow"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _policy(args) -> ConflictPolicy:
    return ConflictPolicy(ConflictMode(getattr(args, "conflict_policy", "conservative")))


def _open(args) -> Workspace:
    root = Path(args.workspace)
    if not (root / LOG_NAME).exists():
        raise UsageError(f"no workspace at {root} (run 'causalflow init')")
    return Workspace.open(root, _policy(args))


def _resolve_id(ws: Workspace, prefix: str) -> str:
    hits = [e.id for e in ws.history if e.id.startswith(prefix)]
    if len(hits) != 1:
        raise UsageError(f"{'no' if not hits else 'ambiguous'} event id {prefix!r}")
    return hits[0]


def _json(v):
    return str(v) if isinstance(v, Decimal) else v


def _describe(ws: Workspace, eid: str) -> str:
    e = ws.history[eid]
    return f"{e.id} {e.model_id} {e.actor}"


# -- commands -------------------------------------------------------------------

def cmd_init(args, out) -> int:
    ws = Workspace.init(args.workspace)
    print(f"initialized workspace at {ws.log_path.parent}", file=out)
    return EXIT_OK


def cmd_model_add(args, out) -> int:
    ws = _open(args)
    for m in ws.add_models(Path(args.file).read_text(encoding="utf-8"), args.actor):
        print(f"registered model {m.id} ({m.model_type.value})", file=out)
    return EXIT_OK


def cmd_guard_add(args, out) -> int:
    ws = _open(args)
    for g in ws.add_guards(Path(args.file).read_text(encoding="utf-8"), args.actor):
        print(f"registered guard {g.id}: {to_text(g.formula)}", file=out)
    return EXIT_OK


def _coerce_sets(ws: Workspace, model_id: str, sets: list[str]) -> dict:
    model = ws.models.get(model_id)
    payload = {}
    for item in sets:
        path, sep, text = item.partition("=")
        if not sep or not path:
            raise UsageError(f"--set expects path=value, got {item!r}")
        spec = model.schema.fields.get(path) if model is not None else None
        payload[path] = spec.coerce(text) if spec is not None else text
    return payload


def cmd_emit(args, out) -> int:
    ws = _open(args)
    payload = _coerce_sets(ws, args.model, args.set or [])
    refs = [_resolve_id(ws, r) for r in args.ref or []]
    e = ws.submit(args.model, args.actor, args.context, payload, args.role, refs)
    print(f"admitted {e.id}", file=out)
    for r in sorted(e.refs):
        tags = "+".join(sorted(t.value for t in e.ref_origins[r]))
        print(f"  ref {r} {tags}", file=out)
    return EXIT_OK


def cmd_run(args, out) -> int:
    ws = _open(args)

    def report(res, history):
        n = report.count = getattr(report, "count", 0) + 1
        if res.quiescent:
            print(f"step {n}: fixpoint", file=out)
            return
        print(f"step {n}: {len(res.batch)} event(s)", file=out)
        for e in res.batch:
            print(f"  + {e.id} {e.model_id} {e.actor} {e.context}", file=out)
        for rej in res.rejected:
            print(f"  ! guard {rej.guard} rejected: {rej.reason}", file=out)

    result = ws.run(args.max_steps, on_step=report)
    added = sum(len(s.batch) for s in result.steps)
    print(f"{added} event(s) appended in {result.step_count} step(s)", file=out)
    return EXIT_OK


def cmd_query(args, out) -> int:
    ws = _open(args)
    formula = parse_history(args.formula)
    res = evaluate(ws.history, formula, ws.policy)
    print(res.truth.value, file=out)
    if res.truth is Truth.TRUE:
        for name, ids in sorted(res.bindings.items()):
            for eid in sorted(ids):
                print(f"  {name} = {_describe(ws, eid)}", file=out)
    for c in res.conflicts:
        print(f"  conflict {c.actor}@{c.key}: {' '.join(sorted(c.candidates))}", file=out)
    return EXIT_OK


def cmd_trace(args, out) -> int:
    ws = _open(args)
    eid = _resolve_id(ws, args.event_id)
    e = ws.history[eid]
    g = ws.history.graph
    for member in g.topological_order(g.causal_cone(eid)):
        tags = "+".join(sorted(t.value for t in e.ref_origins[member])) if member in e.refs else "transitive"
        m = ws.history[member]
        print(f"{m.id} {m.model_id} {m.actor} {tags}", file=out)
    return EXIT_OK


def cmd_lww(args, out) -> int:
    ws = _open(args)
    model, sep, context = args.key.partition(",")
    if not sep:
        raise UsageError("--key expects MODEL,CONTEXT")
    reading = lww_value(ws.history, args.actor, Key(model, context))
    if reading.status == "value":
        print(json.dumps({k: _json(v) for k, v in reading.payload.items()}, sort_keys=True), file=out)
        print(f"  from {reading.event_id}", file=out)
    elif reading.status == "absent":
        print("absent", file=out)
    else:
        print(f"undefined: parallel maxima {' '.join(reading.candidates)}", file=out)
    return EXIT_OK


def cmd_check(args, out) -> int:
    log = Path(args.workspace) / LOG_NAME
    if not log.exists():
        raise UsageError(f"no workspace at {args.workspace}")
    report = check(log)
    for line in report.lines():
        print(line, file=out)
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_demo(args, out) -> int:
    if args.scenario == "payment":
        got = scenarios.payment_trace(scenarios.payment(_policy(args)))
        want = scenarios.EXPECTED_PAYMENT_TRACE
    else:
        got = scenarios.fence_trace(scenarios.fence(_policy(args)))
        want = scenarios.EXPECTED_FENCE_TRACE
    for line in got:
        print(line, file=out)
    if got != want:
        print("MISMATCH against the embedded expected trace:", file=out)
        for w, g in zip(want, got):
            if w != g:
                print(f"  expected: {w}\n  got:      {g}", file=out)
        return EXIT_VIOLATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="causalflow", description="Causal event store and guard executor.")
    p.add_argument("--workspace", "-w", default=os.environ.get("CAUSALFLOW_WORKSPACE", DEFAULT_WORKSPACE),
                   help="workspace directory (default: %(default)s)")
    policy = argparse.ArgumentParser(add_help=False)
    policy.add_argument("--conflict-policy", choices=[m.value for m in ConflictMode], default="conservative")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("init", help="create an empty workspace").set_defaults(fn=cmd_init)

    for kind, fn in (("model", cmd_model_add), ("guard", cmd_guard_add)):
        grp = sub.add_parser(kind, help=f"manage {kind} definitions")
        grp_sub = grp.add_subparsers(dest="action", required=True, parser_class=_Parser)
        add = grp_sub.add_parser("add", help=f"register {kind}s from a definition file")
        add.add_argument("file")
        add.add_argument("--actor", default="admin")
        add.set_defaults(fn=fn)

    emit = sub.add_parser("emit", parents=[policy], help="submit an event through admission")
    emit.add_argument("--model", required=True)
    emit.add_argument("--actor", required=True)
    emit.add_argument("--role")
    emit.add_argument("--context", required=True)
    emit.add_argument("--set", action="append", metavar="PATH=VALUE")
    emit.add_argument("--ref", action="append", metavar="ID", help="extra explicit ref (id prefix)")
    emit.set_defaults(fn=cmd_emit)

    run = sub.add_parser("run", parents=[policy], help="run guards to a fixpoint")
    run.add_argument("--max-steps", type=int, default=100)
    run.set_defaults(fn=cmd_run)

    query = sub.add_parser("query", parents=[policy], help="evaluate a history formula")
    query.add_argument("formula")
    query.set_defaults(fn=cmd_query)

    trace = sub.add_parser("trace", help="print the causal cone of an event")
    trace.add_argument("event_id")
    trace.set_defaults(fn=cmd_trace)

    lww = sub.add_parser("lww", help="last-writer-wins value of an (actor, key) cell")
    lww.add_argument("--actor", required=True)
    lww.add_argument("--key", required=True, metavar="MODEL,CONTEXT")
    lww.set_defaults(fn=cmd_lww)

    sub.add_parser("check", help="verify log invariants").set_defaults(fn=cmd_check)

    demo = sub.add_parser("demo", parents=[policy], help="run a built-in scenario")
    demo.add_argument("scenario", choices=["payment", "fence"])
    demo.set_defaults(fn=cmd_demo)
    return p


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AdmissionRejected as exc:
        print(f"rejected: {exc.report.verdict}: {exc.report.reason}", file=sys.stderr)
        return EXIT_REJECTED
    except (FormulaError, DefinitionError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    except StepLimitExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    except HistoryError as exc:
        print(f"log error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (CausalFlowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
