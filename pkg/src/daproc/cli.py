"""Command line entry point.

Exit codes: 0 success, 1 usage, 2 spec or input errors, 3 runtime failures
(script aborts, constraint violations, replay mismatches).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import parser as speclang
from . import statespace, store
from .engine import Engine, Modality, parse_script
from .errors import (
    DaprocError,
    InvalidDelta,
    MockConfigError,
    ParseError,
    ScriptError,
)
from .services import ServiceRegistry, load_mock_config


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _load_spec(path: str, *, show_warnings=False):
    from .model import validate_spec

    try:
        text = Path(path).read_text()
    except OSError as e:
        print(f"{path}: {e.strerror or e}", file=sys.stderr)
        sys.exit(2)
    try:
        spec = speclang.parse_spec(text)
    except ParseError as e:
        for d in e.diagnostics:
            print(f"{path}:{d}", file=sys.stderr)
        sys.exit(2)
    report = validate_spec(spec)
    for issue in report.errors:
        print(f"{path}: {issue}", file=sys.stderr)
    if show_warnings:
        for issue in report.warnings:
            print(f"{path}: {issue}", file=sys.stderr)
    if report.errors:
        sys.exit(2)
    return spec


def _load_instance(spec, path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
        return store.instance_from_json(spec, doc)
    except OSError as e:
        print(f"{path}: {e.strerror or e}", file=sys.stderr)
        sys.exit(2)
    except (json.JSONDecodeError, InvalidDelta) as e:
        print(f"{path}: {e}", file=sys.stderr)
        sys.exit(2)


def cmd_validate(args):
    spec = _load_spec(args.spec, show_warnings=True)
    print(f"OK: {len(spec.relations)} relations, {len(spec.actions)} actions")
    return 0


def cmd_enact(args):
    spec = _load_spec(args.spec)
    init = _load_instance(spec, args.init)
    modality = Modality.HISTORY if args.mode == "history" else Modality.PLAIN
    try:
        engine = Engine(spec, init, modality=modality, persist_path=args.persist)
    except DaprocError as e:
        print(f"cannot initialize: {e}", file=sys.stderr)
        return 3
    if args.script:
        try:
            steps = parse_script(Path(args.script).read_text())
        except OSError as e:
            print(f"{args.script}: {e.strerror or e}", file=sys.stderr)
            return 2
        except ParseError as e:
            for d in e.diagnostics:
                print(f"{args.script}:{d}", file=sys.stderr)
            return 2
        for i, step in enumerate(steps, 1):
            try:
                s = engine.run_script([step])
            except ScriptError as e:
                print(f"step {i}: {e.cause}", file=sys.stderr)
                return 3
            values = ", ".join(speclang.render_value(v) for v in step.values)
            print(f"step {i}: {step.action}({values}) -> state {s}")
    print(f"final state: {engine.current_state}")
    if args.serve:
        from .server import serve

        serve(engine, args.addr)
    return 0


def cmd_statespace(args):
    spec = _load_spec(args.spec)
    init = _load_instance(spec, args.init)
    try:
        config = load_mock_config(args.services) if args.services else {}
    except (OSError, MockConfigError) as e:
        print(f"{args.services}: {e}", file=sys.stderr)
        return 2
    try:
        ts = statespace.build(spec, init, config, max_states=args.max_states)
    except DaprocError as e:
        print(f"build failed: {e}", file=sys.stderr)
        return 3
    status = "complete" if ts.complete else "incomplete"
    print(f"state space: {len(ts.states)} states, {len(ts.edges)} edges, {status}")
    if args.out:
        fmt = "dot" if args.out.endswith(".dot") else "json"
        Path(args.out).write_text(statespace.export(ts, fmt))
        print(f"wrote {args.out}")
    return 0


def cmd_replay(args):
    try:
        engine = Engine.resume(args.journal)
    except OSError as e:
        print(f"{args.journal}: {e.strerror or e}", file=sys.stderr)
        return 2
    except DaprocError as e:
        print(f"replay failed: {e}", file=sys.stderr)
        return 3
    st = engine.store
    print(
        f"replayed: {len(st.states)} states, {len(st.transitions)} transitions, "
        f"current state {st.current}"
    )
    if args.serve:
        from .server import serve

        serve(engine, args.addr)
    return 0


def main(argv=None):
    top = _Parser(prog="daproc", description="Data-aware process engine")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a specification")
    p.add_argument("spec")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("enact", help="run an enactment, optionally scripted or served")
    p.add_argument("spec")
    p.add_argument("--init", help="initial instance as JSON ({relation: [rows]})")
    p.add_argument("--mode", choices=["plain", "history"], default="plain")
    p.add_argument("--script", help="script file of ACTION steps")
    p.add_argument("--persist", help="journal file to append commits to")
    p.add_argument("--serve", action="store_true", help="start the HTTP API afterwards")
    p.add_argument("--addr", help="host:port for --serve (default 127.0.0.1:8765)")
    p.set_defaults(fn=cmd_enact)

    p = sub.add_parser("statespace", help="build the finite abstract state space")
    p.add_argument("spec")
    p.add_argument("--init", help="initial instance as JSON")
    p.add_argument("--services", help="mock service configuration JSON")
    p.add_argument("--max-states", type=int, default=10000)
    p.add_argument("--out", help="write .json or .dot export")
    p.set_defaults(fn=cmd_statespace)

    p = sub.add_parser("replay", help="rebuild an enactment from its journal")
    p.add_argument("journal")
    p.add_argument("--serve", action="store_true", help="start the HTTP API afterwards")
    p.add_argument("--addr", help="host:port for --serve")
    p.set_defaults(fn=cmd_replay)

    args = top.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
