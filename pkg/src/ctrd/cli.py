"""Command-line front door: check, run, explore, nif.

Exit codes: 0 success; 1 parse/type diagnostics; 2 I/O failure; 3 a
requested check failed; 4 deadlock or step/state limit; 5 programs not
low-equivalent.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from . import typecheck as tc
from .abstract_exec import (
    check_ec, check_sc, con_observation, NotQuiescent,
    ProgramsNotLowEquivalent, project_con, record, check_noninterference,
)
from .parser import ParseError, parse_program
from .runtime_cloud import (
    StateSpaceLimit, TraceEntry, check_wf, explore, initial_config,
    make_scheduler, run,
)
from .runtime_local import Action, CtrdRuntimeError
from .syntax import Duplicated, Location, pretty


def _die(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _load(path: str):
    """Parse and typecheck one program file; (program, check) or an exit code."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            src = fh.read()
    except OSError as e:
        return _die(2, f"{path}: {e.strerror or e}")
    try:
        prog = parse_program(src)
    except ParseError as e:
        return _die(1, f"{path}:{e.pos[0]}:{e.pos[1]}: SyntaxError: {e.message}")
    try:
        checked = tc.check_program(prog)
    except tc.CheckError as e:
        return _die(1, e.render(path))
    return prog, checked


# ---------------------------------------------------------------------------
# JSON serialization of traces and reports

def value_json(v) -> object:
    from .lattice import GSet, NatMax
    from .syntax import BoolVal, Closure, RecordVal, UnitVal

    if v is None:
        return None
    if isinstance(v, Duplicated):
        return {"duplicated": pretty(v.inner)}
    raw, lab = v.raw, str(v.label)
    if isinstance(raw, NatMax):
        return {"label": lab, "nat": raw.n}
    if isinstance(raw, GSet):
        return {"label": lab, "set": sorted(raw.elems)}
    if isinstance(raw, BoolVal):
        return {"label": lab, "bool": raw.value}
    if isinstance(raw, UnitVal):
        return {"label": lab, "unit": True}
    if isinstance(raw, Location):
        return {"label": lab, "loc": str(raw)}
    if isinstance(raw, RecordVal):
        return {"label": lab, "record": {n: value_json(fv) for n, fv in raw.fields}}
    if isinstance(raw, Closure):
        return {"label": lab, "fn": pretty(raw.body)}
    return {"label": lab, "opaque": str(raw)}


def action_json(a: Action) -> dict:
    out = {
        "effect": str(a.effect),
        "op": a.kind,
        "event": str(a.event) if a.event else None,
        "location": str(a.location) if a.location else None,
        "value": value_json(a.value),
        "source": list(map(str, a.source)) if a.source else None,
    }
    if a.label is not None:
        out["label"] = str(a.label)
    if a.literal_label is not None:
        out["literal_label"] = str(a.literal_label)
    if a.snapshot is not None:
        out["snapshot"] = [str(e) for e in a.snapshot]
    if a.synced:
        out["synced"] = True
    return out


def trace_json(trace: list[TraceEntry]) -> list[dict]:
    out = []
    for e in trace:
        entry = {"step": e.step, "rule": e.rule, "client": e.client,
                 "server": e.server, "action": action_json(e.action)}
        if e.node_count is not None:
            entry["nodes"] = e.node_count
        out.append(entry)
    return out


def execution_json(exec_) -> dict:
    ev = sorted(exec_.op, key=lambda e: e.sort_key())
    pairs = lambda rel: sorted([str(a), str(b)] for a, b in rel)
    return {
        "events": [str(e) for e in ev],
        "op": {str(e): {"kind": exec_.op[e].kind, "label": str(exec_.op[e].label),
                        "location": str(exec_.op[e].location),
                        "value": value_json(exec_.op[e].value)} for e in ev},
        "rval": {str(e): ("unit" if exec_.rval[e] == "unit" else
                          str(exec_.rval[e]) if isinstance(exec_.rval[e], Location)
                          else value_json(exec_.rval[e])) for e in ev},
        "rb": pairs(exec_.rb),
        "sp": {str(i): sorted(str(e) for e in s) for i, s in exec_.sp.items()},
        "vis": pairs(exec_.vis),
        "ar": pairs(exec_.ar),
    }


def _dump(path: Optional[str], payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_check(args) -> int:
    worst = 0
    for path in args.files:
        loaded = _load(path)
        if isinstance(loaded, int):
            worst = max(worst, loaded)
            continue
        print(f"{path}: OK")
    return worst


def _verdicts(checks: list[str], res, exec_) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for name in checks:
        if name == "sc":
            v = check_sc(exec_)
            out["sc"] = {"ok": v.ok, "po_in_vis": v.po_in_vis,
                         "ar_vis_closure": v.ar_vis_closure,
                         "ar_neg_vis_closure": v.ar_neg_vis_closure,
                         "rval_ok": v.rval_ok}
            print(v.summary())
        elif name == "sc-con":
            v = check_sc(project_con(exec_))
            out["sc-con"] = {"ok": v.ok, "po_in_vis": v.po_in_vis,
                             "ar_vis_closure": v.ar_vis_closure,
                             "ar_neg_vis_closure": v.ar_neg_vis_closure,
                             "rval_ok": v.rval_ok}
            print(v.summary().replace("CHECK sc", "CHECK sc-con"))
        elif name == "ec":
            try:
                v = check_ec(exec_, res.config)
                out["ec"] = {"ok": v.ok, "eventual_visibility": v.eventual_visibility,
                             "rval_ok": v.rval_ok, "converged": v.converged}
                print(v.summary())
            except NotQuiescent as e:
                out["ec"] = {"ok": False, "error": str(e)}
                print(f"CHECK ec FAIL not-quiescent")
        elif name == "wf":
            rep = check_wf(res.config)
            out["wf"] = {"ok": rep.ok, "problems": rep.problems}
            print(f"CHECK wf {'OK' if rep.ok else 'FAIL ' + rep.problems[0]}")
        else:
            raise ValueError(f"unknown check {name!r}")
    return out


def cmd_run(args) -> int:
    loaded = _load(args.file)
    if isinstance(loaded, int):
        return loaded
    prog, checked = loaded
    cfg = initial_config(prog, checked.id_types, args.servers)
    sched = (make_scheduler("random", args.seed) if args.seed is not None
             else make_scheduler(args.sched))
    checks_requested = args.check.split(",") if args.check else []
    try:
        res = run(cfg, sched, args.max_steps,
                  wf_each_step="wf" in checks_requested)
    except CtrdRuntimeError as e:
        return _die(4, f"{args.file}: runtime fault: {e}")
    exec_ = record(res.trace)
    checks = [c for c in (args.check.split(",") if args.check else []) if c]
    verdicts = _verdicts(checks, res, exec_)
    if args.trace:
        _dump(args.trace, trace_json(res.trace))
    if args.exec_out:
        _dump(args.exec_out, execution_json(exec_))
    report = {
        "file": args.file,
        "scheduler": sched.name,
        "seed": args.seed,
        "steps": res.steps,
        "status": res.status,
        "quiescent": res.status == "quiescent",
        "observation": con_observation(res.config),
        "checks": verdicts,
        "trace": args.trace,
    }
    print(json.dumps(report, sort_keys=True))
    if res.status != "quiescent":
        return 4
    if any(not v.get("ok", False) for v in verdicts.values()):
        return 3
    return 0


def cmd_explore(args) -> int:
    loaded = _load(args.file)
    if isinstance(loaded, int):
        return loaded
    prog, checked = loaded
    cfg = initial_config(prog, checked.id_types, args.servers)
    checks = [c for c in (args.check.split(",") if args.check else []) if c]
    violations = {name: 0 for name in checks}
    counted = [0]

    def on_trace(trace, final, truncated):
        counted[0] += 1
        exec_ = record(trace)
        for name in checks:
            if name == "sc" and not check_sc(exec_).ok:
                violations["sc"] += 1
            elif name == "sc-con" and not check_sc(project_con(exec_)).ok:
                violations["sc-con"] += 1
            elif name == "ec" and not truncated:
                try:
                    if not check_ec(exec_, final).ok:
                        violations["ec"] += 1
                except NotQuiescent:
                    pass

    try:
        summary = explore(cfg, args.max_depth, on_trace=on_trace,
                          check_wf_each="wf" in checks)
    except StateSpaceLimit as e:
        return _die(4, f"{args.file}: {e}")
    if "wf" in checks:
        violations["wf"] = len(summary.wf_violations)
    report = {
        "file": args.file,
        "max_depth": args.max_depth,
        "states": summary.states,
        "traces": summary.traces,
        "truncated": summary.truncated,
        "violations": violations,
    }
    print(json.dumps(report, sort_keys=True))
    return 3 if any(violations.values()) else 0


def cmd_nif(args) -> int:
    loaded_a = _load(args.file_a)
    if isinstance(loaded_a, int):
        return loaded_a
    loaded_b = _load(args.file_b)
    if isinstance(loaded_b, int):
        return loaded_b
    prog_a, _ = loaded_a
    prog_b, _ = loaded_b
    try:
        verdict = check_noninterference(prog_a, prog_b, args.max_depth, args.servers)
    except ProgramsNotLowEquivalent as e:
        return _die(5, f"ProgramsNotLowEquivalent: {e}")
    report = {
        "files": [args.file_a, args.file_b],
        "max_depth": args.max_depth,
        "equivalent": verdict.equivalent,
        "observations_a": sorted(verdict.observations_a),
        "observations_b": sorted(verdict.observations_b),
        "truncated": [verdict.truncated_a, verdict.truncated_b],
    }
    print(json.dumps(report, sort_keys=True))
    return 0 if verdict.equivalent else 3


def main(argv: Optional[list[str]] = None) -> int:
    ap = argparse.ArgumentParser(
        prog="ctrd",
        description="Typecheck and simulate consistency-labeled programs "
                    "on a replicated cloud.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="parse and typecheck program files")
    p.add_argument("files", nargs="+")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("run", help="run one program under a scheduler")
    p.add_argument("file")
    p.add_argument("--seed", type=int, default=None,
                   help="seeded-random scheduler (splitmix64)")
    p.add_argument("--sched", default="drain-fair",
                   choices=["random", "round-robin", "drain-fair"])
    p.add_argument("--max-steps", type=int, default=10_000)
    p.add_argument("--servers", type=int, default=None)
    p.add_argument("--trace", default=None, help="write the trace JSON here")
    p.add_argument("--exec", dest="exec_out", default=None,
                   help="write the recorded abstract execution JSON here")
    p.add_argument("--check", default="", help="comma list: sc,sc-con,ec,wf")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("explore", help="exhaustively explore interleavings")
    p.add_argument("file")
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--servers", type=int, default=None)
    p.add_argument("--check", default="", help="comma list: sc,sc-con,ec,wf")
    p.set_defaults(fn=cmd_explore)

    p = sub.add_parser("nif", help="compare con observations of two programs "
                                   "differing only in ava literals")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--servers", type=int, default=None)
    p.set_defaults(fn=cmd_nif)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
