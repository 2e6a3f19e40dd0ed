"""Command line front end.

    bufgraph run <scenario> [--out DIR] [--max-steps N] [--seed K]
    bufgraph explore <scenario> [--out DIR] [--state-limit N]
    bufgraph campaign <dir> --seeds N [--out DIR] [--workers W] [--max-steps N]

run exits 0 when every monitor passes, 1 on a violation, 2 on bad input.
explore exits 0 when the deadlock expectation holds, 1 when it does not,
2 on bad input, 3 when the state cap (flag, scenario, or the
BUFGRAPH_STATE_LIMIT environment variable) is exceeded.
campaign exits 0 when the reference passes everywhere and every broken
variant fails its mapped monitor somewhere the reference passes.

All artifacts are deterministic: no timestamps, stable ordering.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .controller import Variant
from .scenario import ScenarioError, build_configuration, load_scenario, make_policy
from .scheduler import run, script_to_jsonl, trace_to_jsonl
from .verifier import (
    MONITORS,
    StateSpaceExceeded,
    campaign,
    campaign_matrix,
    default_max_steps,
    default_state_limit,
    explore,
    monitor_trace,
    report_to_jsonable,
    verdicts_to_jsonable,
)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    config = build_configuration(sc, seed_override=args.seed)
    policy = make_policy(sc, seed_override=args.seed)
    max_steps = args.max_steps or sc.max_steps or default_max_steps(config)
    trace = run(config, sc.variant, policy, max_steps, label=sc.name)
    verdicts = monitor_trace(trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{sc.name}.trace.jsonl").write_text(trace_to_jsonl(trace))
    (out / f"{sc.name}.verdicts.json").write_text(
        _dump_json(
            {
                "scenario": sc.name,
                "variant": sc.variant.value,
                "halt": trace.halt_reason,
                "steps": trace.final.step,
                "verdicts": verdicts_to_jsonable(verdicts),
            }
        )
    )
    ok = True
    for v in verdicts:
        status = "PASS" if v.ok else f"FAIL at step {v.step}: {v.evidence}"
        print(f"{sc.name}: monitor {v.monitor}: {status}")
        ok = ok and v.ok
    print(f"{sc.name}: halt={trace.halt_reason} steps={trace.final.step}")
    print(f"result: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_explore(args) -> int:
    sc = load_scenario(args.scenario)
    config = build_configuration(sc, seed_override=args.seed)
    limit = args.state_limit or sc.state_limit or default_state_limit()
    report = explore(
        config, sc.variant, close_generation=sc.close_generation, state_limit=limit
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    witness_files = []
    for i, w in enumerate(report.deadlocks):
        fname = f"{sc.name}.witness{i}.jsonl"
        (out / fname).write_text(
            script_to_jsonl(config, sc.variant, w.moves, label=f"{sc.name} deadlock {i}")
        )
        witness_files.append(fname)
    found = bool(report.deadlocks)
    matched = found == sc.expect_deadlock
    (out / f"{sc.name}.explore.json").write_text(
        _dump_json(
            {
                "scenario": sc.name,
                "variant": sc.variant.value,
                "states_explored": report.states_explored,
                "terminal_ok": report.terminal_ok,
                "deadlocks": [
                    {"digest": w.digest, "moves": len(w.moves), "witness": f}
                    for w, f in zip(report.deadlocks, witness_files)
                ],
                "expect_deadlock": sc.expect_deadlock,
                "as_expected": matched,
            }
        )
    )
    print(
        f"{sc.name}: states={report.states_explored} deadlocks={len(report.deadlocks)} "
        f"terminal_ok={report.terminal_ok}"
    )
    for w, f in zip(report.deadlocks, witness_files):
        print(f"{sc.name}: deadlock {w.digest} witness={f} ({len(w.moves)} moves)")
    print(f"result: {'PASS' if matched else 'FAIL'} (expected deadlock: {sc.expect_deadlock})")
    return 0 if matched else 1


def cmd_campaign(args) -> int:
    paths = sorted(str(p) for p in Path(args.dir).glob("*.scenario"))
    if not paths:
        print(f"no *.scenario files in {args.dir}", file=sys.stderr)
        return 2
    report = campaign(
        paths, seeds=args.seeds, workers=args.workers, max_steps=args.max_steps
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "campaign.json").write_text(_dump_json(report_to_jsonable(report)))
    matrix = campaign_matrix(report)
    width = max(len(v) for v in report.variants)
    header = "variant".ljust(width) + "  " + "  ".join(m.rjust(9) for m in MONITORS)
    print(header)
    for variant in report.variants:
        row = matrix[variant]
        cells = "  ".join(str(row[m]).rjust(9) for m in MONITORS)
        print(variant.ljust(width) + "  " + cells)
    print(f"reference_all_pass: {report.reference_all_pass}")
    for variant, shown in sorted(report.mapped_failure_shown.items()):
        print(f"mapped_failure[{variant}]: {'shown' if shown else 'NOT SHOWN'}")
    print(f"result: {'PASS' if report.ok else 'FAIL'}")
    return 0 if report.ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bufgraph",
        description="simulate and verify buffer-graph message forwarding",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and monitor the trace")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=".")
    p_run.add_argument("--max-steps", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None, help="override the corruption seed")
    p_run.set_defaults(fn=cmd_run)

    p_exp = sub.add_parser("explore", help="enumerate every reachable configuration")
    p_exp.add_argument("scenario")
    p_exp.add_argument("--out", default=".")
    p_exp.add_argument("--state-limit", type=int, default=None)
    p_exp.add_argument("--seed", type=int, default=None, help="override the corruption seed")
    p_exp.set_defaults(fn=cmd_explore)

    p_cam = sub.add_parser("campaign", help="cross scenarios with variants over seeds")
    p_cam.add_argument("dir")
    p_cam.add_argument("--seeds", type=int, required=True)
    p_cam.add_argument("--out", default=".")
    p_cam.add_argument("--workers", type=int, default=None)
    p_cam.add_argument("--max-steps", type=int, default=None)
    p_cam.set_defaults(fn=cmd_campaign)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except StateSpaceExceeded as exc:
        print(f"state space exceeded: {exc}", file=sys.stderr)
        return 3
    except (ScenarioError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
