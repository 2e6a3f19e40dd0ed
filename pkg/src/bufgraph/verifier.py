"""Verification layer: exhaustive reachability with deadlock witnesses,
six runtime monitors over traces, and the seeded campaign that crosses
scenarios with controller variants.

The monitors check, on every observed configuration:
  emission   every queued emission happens within its bound of release
  delivery   every valid message is delivered within its bound of birth
  copy       an undelivered valid message always has some copy somewhere
  adequacy   once routing is stable, an undelivered valid message gets a
             copy in an adequate slot within its bound
  flush      no slot stays occupied by one copy past its bound
  dag        the buffer graph at stabilization time is acyclic

Deadlines that fall past a step-budget cutoff are inconclusive and pass;
at a quiescent halt every pending obligation is a violation, because the
configuration can never change again.
"""

from __future__ import annotations

import json
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .buffergraph import adequate, is_dag, materialize
from .controller import (
    ADVANCE,
    GENERATE,
    RETRANSMIT,
    ROUTE_STEP,
    Move,
    Variant,
    apply_move,
    effective_scheme,
    mapped_monitor,
)
from .core import Configuration, canonical_key, snapshot_hash
from .routing import bfs_oracle
from .scheduler import Trace, schedulable_moves

MONITORS = ("emission", "delivery", "copy", "adequacy", "flush", "dag")

STATE_LIMIT_ENV = "BUFGRAPH_STATE_LIMIT"
DEFAULT_STATE_LIMIT = 1_000_000


class StateSpaceExceeded(RuntimeError):
    """Exploration hit the state cap before exhausting the space."""


class ReplayMismatch(RuntimeError):
    """A trace did not reproduce its recorded digests."""


def default_state_limit() -> int:
    raw = os.environ.get(STATE_LIMIT_ENV)
    return int(raw) if raw else DEFAULT_STATE_LIMIT


def default_max_steps(config: Configuration) -> int:
    return 200 * config.graph.node_count * config.scheme.buffers_per_node


@dataclass(frozen=True)
class DeadlockWitness:
    digest: str
    moves: tuple[Move, ...]


@dataclass(frozen=True)
class ReachabilityReport:
    states_explored: int
    deadlocks: tuple[DeadlockWitness, ...]
    terminal_ok: int
    state_limit: int


def _explore_key(config: Configuration):
    # Canonical identity ignores the step counter, but enabling of queued
    # emissions depends on it through release times; fold the released set
    # in so time jumps are not deduplicated away.
    released = tuple(
        sorted(w.id for w in config.workload if w.release_step <= config.step)
    )
    return (canonical_key(config), released)


def explore(
    config: Configuration,
    variant: Variant,
    close_generation: bool = False,
    state_limit: Optional[int] = None,
) -> ReachabilityReport:
    """Breadth-first search of every daemon choice.  A deadlock is a state
    with an occupied slot and no schedulable move of any kind; terminal_ok
    counts quiescent states with all slots free.  Witness scripts replay
    the shortest move path from the root."""
    limit = default_state_limit() if state_limit is None else state_limit
    root = _explore_key(config)
    parents: dict = {root: None}
    queue = deque([config])
    states = 1
    deadlocks: list[DeadlockWitness] = []
    terminal_ok = 0
    while queue:
        cur = queue.popleft()
        cur_key = _explore_key(cur)
        moves = schedulable_moves(cur, variant)
        if close_generation:
            moves = tuple(m for m in moves if m.kind != GENERATE)
        if not moves:
            adv = None
            if not close_generation:
                future = [
                    w.release_step for w in cur.workload if w.release_step > cur.step
                ]
                if future:
                    adv = Move(kind=ADVANCE, to_step=min(future))
            if adv is not None:
                moves = (adv,)
            elif any(s is not None for s in cur.slots):
                deadlocks.append(
                    DeadlockWitness(snapshot_hash(cur), _path_to(parents, cur_key))
                )
                continue
            else:
                terminal_ok += 1
                continue
        for mv in moves:
            nxt = apply_move(cur, mv, variant)
            k = _explore_key(nxt)
            if k in parents:
                continue
            parents[k] = (cur_key, mv)
            states += 1
            if states > limit:
                raise StateSpaceExceeded(f"exceeded {limit} states")
            queue.append(nxt)
    return ReachabilityReport(
        states_explored=states,
        deadlocks=tuple(deadlocks),
        terminal_ok=terminal_ok,
        state_limit=limit,
    )


def _path_to(parents: dict, key) -> tuple[Move, ...]:
    moves: list[Move] = []
    cur = key
    while parents[cur] is not None:
        cur, mv = parents[cur]
        moves.append(mv)
    moves.reverse()
    return tuple(moves)


@dataclass(frozen=True)
class MonitorBounds:
    emission: int
    delivery: int
    adequacy: int
    flush: int

    @staticmethod
    def default_for(config: Configuration) -> "MonitorBounds":
        n = config.graph.node_count
        b = config.scheme.buffers_per_node
        return MonitorBounds(
            emission=50 * n * b,
            delivery=50 * n * b,
            adequacy=10 * n * b,
            flush=10 * n * b,
        )


@dataclass(frozen=True)
class MonitorVerdict:
    monitor: str
    ok: bool
    step: Optional[int]
    evidence: Optional[str]


class _MonitorEngine:
    def __init__(self, initial: Configuration, variant: Variant, bounds: MonitorBounds):
        self.graph = initial.graph
        self.eff = effective_scheme(variant, initial.scheme)
        self.layout_b = initial.scheme.buffers_per_node
        self.bounds = bounds
        self.oracle = bfs_oracle(initial.graph)
        self.stable_at: Optional[int] = None
        self.violations: dict[str, tuple[int, str]] = {}
        self.births: dict[str, int] = {}
        self.episodes: dict[int, tuple[str, int]] = {}
        self.prev_ids: Optional[list[Optional[str]]] = None

    def _hit(self, monitor: str, step: int, evidence: str) -> None:
        self.violations.setdefault(monitor, (step, evidence))

    def note_birth(self, msg_id: str, step: int) -> None:
        self.births[msg_id] = step

    def _slot_of(self, idx: int) -> tuple[int, int]:
        return (idx // self.layout_b, idx % self.layout_b + 1)

    def observe(self, config: Configuration) -> None:
        s = config.step
        if self.stable_at is None and config.tables == self.oracle:
            self.stable_at = s
            cert = is_dag(materialize(self.graph, self.eff, config.tables))
            if not cert.acyclic:
                self._hit("dag", s, f"buffer cycle {list(cert.cycle)}")
        for w in config.workload:
            if s >= w.release_step + self.bounds.emission:
                self._hit(
                    "emission", s, f"{w.id} not emitted within {self.bounds.emission} of release"
                )
        delivered = config.delivered_ids()
        for mid, born in self.births.items():
            if mid in delivered:
                continue
            slot_copies = [
                (i, m) for i, m in enumerate(config.slots) if m is not None and m.id == mid
            ]
            boxed = any(
                e.message.id == mid for box in config.outboxes for e in box
            )
            if not slot_copies and not boxed:
                self._hit("copy", s, f"{mid} undelivered with no copy anywhere")
            if s >= born + self.bounds.delivery:
                self._hit(
                    "delivery", s, f"{mid} undelivered {self.bounds.delivery} after birth"
                )
            if self.stable_at is not None and s >= max(self.stable_at, born) + self.bounds.adequacy:
                held = any(
                    adequate(self.graph, self.eff, config.tables, self._slot_of(i), m.destination)
                    for i, m in slot_copies
                )
                if not held:
                    self._hit("adequacy", s, f"{mid} has no copy in an adequate slot")
        cur_ids = [m.id if m is not None else None for m in config.slots]
        if self.prev_ids is None:
            for i, mid in enumerate(cur_ids):
                if mid is not None:
                    self.episodes[i] = (mid, s)
        else:
            for i, mid in enumerate(cur_ids):
                if mid == self.prev_ids[i]:
                    continue
                self.episodes.pop(i, None)
                if mid is not None:
                    self.episodes[i] = (mid, s)
        self.prev_ids = cur_ids
        for i, (mid, since) in self.episodes.items():
            if s - since >= self.bounds.flush:
                self._hit(
                    "flush", s, f"slot {self._slot_of(i)} held {mid} for {self.bounds.flush}"
                )

    def finish(self, final: Configuration, halt_reason: str) -> tuple[MonitorVerdict, ...]:
        if halt_reason == "quiescent":
            s = final.step
            for w in final.workload:
                self._hit("emission", s, f"{w.id} never emitted; system went quiescent")
            delivered = final.delivered_ids()
            for mid in self.births:
                if mid in delivered:
                    continue
                self._hit("delivery", s, f"{mid} undelivered at quiescence")
                if self.stable_at is not None:
                    slot_copies = [
                        (i, m)
                        for i, m in enumerate(final.slots)
                        if m is not None and m.id == mid
                    ]
                    held = any(
                        adequate(
                            self.graph, self.eff, final.tables, self._slot_of(i), m.destination
                        )
                        for i, m in slot_copies
                    )
                    if not held:
                        self._hit("adequacy", s, f"{mid} stranded without an adequate copy")
            for i, (mid, _since) in self.episodes.items():
                self._hit(
                    "flush", s, f"slot {self._slot_of(i)} holds {mid} at quiescence forever"
                )
        out = []
        for name in MONITORS:
            if name in self.violations:
                step, evidence = self.violations[name]
                out.append(MonitorVerdict(name, False, step, evidence))
            else:
                out.append(MonitorVerdict(name, True, None, None))
        return tuple(out)


def monitor_trace(
    trace: Trace, bounds: Optional[MonitorBounds] = None
) -> tuple[MonitorVerdict, ...]:
    """Replay a trace, verifying every recorded digest, and evaluate the
    six monitors on the observed configurations."""
    if bounds is None:
        bounds = MonitorBounds.default_for(trace.initial)
    engine = _MonitorEngine(trace.initial, trace.variant, bounds)
    cur = trace.initial
    engine.observe(cur)
    for e in trace.entries:
        cur = apply_move(cur, e.move, trace.variant)
        if cur.step != e.step:
            raise ReplayMismatch(f"step counter diverged: {cur.step} != {e.step}")
        got = snapshot_hash(cur)
        if got != e.digest:
            raise ReplayMismatch(f"digest diverged at step {e.step}: {got} != {e.digest}")
        if e.move.kind == GENERATE:
            engine.note_birth(e.move.msg_id, cur.step)
        engine.observe(cur)
    if snapshot_hash(cur) != snapshot_hash(trace.final):
        raise ReplayMismatch("final configuration diverged from the recorded one")
    return engine.finish(cur, trace.halt_reason)


# --- campaign ---------------------------------------------------------------

@dataclass(frozen=True)
class RunResult:
    scenario: str
    variant: str
    seed: int
    verdicts: tuple[MonitorVerdict, ...]
    halt_reason: str
    steps: int
    final_digest: str
    retransmits: int

    @property
    def all_ok(self) -> bool:
        return all(v.ok for v in self.verdicts)

    def failed(self, monitor: str) -> bool:
        return any(v.monitor == monitor and not v.ok for v in self.verdicts)


@dataclass(frozen=True)
class CampaignReport:
    seeds: int
    scenarios: tuple[str, ...]
    variants: tuple[str, ...]
    rows: tuple[RunResult, ...]
    reference_all_pass: bool
    mapped_failure_shown: dict
    ok: bool


def run_one(
    scenario_path: str, variant: Variant, seed: int, max_steps: Optional[int] = None
) -> tuple[Trace, tuple[MonitorVerdict, ...]]:
    """Build, run, and monitor a single (scenario, variant, seed) instance."""
    from .scenario import build_configuration, load_scenario, make_policy
    from .scheduler import run

    sc = load_scenario(scenario_path)
    config = build_configuration(sc, seed_override=seed)
    policy = make_policy(sc, seed_override=seed)
    steps = max_steps or sc.max_steps or default_max_steps(config)
    trace = run(config, variant, policy, steps, label=sc.name)
    return trace, monitor_trace(trace)


def _campaign_task(args: tuple) -> RunResult:
    path, variant_value, seed, max_steps = args
    variant = Variant(variant_value)
    trace, verdicts = run_one(path, variant, seed, max_steps)
    return RunResult(
        scenario=trace.label or path,
        variant=variant_value,
        seed=seed,
        verdicts=verdicts,
        halt_reason=trace.halt_reason,
        steps=trace.final.step,
        final_digest=snapshot_hash(trace.final),
        retransmits=sum(1 for e in trace.entries if e.move.kind == RETRANSMIT),
    )


def campaign(
    scenario_paths: Sequence[str],
    seeds: int,
    variants: Optional[Iterable[Variant]] = None,
    workers: Optional[int] = None,
    max_steps: Optional[int] = None,
) -> CampaignReport:
    """Run every scenario under every variant for every seed, collect all
    verdicts, and evaluate the necessity matrix: the reference controller
    must pass everything, and each broken variant must fail the monitor
    mapped to the ingredient it lacks on at least one instance where the
    reference passes cleanly."""
    chosen = tuple(variants) if variants is not None else tuple(Variant)
    paths = [str(p) for p in scenario_paths]
    tasks = [
        (path, v.value, seed, max_steps)
        for path in sorted(paths)
        for v in chosen
        for seed in range(seeds)
    ]
    if workers is None:
        workers = min(os.cpu_count() or 1, 8)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_campaign_task, tasks, chunksize=max(1, len(tasks) // (workers * 4))))
    else:
        rows = [_campaign_task(t) for t in tasks]
    rows.sort(key=lambda r: (r.scenario, r.variant, r.seed))
    ref_rows = {
        (r.scenario, r.seed): r for r in rows if r.variant == Variant.REFERENCE.value
    }
    reference_all_pass = all(r.all_ok for r in ref_rows.values()) and bool(ref_rows)
    mapped_shown: dict[str, bool] = {}
    for v in chosen:
        target = mapped_monitor(v)
        if target is None:
            continue
        mapped_shown[v.value] = any(
            r.failed(target)
            and (r.scenario, r.seed) in ref_rows
            and ref_rows[(r.scenario, r.seed)].all_ok
            for r in rows
            if r.variant == v.value
        )
    ok = reference_all_pass and all(mapped_shown.values())
    return CampaignReport(
        seeds=seeds,
        scenarios=tuple(sorted({r.scenario for r in rows})),
        variants=tuple(v.value for v in chosen),
        rows=tuple(rows),
        reference_all_pass=reference_all_pass,
        mapped_failure_shown=mapped_shown,
        ok=ok,
    )


def campaign_matrix(report: CampaignReport) -> dict:
    """variant -> monitor -> number of failing runs."""
    matrix: dict[str, dict[str, int]] = {
        v: {m: 0 for m in MONITORS} for v in report.variants
    }
    for r in report.rows:
        for verdict in r.verdicts:
            if not verdict.ok:
                matrix[r.variant][verdict.monitor] += 1
    return matrix


def verdicts_to_jsonable(verdicts: Iterable[MonitorVerdict]) -> list[dict]:
    return [
        {"monitor": v.monitor, "ok": v.ok, "step": v.step, "evidence": v.evidence}
        for v in verdicts
    ]


def report_to_jsonable(report: CampaignReport) -> dict:
    return {
        "seeds": report.seeds,
        "scenarios": list(report.scenarios),
        "variants": list(report.variants),
        "matrix": campaign_matrix(report),
        "reference_all_pass": report.reference_all_pass,
        "mapped_failure_shown": report.mapped_failure_shown,
        "ok": report.ok,
        "rows": [
            {
                "scenario": r.scenario,
                "variant": r.variant,
                "seed": r.seed,
                "ok": r.all_ok,
                "halt": r.halt_reason,
                "steps": r.steps,
                "final_digest": r.final_digest,
                "retransmits": r.retransmits,
                "verdicts": verdicts_to_jsonable(r.verdicts),
            }
            for r in report.rows
        ],
    }
