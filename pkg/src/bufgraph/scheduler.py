"""Run loop and scheduling policies.

Routing has local priority: a controller move anchored at a node whose
routing table is stale (a route update would change it) is masked until
that node's table settles.  Route updates themselves are ordinary moves,
so distant nodes keep switching while routing converges elsewhere.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Optional, Union

from .controller import (
    ADVANCE,
    ROUTE_STEP,
    Move,
    Variant,
    anchor_node,
    apply_move,
    enabled_moves,
    move_from_json,
    move_to_json,
)
from .core import Configuration, from_jsonable, snapshot_hash, to_jsonable


class ScriptMismatch(RuntimeError):
    """A scripted move was not schedulable where the script demanded it."""


@dataclass(frozen=True)
class FairRoundRobin:
    """Weakly fair policy: a cursor cycles through the canonical move order
    and picks the next schedulable move after it, wrapping at the end.  Any
    move that stays schedulable is reached within one sweep."""


@dataclass(frozen=True)
class SeededAdversary:
    """Uniform random choice among schedulable moves.  Makes no fairness
    promise, which is the point."""

    seed: int = 0


@dataclass(frozen=True)
class FixedScript:
    """Replays an exact move sequence; raises ScriptMismatch the moment the
    script and the configuration disagree."""

    moves: tuple[Move, ...]


Policy = Union[FairRoundRobin, SeededAdversary, FixedScript]


def policy_kind(policy: Policy) -> str:
    if isinstance(policy, FairRoundRobin):
        return "frr"
    if isinstance(policy, SeededAdversary):
        return "adversary"
    return "script"


@dataclass(frozen=True)
class TraceEntry:
    step: int
    move: Move
    digest: str


@dataclass(frozen=True)
class Trace:
    initial: Configuration
    variant: Variant
    policy_kind: str
    policy_seed: Optional[int]
    max_steps: int
    entries: tuple[TraceEntry, ...]
    final: Configuration
    halt_reason: str  # "quiescent" | "max_steps" | "script_end"
    label: Optional[str] = None


def schedulable_moves(config: Configuration, variant: Variant) -> tuple[Move, ...]:
    """Enabled moves minus those masked by local routing priority."""
    moves = enabled_moves(config, variant)
    pending = {m.node for m in moves if m.kind == ROUTE_STEP}
    if not pending:
        return moves
    return tuple(
        m for m in moves if m.kind == ROUTE_STEP or anchor_node(m) not in pending
    )


class _Cursor:
    """Cyclic cursor over move sort keys."""

    def __init__(self) -> None:
        self.key = None

    def pick(self, moves: tuple[Move, ...]) -> Move:
        # moves arrive sorted by key
        if self.key is not None:
            for m in moves:
                if m.sort_key() > self.key:
                    self.key = m.sort_key()
                    return m
        chosen = moves[0]
        self.key = chosen.sort_key()
        return chosen


def _pending_advance(config: Configuration) -> Optional[Move]:
    future = [w.release_step for w in config.workload if w.release_step > config.step]
    if not future:
        return None
    return Move(kind=ADVANCE, to_step=min(future))


def run(
    config: Configuration,
    variant: Variant,
    policy: Policy,
    max_steps: int,
    label: Optional[str] = None,
) -> Trace:
    """Drive the system until quiescence, the step budget, or script end."""
    entries: list[TraceEntry] = []
    cur = config
    halt = "max_steps"
    cursor = _Cursor()
    rng = random.Random(policy.seed) if isinstance(policy, SeededAdversary) else None
    script = list(policy.moves) if isinstance(policy, FixedScript) else None
    si = 0
    while cur.step < max_steps:
        moves = schedulable_moves(cur, variant)
        if not moves:
            adv = _pending_advance(cur)
            if adv is None:
                if script is not None and si < len(script):
                    raise ScriptMismatch(
                        f"quiescent at step {cur.step} with {len(script) - si} scripted moves left"
                    )
                halt = "quiescent"
                break
            if adv.to_step > max_steps:
                break
            if script is not None:
                if si >= len(script):
                    halt = "script_end"
                    break
                if script[si] != adv:
                    raise ScriptMismatch(f"expected {adv}, script has {script[si]}")
                si += 1
            cur = apply_move(cur, adv, variant)
            entries.append(TraceEntry(cur.step, adv, snapshot_hash(cur)))
            continue
        if script is not None:
            if si >= len(script):
                halt = "script_end"
                break
            mv = script[si]
            si += 1
            if mv not in moves:
                raise ScriptMismatch(f"step {cur.step}: {mv} is not schedulable")
        elif rng is not None:
            mv = moves[rng.randrange(len(moves))]
        else:
            mv = cursor.pick(moves)
        cur = apply_move(cur, mv, variant)
        entries.append(TraceEntry(cur.step, mv, snapshot_hash(cur)))
    return Trace(
        initial=config,
        variant=variant,
        policy_kind=policy_kind(policy),
        policy_seed=policy.seed if isinstance(policy, SeededAdversary) else None,
        max_steps=max_steps,
        entries=tuple(entries),
        final=cur,
        halt_reason=halt,
        label=label,
    )


def fairness_audit(trace: Trace) -> tuple[dict, ...]:
    """Check the weak-fairness obligation against the reference enabling
    relation: flag any move identity that stays continuously schedulable
    across two cursor wraps without executing, or is still schedulable when
    the run goes quiescent.  Empty for compliant runs; the unfair variant's
    suppressed emissions show up here."""
    cur = trace.initial
    pending: dict[Move, tuple[int, int]] = {}  # move -> (since_step, since_wrap)
    reported: set[Move] = set()
    findings: list[dict] = []
    wrap = 0
    prev_key = None
    for e in trace.entries:
        sched = schedulable_moves(cur, Variant.REFERENCE)
        live = set(sched)
        for m in sched:
            pending.setdefault(m, (cur.step, wrap))
        for m in list(pending):
            if m not in live:
                del pending[m]
        if e.move in pending:
            del pending[e.move]
        if e.move.kind != ADVANCE:
            k = e.move.sort_key()
            if prev_key is not None and k <= prev_key:
                wrap += 1
                for m, (since, w) in pending.items():
                    if wrap - w >= 2 and m not in reported:
                        reported.add(m)
                        findings.append(
                            {
                                "kind": "starved",
                                "move": move_to_json(m),
                                "since_step": since,
                            }
                        )
            prev_key = k
        cur = apply_move(cur, e.move, trace.variant)
    if trace.halt_reason == "quiescent":
        for m in schedulable_moves(cur, Variant.REFERENCE):
            if m not in reported:
                reported.add(m)
                findings.append(
                    {
                        "kind": "stranded_at_halt",
                        "move": move_to_json(m),
                        "since_step": cur.step,
                    }
                )
    return tuple(findings)


# --- trace and script files (JSON lines) -----------------------------------

def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def trace_to_jsonl(trace: Trace) -> str:
    lines = [
        _dump(
            {
                "type": "header",
                "version": "v1",
                "label": trace.label,
                "variant": trace.variant.value,
                "policy": trace.policy_kind,
                "policy_seed": trace.policy_seed,
                "max_steps": trace.max_steps,
                "initial": to_jsonable(trace.initial),
            }
        )
    ]
    for e in trace.entries:
        lines.append(
            _dump({"type": "step", "step": e.step, "move": move_to_json(e.move), "digest": e.digest})
        )
    lines.append(
        _dump(
            {
                "type": "halt",
                "reason": trace.halt_reason,
                "final_step": trace.final.step,
                "final_digest": snapshot_hash(trace.final),
            }
        )
    )
    return "\n".join(lines) + "\n"


def trace_from_jsonl(text: str) -> Trace:
    """Rebuild a Trace from its file form.  The final configuration is
    recomputed by applying the moves; digests are carried as recorded and
    checked by monitor_trace, not here."""
    header = None
    entries: list[TraceEntry] = []
    halt = None
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj["type"] == "header":
            header = obj
        elif obj["type"] == "step":
            entries.append(
                TraceEntry(step=obj["step"], move=move_from_json(obj["move"]), digest=obj["digest"])
            )
        elif obj["type"] == "halt":
            halt = obj
    if header is None or halt is None:
        raise ValueError("trace file is missing its header or halt line")
    initial = from_jsonable(header["initial"])
    variant = Variant(header["variant"])
    cur = initial
    for e in entries:
        cur = apply_move(cur, e.move, variant)
    return Trace(
        initial=initial,
        variant=variant,
        policy_kind=header["policy"],
        policy_seed=header["policy_seed"],
        max_steps=header["max_steps"],
        entries=tuple(entries),
        final=cur,
        halt_reason=halt["reason"],
        label=header.get("label"),
    )


def script_to_jsonl(
    initial: Configuration, variant: Variant, moves: tuple[Move, ...], label: Optional[str] = None
) -> str:
    lines = [
        _dump(
            {
                "type": "script",
                "version": "v1",
                "label": label,
                "variant": variant.value,
                "initial": to_jsonable(initial),
            }
        )
    ]
    for m in moves:
        lines.append(_dump({"type": "move", "move": move_to_json(m)}))
    return "\n".join(lines) + "\n"


def script_from_jsonl(text: str) -> tuple[Configuration, Variant, FixedScript, Optional[str]]:
    header = None
    moves: list[Move] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj["type"] == "script":
            header = obj
        elif obj["type"] == "move":
            moves.append(move_from_json(obj["move"]))
    if header is None:
        raise ValueError("script file is missing its header")
    return (
        from_jsonable(header["initial"]),
        Variant(header["variant"]),
        FixedScript(tuple(moves)),
        header.get("label"),
    )
