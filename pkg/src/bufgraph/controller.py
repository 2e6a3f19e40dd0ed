"""Switching controller: the three observable moves (generate, transmit,
consume), the recovery machinery (purge, retransmit, ack/nack tokens), the
faulty variants used for necessity testing, and move application.

Enabling is if-and-only-if: a move is returned by enabled_moves exactly
when its guard holds, and apply_move re-checks the guard so scripts cannot
smuggle illegal moves past a replay.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from .buffergraph import TerminalRank, entry_slot, is_terminal, next_slot
from .core import (
    Configuration,
    Message,
    OutboxEntry,
    RingScheme,
    Scheme,
    Token,
    WorkloadItem,
)
from .routing import route_enabled, route_step


class Variant(str, Enum):
    """Reference controller plus one deliberately broken twin per liveness
    ingredient, used to show each ingredient is load-bearing."""

    REFERENCE = "reference"
    CYCLIC_SCHEME = "v1_cyclic_scheme"  # runs on the ring scheme
    UNFAIR = "v2_unfair"  # never schedules generation at one node
    DROP_NO_COPY = "v3_drop_no_copy"  # keeps no source-side copy
    NO_FLUSH = "v4_no_flush"  # never purges terminal-rank strays
    LOSSY = "v5_lossy"  # transmit drops on a coin; no copy, no retransmit


# Node whose generations the unfair variant refuses to schedule.
UNFAIR_NODE = 0

# One in LOSS_PERIOD transmits drops under the lossy variant.
LOSS_PERIOD = 4

# Numbered liveness ingredient each variant knocks out (None = intact).
CONDITION_OF_VARIANT: dict[Variant, Optional[int]] = {
    Variant.REFERENCE: None,
    Variant.CYCLIC_SCHEME: 1,
    Variant.UNFAIR: 2,
    Variant.DROP_NO_COPY: 3,
    Variant.NO_FLUSH: 4,
    Variant.LOSSY: 5,
}

MONITOR_FOR_CONDITION = {
    1: "dag",
    2: "emission",
    3: "adequacy",
    4: "flush",
    5: "copy",
}


def condition_map(variant: Variant) -> Optional[int]:
    return CONDITION_OF_VARIANT[variant]


def mapped_monitor(variant: Variant) -> Optional[str]:
    cond = CONDITION_OF_VARIANT[variant]
    return None if cond is None else MONITOR_FOR_CONDITION[cond]


def effective_scheme(variant: Variant, scheme: Scheme) -> Scheme:
    """The scheme the controller actually forwards with.  The cyclic
    variant ignores the configured scheme and runs the ring."""
    if variant is Variant.CYCLIC_SCHEME:
        return RingScheme(scheme.buffers_per_node)
    return scheme


def keeps_source_copy(variant: Variant) -> bool:
    return variant not in (Variant.DROP_NO_COPY, Variant.LOSSY)


def coin_fires(seed: int, draw: int) -> bool:
    """Deterministic 1-in-LOSS_PERIOD coin stream, replay-stable."""
    raw = hashlib.blake2b(f"{seed}:{draw}".encode(), digest_size=8).digest()
    return int.from_bytes(raw, "big") % LOSS_PERIOD == 0


class IllegalMove(ValueError):
    """Move guard does not hold in the given configuration."""


# Canonical kind order; ties break on the per-kind key.
CONSUME = "consume"
ACK_STEP = "ack_step"
PURGE = "purge"
TRANSMIT = "transmit"
RETRANSMIT = "retransmit"
GENERATE = "generate"
ROUTE_STEP = "route_step"
ADVANCE = "advance"  # scheduler bookkeeping, never enumerated

_KIND_RANK = {
    CONSUME: 0,
    ACK_STEP: 1,
    PURGE: 2,
    TRANSMIT: 3,
    RETRANSMIT: 4,
    GENERATE: 5,
    ROUTE_STEP: 6,
    ADVANCE: 7,
}


@dataclass(frozen=True)
class Move:
    kind: str
    node: Optional[int] = None
    slot: Optional[tuple[int, int]] = None
    msg_id: Optional[str] = None
    token: Optional[Token] = None
    to_step: Optional[int] = None

    def sort_key(self):
        rank = _KIND_RANK[self.kind]
        if self.kind in (CONSUME, PURGE, TRANSMIT):
            return (rank, self.slot)
        if self.kind == ACK_STEP:
            t = self.token
            return (rank, (t.kind, t.msg_id, t.at, t.target))
        if self.kind in (RETRANSMIT, GENERATE):
            return (rank, (self.node, self.msg_id))
        if self.kind == ROUTE_STEP:
            return (rank, (self.node,))
        return (rank, (self.to_step,))


def anchor_node(move: Move) -> Optional[int]:
    """Node whose routing state gates the move: where its table is read or
    its local action happens.  None for bookkeeping moves."""
    if move.kind in (CONSUME, PURGE, TRANSMIT):
        return move.slot[0]
    if move.kind == ACK_STEP:
        return move.token.at
    if move.kind in (RETRANSMIT, GENERATE, ROUTE_STEP):
        return move.node
    return None


def move_to_json(move: Move) -> dict:
    obj: dict = {"kind": move.kind}
    if move.node is not None:
        obj["node"] = move.node
    if move.slot is not None:
        obj["slot"] = list(move.slot)
    if move.msg_id is not None:
        obj["msg"] = move.msg_id
    if move.token is not None:
        t = move.token
        obj["token"] = [t.kind, t.msg_id, t.at, t.target]
    if move.to_step is not None:
        obj["to_step"] = move.to_step
    return obj


def move_from_json(obj: dict) -> Move:
    token = None
    if "token" in obj:
        k, m, a, t = obj["token"]
        token = Token(k, m, a, t)
    slot = tuple(obj["slot"]) if "slot" in obj else None
    return Move(
        kind=obj["kind"],
        node=obj.get("node"),
        slot=slot,
        msg_id=obj.get("msg"),
        token=token,
        to_step=obj.get("to_step"),
    )


def _generation_enabled(config: Configuration, variant: Variant, item: WorkloadItem) -> bool:
    if item.release_step > config.step:
        return False
    if variant is Variant.UNFAIR and item.source == UNFAIR_NODE:
        return False
    if item.source == item.destination:
        # Degenerate emission delivers in place and needs no slot.
        return True
    eff = effective_scheme(variant, config.scheme)
    u, r = entry_slot(eff, item.source)
    return config.occupant(u, r) is None


def _transmit_target(
    config: Configuration, variant: Variant, slot: tuple[int, int], msg: Message
) -> Optional[tuple[int, int]]:
    """Free onward slot for the copy, or None when the guard fails."""
    eff = effective_scheme(variant, config.scheme)
    try:
        onward = next_slot(eff, config.tables, slot, msg.destination)
    except TerminalRank:
        return None
    if config.occupant(*onward) is not None:
        return None
    return onward


def enabled_moves(config: Configuration, variant: Variant) -> tuple[Move, ...]:
    """All moves whose guards hold, in canonical order.  Routing updates are
    included as moves so schedulers can interleave them."""
    eff = effective_scheme(variant, config.scheme)
    b = eff.buffers_per_node
    moves: list[Move] = []
    for u in config.graph.nodes:
        for r in range(1, b + 1):
            m = config.occupant(u, r)
            if m is None:
                continue
            if m.destination == u:
                moves.append(Move(kind=CONSUME, slot=(u, r), msg_id=m.id))
                continue
            if is_terminal(eff, (u, r)) and variant is not Variant.NO_FLUSH:
                moves.append(Move(kind=PURGE, slot=(u, r), msg_id=m.id))
                continue
            if _transmit_target(config, variant, (u, r), m) is not None:
                moves.append(Move(kind=TRANSMIT, slot=(u, r), msg_id=m.id))
    for token in config.tokens:
        moves.append(Move(kind=ACK_STEP, node=token.at, token=token, msg_id=token.msg_id))
    if keeps_source_copy(variant):
        for u in config.graph.nodes:
            for entry in config.outboxes[u]:
                if entry.in_flight:
                    continue
                eu, er = entry_slot(eff, u)
                if config.occupant(eu, er) is None:
                    moves.append(Move(kind=RETRANSMIT, node=u, msg_id=entry.message.id))
    for item in config.workload:
        if _generation_enabled(config, variant, item):
            moves.append(Move(kind=GENERATE, node=item.source, msg_id=item.id))
    for u in config.graph.nodes:
        if route_enabled(config, u):
            moves.append(Move(kind=ROUTE_STEP, node=u))
    moves.sort(key=Move.sort_key)
    return tuple(moves)


def _set_slot(config: Configuration, idx: int, value: Optional[Message]):
    return config.slots[:idx] + (value,) + config.slots[idx + 1 :]


def _record_delivery(config: Configuration, msg_id: str, at_step: int):
    if msg_id in config.delivered_ids():
        return config.delivered
    return tuple(sorted(config.delivered + ((msg_id, at_step),)))


def _outbox_arrival(
    outboxes: tuple[tuple[OutboxEntry, ...], ...], node: int, kind: str, msg_id: str
) -> tuple[tuple[OutboxEntry, ...], ...]:
    """Apply a token arrival at its target: ack drops the retained entry,
    nack marks the copy lost so retransmission opens up."""
    box = outboxes[node]
    if kind == "ack":
        new_box = tuple(e for e in box if e.message.id != msg_id)
    else:
        new_box = tuple(
            replace(e, in_flight=False) if e.message.id == msg_id else e for e in box
        )
    return outboxes[:node] + (new_box,) + outboxes[node + 1 :]


def _spawn_token(config_tokens, outboxes, kind, msg, at_node):
    """Create an ack or nack headed for the message source.  A token born at
    its target is processed on the spot and never enters the token set."""
    if msg.source is None:
        return config_tokens, outboxes
    if msg.source == at_node:
        return config_tokens, _outbox_arrival(outboxes, at_node, kind, msg.id)
    token = Token(kind=kind, msg_id=msg.id, at=at_node, target=msg.source)
    return tuple(sorted(config_tokens + (token,))), outboxes


def apply_move(config: Configuration, move: Move, variant: Variant) -> Configuration:
    """Apply one move, re-checking its guard.  Returns the successor
    configuration with the step counter advanced."""
    eff = effective_scheme(variant, config.scheme)
    nstep = config.step + 1

    if move.kind == ADVANCE:
        if move.to_step is None or move.to_step <= config.step:
            raise IllegalMove("advance must jump forward")
        pending = [w.release_step for w in config.workload if w.release_step > config.step]
        if not pending or min(pending) != move.to_step:
            raise IllegalMove("advance must land on the next release")
        return replace(config, step=move.to_step)

    if move.kind == ROUTE_STEP:
        if not route_enabled(config, move.node):
            raise IllegalMove(f"route update at {move.node} changes nothing")
        return replace(route_step(config, move.node), step=nstep)

    if move.kind == CONSUME:
        u, r = move.slot
        m = config.occupant(u, r)
        if m is None or m.destination != u:
            raise IllegalMove(f"nothing to consume at {move.slot}")
        slots = _set_slot(config, config.slot_index(u, r), None)
        delivered = _record_delivery(config, m.id, nstep)
        tokens, outboxes = _spawn_token(config.tokens, config.outboxes, "ack", m, u)
        return replace(
            config, slots=slots, delivered=delivered, tokens=tokens, outboxes=outboxes, step=nstep
        )

    if move.kind == PURGE:
        if variant is Variant.NO_FLUSH:
            raise IllegalMove("this variant never purges")
        u, r = move.slot
        m = config.occupant(u, r)
        if m is None or m.destination == u or not is_terminal(eff, (u, r)):
            raise IllegalMove(f"no purgeable copy at {move.slot}")
        slots = _set_slot(config, config.slot_index(u, r), None)
        tokens, outboxes = _spawn_token(config.tokens, config.outboxes, "nack", m, u)
        return replace(config, slots=slots, tokens=tokens, outboxes=outboxes, step=nstep)

    if move.kind == TRANSMIT:
        u, r = move.slot
        m = config.occupant(u, r)
        if m is None or m.destination == u:
            raise IllegalMove(f"no forwardable copy at {move.slot}")
        onward = _transmit_target(config, variant, (u, r), m)
        if onward is None:
            raise IllegalMove(f"no free onward slot from {move.slot}")
        slots = _set_slot(config, config.slot_index(u, r), None)
        draws = config.coin_draws
        if variant is Variant.LOSSY:
            dropped = coin_fires(config.coin_seed, draws)
            draws += 1
            if dropped:
                return replace(config, slots=slots, coin_draws=draws, step=nstep)
        slots = slots[: config.slot_index(*onward)] + (m,) + slots[config.slot_index(*onward) + 1 :]
        return replace(config, slots=slots, coin_draws=draws, step=nstep)

    if move.kind == RETRANSMIT:
        if not keeps_source_copy(variant):
            raise IllegalMove("this variant never retransmits")
        u = move.node
        entry = next(
            (e for e in config.outboxes[u] if e.message.id == move.msg_id), None
        )
        if entry is None or entry.in_flight:
            raise IllegalMove(f"no retransmittable entry {move.msg_id} at {u}")
        eu, er = entry_slot(eff, u)
        idx = config.slot_index(eu, er)
        if config.slots[idx] is not None:
            raise IllegalMove(f"entry slot of {u} is busy")
        slots = _set_slot(config, idx, entry.message)
        box = tuple(
            replace(e, in_flight=True) if e.message.id == move.msg_id else e
            for e in config.outboxes[u]
        )
        outboxes = config.outboxes[:u] + (box,) + config.outboxes[u + 1 :]
        return replace(config, slots=slots, outboxes=outboxes, step=nstep)

    if move.kind == GENERATE:
        item = next((w for w in config.workload if w.id == move.msg_id), None)
        if item is None or item.source != move.node:
            raise IllegalMove(f"no pending emission {move.msg_id} at {move.node}")
        if not _generation_enabled(config, variant, item):
            raise IllegalMove(f"emission {move.msg_id} is not enabled")
        workload = tuple(w for w in config.workload if w.id != item.id)
        msg = Message(
            id=item.id,
            source=item.source,
            destination=item.destination,
            valid=True,
            birth_step=nstep,
        )
        if item.source == item.destination:
            delivered = _record_delivery(config, msg.id, nstep)
            return replace(config, workload=workload, delivered=delivered, step=nstep)
        eu, er = entry_slot(eff, item.source)
        slots = _set_slot(config, config.slot_index(eu, er), msg)
        outboxes = config.outboxes
        if keeps_source_copy(variant):
            box = tuple(
                sorted(
                    config.outboxes[item.source] + (OutboxEntry(msg, in_flight=True),),
                    key=lambda e: e.message.id,
                )
            )
            outboxes = config.outboxes[: item.source] + (box,) + config.outboxes[item.source + 1 :]
        return replace(config, slots=slots, workload=workload, outboxes=outboxes, step=nstep)

    if move.kind == ACK_STEP:
        if move.token not in config.tokens:
            raise IllegalMove(f"no such token {move.token}")
        t = move.token
        tokens = tuple(tok for tok in config.tokens if tok != t)
        hop = config.tables[t.at].next_hop[t.target]
        if hop == t.target:
            outboxes = _outbox_arrival(config.outboxes, t.target, t.kind, t.msg_id)
            return replace(config, tokens=tokens, outboxes=outboxes, step=nstep)
        moved = Token(kind=t.kind, msg_id=t.msg_id, at=hop, target=t.target)
        tokens = tuple(sorted(tokens + (moved,)))
        return replace(config, tokens=tokens, step=nstep)

    raise IllegalMove(f"unknown move kind {move.kind!r}")
