"""Buffer graphs: where a copy enters the slot system, where a slot hands
off next, and the induced directed graph over slots.

A slot is a (node, rank) pair.  The hop-rank scheme enters at rank 1 and
climbs one rank per hop, so its buffer graph is acyclic whatever the
routing tables say; the ring scheme hands every copy back to rank 1 and is
the standard cyclic counterexample.  next_slot reads the *current* routing
table of the slot owner, so the materialized graph is a function of the
table state, not just the topology.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .core import HopRankScheme, NetworkGraph, RingScheme, RoutingTable, Scheme

Slot = tuple[int, int]


class TerminalRank(LookupError):
    """The slot has no onward hand-off under its scheme."""


def entry_slot(scheme: Scheme, node: int) -> Slot:
    """Slot a copy occupies when emitted at `node`.  Both schemes enter at
    rank 1; the scheme argument stays so callers never bake that in."""
    return (node, 1)


def next_slot(
    scheme: Scheme, tables: Sequence[RoutingTable], slot: Slot, destination: int
) -> Slot:
    """Slot the copy in `slot` moves to when forwarded toward `destination`,
    per the owner's current table.  Raises TerminalRank when the scheme has
    no onward slot (hop-rank at top rank)."""
    node, rank = slot
    hop = tables[node].next_hop[destination]
    if scheme.kind == "hop":
        if rank >= scheme.buffers_per_node:
            raise TerminalRank(f"slot {slot} is terminal")
        return (hop, rank + 1)
    return (hop, 1)


def is_terminal(scheme: Scheme, slot: Slot) -> bool:
    return scheme.kind == "hop" and slot[1] >= scheme.buffers_per_node


def contraction(slot_path: Iterable[Slot]) -> tuple[int, ...]:
    """Collapse a slot path to the node path it visits, merging consecutive
    slots on the same node."""
    nodes: list[int] = []
    for node, _rank in slot_path:
        if not nodes or nodes[-1] != node:
            nodes.append(node)
    return tuple(nodes)


@dataclass(frozen=True)
class BufferGraphSnapshot:
    """The slot digraph induced by a scheme and a table state.

    entry_slots: image of the emission placement over all (message, node).
    forward_slots: image of the hand-off map over all slots and directions.
    Arcs are deduplicated and sorted; multiple destinations may induce the
    same arc.
    """

    vertices: tuple[Slot, ...]
    arcs: tuple[tuple[Slot, Slot], ...]
    entry_slots: tuple[Slot, ...]
    forward_slots: tuple[Slot, ...]

    def successors(self, slot: Slot) -> tuple[Slot, ...]:
        return tuple(b for a, b in self.arcs if a == slot)


@functools.lru_cache(maxsize=512)
def materialize(
    graph: NetworkGraph, scheme: Scheme, tables: tuple[RoutingTable, ...]
) -> BufferGraphSnapshot:
    """Build the full buffer graph for the given table state."""
    b = scheme.buffers_per_node
    vertices = tuple((u, r) for u in graph.nodes for r in range(1, b + 1))
    arcs = set()
    for slot in vertices:
        u = slot[0]
        for dest in graph.nodes:
            if dest == u:
                continue
            try:
                arcs.add((slot, next_slot(scheme, tables, slot, dest)))
            except TerminalRank:
                continue
    entry = tuple(entry_slot(scheme, u) for u in graph.nodes)
    forward = tuple(sorted({head for _, head in arcs}))
    return BufferGraphSnapshot(
        vertices=vertices,
        arcs=tuple(sorted(arcs)),
        entry_slots=entry,
        forward_slots=forward,
    )


def adequate(
    graph: NetworkGraph,
    scheme: Scheme,
    tables: Sequence[RoutingTable],
    slot: Slot,
    destination: int,
) -> bool:
    """True when a copy sitting in `slot` can still reach `destination` by
    following hand-offs under the current tables: the deterministic slot
    chain hits a slot owned by the destination before dying at a terminal
    rank or looping."""
    seen = set()
    cur = slot
    while True:
        if cur[0] == destination:
            return True
        if cur in seen:
            return False
        seen.add(cur)
        try:
            cur = next_slot(scheme, tables, cur, destination)
        except TerminalRank:
            return False


@dataclass(frozen=True)
class DagCertificate:
    """Either a topological order of the slots or a witness cycle."""

    acyclic: bool
    topo_order: Optional[tuple[Slot, ...]]
    cycle: Optional[tuple[Slot, ...]]


def is_dag(snapshot: BufferGraphSnapshot) -> DagCertificate:
    """Kahn's algorithm with deterministic tie-breaks; on failure, extract
    one cycle from the leftover subgraph as the certificate."""
    indeg = {v: 0 for v in snapshot.vertices}
    out: dict[Slot, list[Slot]] = {v: [] for v in snapshot.vertices}
    for a, b in snapshot.arcs:
        out[a].append(b)
        indeg[b] += 1
    ready = sorted(v for v, d in indeg.items() if d == 0)
    order: list[Slot] = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
        ready.sort()
    if len(order) == len(snapshot.vertices):
        return DagCertificate(acyclic=True, topo_order=tuple(order), cycle=None)
    leftover = {v for v in snapshot.vertices if indeg[v] > 0}
    # Every leftover vertex has an in-arc from leftover; walk successors
    # inside leftover until a repeat closes the cycle.
    start = min(leftover)
    path = [start]
    pos = {start: 0}
    cur = start
    while True:
        nxt = min(w for w in out[cur] if w in leftover)
        if nxt in pos:
            cycle = tuple(path[pos[nxt] :])
            return DagCertificate(acyclic=False, topo_order=None, cycle=cycle)
        pos[nxt] = len(path)
        path.append(nxt)
        cur = nxt


def to_dot(snapshot: BufferGraphSnapshot) -> str:
    """Graphviz rendering; entry slots are drawn as boxes."""
    lines = ["digraph buffers {"]
    entry = set(snapshot.entry_slots)
    for u, r in snapshot.vertices:
        shape = "box" if (u, r) in entry else "ellipse"
        lines.append(f'  "{u}.{r}" [shape={shape}];')
    for (u, r), (v, s) in snapshot.arcs:
        lines.append(f'  "{u}.{r}" -> "{v}.{s}";')
    lines.append("}")
    return "\n".join(lines)
