"""System model: network graphs, messages, buffer slots, routing state,
and the immutable Configuration that every other module manipulates.

Configurations are plain frozen dataclasses built from tuples so they can
be hashed, compared, and digested deterministically.  All mutation happens
by constructing a new Configuration.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence


class GraphError(ValueError):
    """Invalid network description."""


class SelfLoop(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class DisconnectedGraph(GraphError):
    pass


class BadDiameterBound(GraphError):
    pass


class SchemeError(ValueError):
    """Buffer scheme is not usable on the given graph."""


@dataclass(frozen=True)
class NetworkGraph:
    """Connected undirected graph with a trusted diameter bound.

    node_count: nodes are 0..node_count-1.
    edges: normalized (u < v), sorted, no duplicates, no self loops.
    neighbors: per-node sorted adjacency, derived from edges.
    diameter_bound: caller-supplied bound, checked >= true diameter.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    diameter_bound: int
    neighbors: tuple[tuple[int, ...], ...]

    @property
    def nodes(self) -> range:
        return range(self.node_count)


def _bfs_levels(neighbors: Sequence[Sequence[int]], start: int) -> list[int]:
    # Plain BFS; -1 marks unreachable.
    dist = [-1] * len(neighbors)
    dist[start] = 0
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for v in neighbors[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def build_graph(edge_list: Iterable[tuple[int, int]], diameter_bound: int) -> NetworkGraph:
    """Validate and normalize an edge list into a NetworkGraph.

    Raises SelfLoop, DuplicateEdge, DisconnectedGraph, or BadDiameterBound.
    """
    norm = []
    seen = set()
    max_node = -1
    for u, v in edge_list:
        if u == v:
            raise SelfLoop(f"edge ({u},{v})")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DuplicateEdge(f"edge {key} listed twice")
        seen.add(key)
        norm.append(key)
        max_node = max(max_node, key[1])
    if max_node < 0:
        raise DisconnectedGraph("empty edge list")
    n = max_node + 1
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in norm:
        if u < 0:
            raise GraphError(f"negative node id in edge ({u},{v})")
        adj[u].append(v)
        adj[v].append(u)
    neighbors = tuple(tuple(sorted(a)) for a in adj)
    dist0 = _bfs_levels(neighbors, 0)
    if any(d < 0 for d in dist0):
        missing = [u for u, d in enumerate(dist0) if d < 0]
        raise DisconnectedGraph(f"nodes {missing} unreachable from 0")
    diameter = 0
    for s in range(n):
        diameter = max(diameter, max(_bfs_levels(neighbors, s)))
    if diameter_bound < diameter:
        raise BadDiameterBound(f"bound {diameter_bound} < true diameter {diameter}")
    return NetworkGraph(
        node_count=n,
        edges=tuple(sorted(norm)),
        diameter_bound=diameter_bound,
        neighbors=neighbors,
    )


@dataclass(frozen=True)
class HopRankScheme:
    """Buffer scheme where a copy entering at rank 1 climbs one rank per hop.

    Rank strictly increases along every hand-off, so the induced buffer
    graph is acyclic regardless of routing table contents.  Needs at least
    diameter_bound + 1 ranks so a shortest path fits without hitting the
    terminal rank.
    """

    buffers_per_node: int

    kind = "hop"

    def validate_for(self, graph: NetworkGraph) -> None:
        need = graph.diameter_bound + 1
        if self.buffers_per_node < need:
            raise SchemeError(
                f"hop scheme needs >= {need} buffers per node on this graph, "
                f"got {self.buffers_per_node}"
            )


@dataclass(frozen=True)
class RingScheme:
    """Degenerate scheme that hands every copy back to rank 1 of the next hop.

    Kept as the standard counterexample: its buffer graph contains cycles on
    any graph with an edge, so deadlocks are reachable.
    """

    buffers_per_node: int = 1

    kind = "ring"

    def validate_for(self, graph: NetworkGraph) -> None:
        if self.buffers_per_node < 1:
            raise SchemeError("need at least one buffer per node")


Scheme = HopRankScheme | RingScheme


def scheme_from_params(kind: str, buffers_per_node: int) -> Scheme:
    if kind == "hop":
        return HopRankScheme(buffers_per_node)
    if kind == "ring":
        return RingScheme(buffers_per_node)
    raise SchemeError(f"unknown scheme kind {kind!r}")


@dataclass(frozen=True)
class Message:
    """A message copy.  source None means provenance unknown (junk found in
    an arbitrary initial state); birth_step None means it predates step 0.
    valid holds exactly when the copy was emitted by an observed Generate.
    """

    id: str
    source: Optional[int]
    destination: int
    valid: bool
    birth_step: Optional[int]

    def __post_init__(self) -> None:
        if self.valid and (self.source is None or self.birth_step is None):
            raise ValueError("valid message needs a source and a birth step")
        if not self.valid and self.birth_step is not None:
            raise ValueError("invalid message cannot have an observed birth")


@dataclass(frozen=True)
class RoutingTable:
    """One node's distance and next-hop vectors, indexed by destination."""

    owner: int
    dist: tuple[int, ...]
    next_hop: tuple[int, ...]


@dataclass(frozen=True)
class WorkloadItem:
    """A pending emission: node `source` wants `id` delivered to `destination`
    no earlier than `release_step`."""

    id: str
    source: int
    destination: int
    release_step: int = 0


@dataclass(frozen=True)
class OutboxEntry:
    """Source-side retained copy of an emitted message, dropped when the
    end-to-end ack arrives.

    in_flight is true while some slot copy or ack/nack token for the id is
    believed to exist; it gates Retransmit.
    """

    message: Message
    in_flight: bool


@dataclass(frozen=True, order=True)
class Token:
    """Control token walking hop by hop toward `target` (ack or nack)."""

    kind: str  # "ack" | "nack"
    msg_id: str
    at: int
    target: int


@dataclass(frozen=True)
class Configuration:
    """Complete system state.

    slots is a flat tuple of length node_count * buffers_per_node; the slot
    of node u at rank r (1-based) sits at index u * b + (r - 1).  delivered
    holds (message id, step) pairs sorted by id.  coin_seed/coin_draws drive
    the lossy-transmit coin stream so replays stay exact.
    """

    graph: NetworkGraph
    scheme: Scheme
    slots: tuple[Optional[Message], ...]
    tables: tuple[RoutingTable, ...]
    outboxes: tuple[tuple[OutboxEntry, ...], ...]
    workload: tuple[WorkloadItem, ...]
    delivered: tuple[tuple[str, int], ...]
    tokens: tuple[Token, ...]
    coin_seed: int
    coin_draws: int
    step: int

    @property
    def buffers_per_node(self) -> int:
        return self.scheme.buffers_per_node

    def slot_index(self, node: int, rank: int) -> int:
        b = self.scheme.buffers_per_node
        if not (0 <= node < self.graph.node_count and 1 <= rank <= b):
            raise IndexError(f"no slot ({node},{rank})")
        return node * b + (rank - 1)

    def occupant(self, node: int, rank: int) -> Optional[Message]:
        return self.slots[self.slot_index(node, rank)]

    def delivered_ids(self) -> frozenset[str]:
        return frozenset(mid for mid, _ in self.delivered)


def slot_keys(graph: NetworkGraph, scheme: Scheme) -> list[tuple[int, int]]:
    """All (node, rank) slot keys in flat index order."""
    b = scheme.buffers_per_node
    return [(u, r) for u in graph.nodes for r in range(1, b + 1)]


MAX_DIST_OF = "node_count"  # distance values live in 0..node_count


def random_initial_configuration(
    graph: NetworkGraph,
    scheme: Scheme,
    seed: int,
    clean: bool = False,
) -> Configuration:
    """Arbitrary-but-seeded initial state: every routing entry drawn from its
    legal value domain and every slot independently empty or holding junk of
    unknown provenance.  clean=True instead starts from correct tables and
    empty slots (the post-stabilization idle state).

    Draw order is fixed (tables node by node, then slots in index order) so
    seeds are stable across runs.
    """
    scheme.validate_for(graph)
    n = graph.node_count
    b = scheme.buffers_per_node
    if clean:
        from .routing import bfs_oracle

        tables = bfs_oracle(graph)
        slots: tuple[Optional[Message], ...] = (None,) * (n * b)
    else:
        rng = random.Random(seed)
        cap = n
        made = []
        for u in range(n):
            choices = graph.neighbors[u] + (u,)
            dist = tuple(rng.randint(0, cap) for _ in range(n))
            nxt = tuple(rng.choice(choices) for _ in range(n))
            made.append(RoutingTable(owner=u, dist=dist, next_hop=nxt))
        tables = tuple(made)
        junk = 0
        filled: list[Optional[Message]] = []
        for _ in range(n * b):
            if rng.random() < 0.5:
                dest = rng.randrange(n)
                filled.append(
                    Message(
                        id=f"x{junk}",
                        source=None,
                        destination=dest,
                        valid=False,
                        birth_step=None,
                    )
                )
                junk += 1
            else:
                filled.append(None)
        slots = tuple(filled)
    return Configuration(
        graph=graph,
        scheme=scheme,
        slots=slots,
        tables=tables,
        outboxes=tuple(() for _ in range(n)),
        workload=(),
        delivered=(),
        tokens=(),
        coin_seed=seed,
        coin_draws=0,
        step=0,
    )


def attach_workload(config: Configuration, items: Iterable[WorkloadItem]) -> Configuration:
    items = tuple(items)
    ids = [it.id for it in items]
    if len(set(ids)) != len(ids):
        raise ValueError("workload ids must be unique")
    for it in items:
        if not (0 <= it.source < config.graph.node_count):
            raise ValueError(f"workload source {it.source} out of range")
        if not (0 <= it.destination < config.graph.node_count):
            raise ValueError(f"workload destination {it.destination} out of range")
    return replace(config, workload=items)


def place_initial_message(
    config: Configuration, node: int, rank: int, destination: int, msg_id: str
) -> Configuration:
    """Drop a junk copy (unknown provenance) into a chosen slot of the
    initial state.  Used by scenarios that pin down a corruption pattern
    instead of drawing one from a seed."""
    if config.step != 0:
        raise ValueError("initial placements only before any move")
    idx = config.slot_index(node, rank)
    if config.slots[idx] is not None:
        raise ValueError(f"slot ({node},{rank}) already occupied")
    msg = Message(id=msg_id, source=None, destination=destination, valid=False, birth_step=None)
    slots = config.slots[:idx] + (msg,) + config.slots[idx + 1 :]
    return replace(config, slots=slots)


# --- canonical identity and hashing ---------------------------------------

def _message_key(m: Optional[Message]):
    if m is None:
        return None
    return (m.id, -1 if m.source is None else m.source, m.destination)


def canonical_key(config: Configuration):
    """Identity tuple for state-space dedup.  Excludes the step counter and
    bookkeeping that cannot influence any future enabling decision: validity
    flags, birth steps, and delivery steps."""
    return (
        config.graph.node_count,
        config.graph.edges,
        config.graph.diameter_bound,
        config.scheme.kind,
        config.scheme.buffers_per_node,
        tuple(_message_key(m) for m in config.slots),
        tuple((t.dist, t.next_hop) for t in config.tables),
        tuple(
            tuple((_message_key(e.message), e.in_flight) for e in box)
            for box in config.outboxes
        ),
        tuple((w.id, w.source, w.destination, w.release_step) for w in config.workload),
        tuple(sorted(mid for mid, _ in config.delivered)),
        tuple((t.kind, t.msg_id, t.at, t.target) for t in config.tokens),
        config.coin_seed,
        config.coin_draws,
    )


def snapshot_hash(config: Configuration) -> str:
    """Stable hex digest of the canonical identity."""
    raw = repr(canonical_key(config)).encode()
    return hashlib.blake2b(raw, digest_size=16).hexdigest()


# --- serialization (format "v1") -------------------------------------------

def _message_to_json(m: Optional[Message]):
    if m is None:
        return None
    return {
        "id": m.id,
        "source": "unknown" if m.source is None else m.source,
        "destination": m.destination,
        "valid": m.valid,
        "birth": "initial" if m.birth_step is None else m.birth_step,
    }


def _message_from_json(obj) -> Optional[Message]:
    if obj is None:
        return None
    src = obj["source"]
    birth = obj["birth"]
    return Message(
        id=obj["id"],
        source=None if src == "unknown" else int(src),
        destination=int(obj["destination"]),
        valid=bool(obj["valid"]),
        birth_step=None if birth == "initial" else int(birth),
    )


def to_jsonable(config: Configuration) -> dict:
    return {
        "version": "v1",
        "graph": {
            "edges": [list(e) for e in config.graph.edges],
            "diameter_bound": config.graph.diameter_bound,
        },
        "scheme": {"kind": config.scheme.kind, "buffers": config.scheme.buffers_per_node},
        "slots": [_message_to_json(m) for m in config.slots],
        "tables": [
            {"owner": t.owner, "dist": list(t.dist), "next": list(t.next_hop)}
            for t in config.tables
        ],
        "outboxes": [
            [
                {"message": _message_to_json(e.message), "in_flight": e.in_flight}
                for e in box
            ]
            for box in config.outboxes
        ],
        "workload": [
            {"id": w.id, "source": w.source, "destination": w.destination, "release": w.release_step}
            for w in config.workload
        ],
        "delivered": [[mid, at] for mid, at in config.delivered],
        "tokens": [[t.kind, t.msg_id, t.at, t.target] for t in config.tokens],
        "coin": {"seed": config.coin_seed, "draws": config.coin_draws},
        "step": config.step,
    }


def serialize(config: Configuration) -> str:
    """Canonical JSON: sorted keys, no whitespace, so equal configurations
    produce byte-identical text."""
    return json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))


def from_jsonable(obj: dict) -> Configuration:
    if obj.get("version") != "v1":
        raise ValueError(f"unsupported serialization version {obj.get('version')!r}")
    graph = build_graph(
        [tuple(e) for e in obj["graph"]["edges"]], obj["graph"]["diameter_bound"]
    )
    scheme = scheme_from_params(obj["scheme"]["kind"], obj["scheme"]["buffers"])
    return Configuration(
        graph=graph,
        scheme=scheme,
        slots=tuple(_message_from_json(m) for m in obj["slots"]),
        tables=tuple(
            RoutingTable(owner=t["owner"], dist=tuple(t["dist"]), next_hop=tuple(t["next"]))
            for t in obj["tables"]
        ),
        outboxes=tuple(
            tuple(
                OutboxEntry(
                    message=_message_from_json(e["message"]),
                    in_flight=bool(e["in_flight"]),
                )
                for e in box
            )
            for box in obj["outboxes"]
        ),
        workload=tuple(
            WorkloadItem(
                id=w["id"],
                source=w["source"],
                destination=w["destination"],
                release_step=w["release"],
            )
            for w in obj["workload"]
        ),
        delivered=tuple((mid, at) for mid, at in obj["delivered"]),
        tokens=tuple(Token(k, m, a, t) for k, m, a, t in obj["tokens"]),
        coin_seed=obj["coin"]["seed"],
        coin_draws=obj["coin"]["draws"],
        step=obj["step"],
    )


def deserialize(text: str) -> Configuration:
    return from_jsonable(json.loads(text))
