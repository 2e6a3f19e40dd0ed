"""Self-stabilizing min-hop routing.

Each node repeatedly recomputes its whole table from neighbor tables:
dist to itself is 0, dist to anything else is 1 + the best neighbor value,
capped at node_count.  The next hop is the minimizing neighbor, lowest id
on ties.  Starting from arbitrary tables, fair repetition converges to the
unique fixpoint, which equals the BFS tables.
"""

from __future__ import annotations

import functools
from dataclasses import replace

from .core import Configuration, NetworkGraph, RoutingTable


def max_distance(graph: NetworkGraph) -> int:
    # Cap for the distance value domain.
    return graph.node_count


def local_recompute(graph: NetworkGraph, tables: tuple[RoutingTable, ...], u: int) -> RoutingTable:
    """The table node u would adopt given current neighbor tables."""
    n = graph.node_count
    cap = max_distance(graph)
    dist = [0] * n
    nxt = [u] * n
    for d in range(n):
        if d == u:
            continue
        best = cap + 1
        best_v = graph.neighbors[u][0]
        for v in graph.neighbors[u]:
            dv = tables[v].dist[d]
            if dv < best:
                best = dv
                best_v = v
        dist[d] = min(cap, 1 + best)
        nxt[d] = best_v
    return RoutingTable(owner=u, dist=tuple(dist), next_hop=tuple(nxt))


def route_enabled(config: Configuration, u: int) -> bool:
    """True when recomputing u's table would change it."""
    return local_recompute(config.graph, config.tables, u) != config.tables[u]


def route_step(config: Configuration, u: int) -> Configuration:
    """Apply u's local recompute.  Pure table update; the scheduler owns the
    step counter."""
    new = local_recompute(config.graph, config.tables, u)
    tables = config.tables[:u] + (new,) + config.tables[u + 1 :]
    return replace(config, tables=tables)


@functools.lru_cache(maxsize=64)
def bfs_oracle(graph: NetworkGraph) -> tuple[RoutingTable, ...]:
    """Ground-truth tables computed by BFS from each destination, written
    without reference to the local recompute rule so the two can check each
    other."""
    n = graph.node_count
    dist = [[max_distance(graph)] * n for _ in range(n)]
    for d in range(n):
        dist[d][d] = 0
        frontier = [d]
        while frontier:
            nxt = []
            for u in frontier:
                for v in graph.neighbors[u]:
                    if dist[v][d] > dist[u][d] + 1:
                        dist[v][d] = dist[u][d] + 1
                        nxt.append(v)
            frontier = nxt
    tables = []
    for u in range(n):
        nxt_row = []
        for d in range(n):
            if d == u:
                nxt_row.append(u)
                continue
            hop = u
            for v in graph.neighbors[u]:  # ascending, so ties pick lowest id
                if dist[v][d] == dist[u][d] - 1:
                    hop = v
                    break
            nxt_row.append(hop)
        tables.append(RoutingTable(owner=u, dist=tuple(dist[u]), next_hop=tuple(nxt_row)))
    return tuple(tables)


def is_stabilized(config: Configuration) -> bool:
    """Tables equal the unique fixpoint (the BFS tables)."""
    return config.tables == bfs_oracle(config.graph)


def oracle_path(graph: NetworkGraph, source: int, destination: int) -> tuple[int, ...]:
    """Node path the stabilized tables forward along, source included."""
    tables = bfs_oracle(graph)
    path = [source]
    u = source
    while u != destination:
        u = tables[u].next_hop[destination]
        path.append(u)
    return tuple(path)


def synchronous_round(graph: NetworkGraph, tables: tuple[RoutingTable, ...]) -> tuple[RoutingTable, ...]:
    """One synchronous round: every node recomputes from the same snapshot.
    Test helper for the convergence bound."""
    return tuple(local_recompute(graph, tables, u) for u in range(graph.node_count))
