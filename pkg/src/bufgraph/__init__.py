"""Deterministic simulator and verification harness for buffer-graph
message forwarding under self-stabilizing min-hop routing."""

from .buffergraph import (
    BufferGraphSnapshot,
    DagCertificate,
    TerminalRank,
    adequate,
    contraction,
    entry_slot,
    is_dag,
    materialize,
    next_slot,
    to_dot,
)
from .controller import (
    IllegalMove,
    Move,
    Variant,
    apply_move,
    condition_map,
    effective_scheme,
    enabled_moves,
    mapped_monitor,
)
from .core import (
    BadDiameterBound,
    Configuration,
    DisconnectedGraph,
    DuplicateEdge,
    HopRankScheme,
    Message,
    NetworkGraph,
    OutboxEntry,
    RingScheme,
    RoutingTable,
    SchemeError,
    SelfLoop,
    Token,
    WorkloadItem,
    attach_workload,
    build_graph,
    canonical_key,
    deserialize,
    place_initial_message,
    random_initial_configuration,
    serialize,
    snapshot_hash,
)
from .routing import bfs_oracle, is_stabilized, route_enabled, route_step
from .scenario import Scenario, ScenarioError, corpus_graph, load_scenario, parse_scenario
from .scheduler import (
    FairRoundRobin,
    FixedScript,
    ScriptMismatch,
    SeededAdversary,
    Trace,
    fairness_audit,
    run,
    schedulable_moves,
    trace_from_jsonl,
    trace_to_jsonl,
)
from .verifier import (
    MonitorBounds,
    MonitorVerdict,
    ReachabilityReport,
    ReplayMismatch,
    StateSpaceExceeded,
    campaign,
    explore,
    monitor_trace,
)

__version__ = "0.1.0"
