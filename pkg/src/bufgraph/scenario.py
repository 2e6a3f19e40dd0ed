"""Scenario files: flat key/value text describing one runnable instance.

Schema (one `key = value` per line; `#` starts a comment; `message` and
`initial` repeat):

    name = arbitrary-path-3
    graph = path-3              named corpus graph, or give edges +
    edges = 0-1, 1-2            diameter_bound explicitly
    diameter_bound = 2
    scheme = hop                hop | ring
    buffers = 3                 default: diameter_bound + 1 (hop), 1 (ring)
    variant = reference         controller variant to run
    policy = frr                frr | adversary
    policy_seed = 0
    corruption = seed:7         seed:<int> | clean (default clean)
    max_steps = 3000            default: 200 * nodes * buffers
    message = m0 0 -> 2         queued emission, optional "@ <release>"
    message = m1 2 -> 0 @ 5
    initial = x9 at 1.3 -> 0    junk copy in slot (1,3) headed to node 0
    expect_deadlock = false     exploration expectation
    close_generation = false    exploration drops queued emissions
    state_limit = 200000        exploration cap override

Named corpus graphs: path-N, cycle-N, star-N (node 0 is the hub), and
grid-2x2.  A campaign seed replaces the corruption seed (clean scenarios
stay clean) and folds into the adversary seed, so one file fans out into
many deterministic instances.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .controller import Variant
from .core import (
    Configuration,
    NetworkGraph,
    Scheme,
    WorkloadItem,
    attach_workload,
    build_graph,
    place_initial_message,
    random_initial_configuration,
    scheme_from_params,
)
from .scheduler import FairRoundRobin, Policy, SeededAdversary


class ScenarioError(ValueError):
    pass


def corpus_graph(name: str) -> NetworkGraph:
    """Build one of the named test graphs."""
    if name == "grid-2x2":
        return build_graph([(0, 1), (0, 2), (1, 3), (2, 3)], 2)
    kind, _, num = name.partition("-")
    try:
        k = int(num)
    except ValueError:
        raise ScenarioError(f"unknown graph {name!r}") from None
    if kind == "path" and k >= 2:
        return build_graph([(i, i + 1) for i in range(k - 1)], k - 1)
    if kind == "cycle" and k >= 3:
        return build_graph([(i, (i + 1) % k) for i in range(k)], k // 2)
    if kind == "star" and k >= 2:
        return build_graph([(0, i) for i in range(1, k)], 2 if k > 2 else 1)
    raise ScenarioError(f"unknown graph {name!r}")


CORPUS_GRAPHS = ("path-3", "path-5", "cycle-3", "cycle-5", "star-4", "grid-2x2")


@dataclass(frozen=True)
class Placement:
    msg_id: str
    node: int
    rank: int
    destination: int


@dataclass(frozen=True)
class Scenario:
    name: str
    graph_name: Optional[str]
    edges: Optional[tuple[tuple[int, int], ...]]
    diameter_bound: Optional[int]
    scheme_kind: str
    buffers: Optional[int]
    variant: Variant
    policy: str
    policy_seed: int
    corruption: Union[str, int]  # "clean" or a seed
    max_steps: Optional[int]
    workload: tuple[WorkloadItem, ...]
    placements: tuple[Placement, ...]
    expect_deadlock: bool
    close_generation: bool
    state_limit: Optional[int]


_MESSAGE_RE = re.compile(r"^(\S+)\s+(\d+)\s*->\s*(\d+)(?:\s*@\s*(\d+))?$")
_INITIAL_RE = re.compile(r"^(\S+)\s+at\s+(\d+)\.(\d+)\s*->\s*(\d+)$")
_BOOLS = {"true": True, "false": False, "yes": True, "no": False}


def parse_scenario(text: str, default_name: str = "scenario") -> Scenario:
    fields: dict[str, str] = {}
    workload: list[WorkloadItem] = []
    placements: list[Placement] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if " #" in line:
            line = line[: line.index(" #")].rstrip()
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "message":
            m = _MESSAGE_RE.match(value)
            if not m:
                raise ScenarioError(f"line {lineno}: bad message {value!r}")
            workload.append(
                WorkloadItem(
                    id=m.group(1),
                    source=int(m.group(2)),
                    destination=int(m.group(3)),
                    release_step=int(m.group(4) or 0),
                )
            )
        elif key == "initial":
            m = _INITIAL_RE.match(value)
            if not m:
                raise ScenarioError(f"line {lineno}: bad initial placement {value!r}")
            placements.append(
                Placement(
                    msg_id=m.group(1),
                    node=int(m.group(2)),
                    rank=int(m.group(3)),
                    destination=int(m.group(4)),
                )
            )
        else:
            if key in fields:
                raise ScenarioError(f"line {lineno}: duplicate key {key!r}")
            fields[key] = value
    name = fields.pop("name", default_name)
    graph_name = fields.pop("graph", None)
    edges = None
    if "edges" in fields:
        edges_raw = fields.pop("edges")
        pairs = []
        for part in edges_raw.split(","):
            part = part.strip()
            m = re.match(r"^(\d+)-(\d+)$", part)
            if not m:
                raise ScenarioError(f"bad edge {part!r}")
            pairs.append((int(m.group(1)), int(m.group(2))))
        edges = tuple(pairs)
    diameter_bound = int(fields.pop("diameter_bound")) if "diameter_bound" in fields else None
    if graph_name is None and edges is None:
        raise ScenarioError("scenario needs graph = <name> or edges = ...")
    if graph_name is None and diameter_bound is None:
        raise ScenarioError("explicit edges need diameter_bound")
    scheme_kind = fields.pop("scheme", "hop")
    if scheme_kind not in ("hop", "ring"):
        raise ScenarioError(f"unknown scheme {scheme_kind!r}")
    buffers = int(fields.pop("buffers")) if "buffers" in fields else None
    try:
        variant = Variant(fields.pop("variant", "reference"))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    policy = fields.pop("policy", "frr")
    if policy not in ("frr", "adversary"):
        raise ScenarioError(f"unknown policy {policy!r}")
    policy_seed = int(fields.pop("policy_seed", "0"))
    corruption_raw = fields.pop("corruption", "clean")
    corruption: Union[str, int]
    if corruption_raw == "clean":
        corruption = "clean"
    elif corruption_raw.startswith("seed:"):
        corruption = int(corruption_raw[len("seed:") :])
    else:
        raise ScenarioError(f"corruption must be clean or seed:<int>, got {corruption_raw!r}")
    max_steps = int(fields.pop("max_steps")) if "max_steps" in fields else None
    expect_deadlock = _parse_bool(fields.pop("expect_deadlock", "false"))
    close_generation = _parse_bool(fields.pop("close_generation", "false"))
    state_limit = int(fields.pop("state_limit")) if "state_limit" in fields else None
    if fields:
        raise ScenarioError(f"unknown keys: {sorted(fields)}")
    return Scenario(
        name=name,
        graph_name=graph_name,
        edges=edges,
        diameter_bound=diameter_bound,
        scheme_kind=scheme_kind,
        buffers=buffers,
        variant=variant,
        policy=policy,
        policy_seed=policy_seed,
        corruption=corruption,
        max_steps=max_steps,
        workload=tuple(workload),
        placements=tuple(placements),
        expect_deadlock=expect_deadlock,
        close_generation=close_generation,
        state_limit=state_limit,
    )


def _parse_bool(raw: str) -> bool:
    try:
        return _BOOLS[raw.lower()]
    except KeyError:
        raise ScenarioError(f"expected true/false, got {raw!r}") from None


def load_scenario(path) -> Scenario:
    p = Path(path)
    return parse_scenario(p.read_text(), default_name=p.stem)


def scenario_graph(sc: Scenario) -> NetworkGraph:
    if sc.graph_name is not None:
        return corpus_graph(sc.graph_name)
    return build_graph(sc.edges, sc.diameter_bound)


def scenario_scheme(sc: Scenario, graph: NetworkGraph) -> Scheme:
    if sc.buffers is not None:
        b = sc.buffers
    elif sc.scheme_kind == "hop":
        b = graph.diameter_bound + 1
    else:
        b = 1
    return scheme_from_params(sc.scheme_kind, b)


def build_configuration(sc: Scenario, seed_override: Optional[int] = None) -> Configuration:
    """Initial configuration for a scenario.  seed_override replaces the
    corruption seed; clean scenarios stay clean so crafted placements keep
    their meaning across campaign seeds."""
    graph = scenario_graph(sc)
    scheme = scenario_scheme(sc, graph)
    if sc.corruption == "clean":
        seed = seed_override if seed_override is not None else 0
        config = random_initial_configuration(graph, scheme, seed, clean=True)
    else:
        seed = seed_override if seed_override is not None else sc.corruption
        config = random_initial_configuration(graph, scheme, seed)
    for p in sc.placements:
        config = place_initial_message(config, p.node, p.rank, p.destination, p.msg_id)
    return attach_workload(config, sc.workload)


def make_policy(sc: Scenario, seed_override: Optional[int] = None) -> Policy:
    if sc.policy == "adversary":
        seed = sc.policy_seed if seed_override is None else sc.policy_seed + seed_override
        return SeededAdversary(seed)
    return FairRoundRobin()
