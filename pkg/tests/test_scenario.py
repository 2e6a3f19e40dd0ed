from pathlib import Path

import pytest

from bufgraph.controller import Variant
from bufgraph.core import HopRankScheme, RingScheme, WorkloadItem, random_initial_configuration
from bufgraph.routing import bfs_oracle
from bufgraph.scenario import (
    CORPUS_GRAPHS,
    Placement,
    ScenarioError,
    build_configuration,
    corpus_graph,
    load_scenario,
    make_policy,
    parse_scenario,
    scenario_graph,
    scenario_scheme,
)
from bufgraph.scheduler import FairRoundRobin, SeededAdversary

REPO = Path(__file__).resolve().parent.parent

FULL = """
# full example
name = demo
graph = cycle-5
scheme = hop
buffers = 4
variant = v4_no_flush
policy = adversary
policy_seed = 11
corruption = seed:9
max_steps = 777
message = m0 0 -> 2
message = m1 2 -> 0 @ 5
initial = x9 at 1.3 -> 0
expect_deadlock = true
close_generation = true
state_limit = 12345
"""


class TestParser:
    def test_full_example(self):
        sc = parse_scenario(FULL)
        assert sc.name == "demo"
        assert sc.graph_name == "cycle-5"
        assert sc.scheme_kind == "hop"
        assert sc.buffers == 4
        assert sc.variant is Variant.NO_FLUSH
        assert sc.policy == "adversary"
        assert sc.policy_seed == 11
        assert sc.corruption == 9
        assert sc.max_steps == 777
        assert sc.workload == (
            WorkloadItem("m0", 0, 2, 0),
            WorkloadItem("m1", 2, 0, 5),
        )
        assert sc.placements == (Placement("x9", 1, 3, 0),)
        assert sc.expect_deadlock is True
        assert sc.close_generation is True
        assert sc.state_limit == 12345

    def test_defaults(self):
        sc = parse_scenario("graph = path-3\n", default_name="fallback")
        assert sc.name == "fallback"
        assert sc.scheme_kind == "hop"
        assert sc.buffers is None
        assert sc.variant is Variant.REFERENCE
        assert sc.policy == "frr"
        assert sc.corruption == "clean"
        assert sc.max_steps is None
        assert sc.workload == () and sc.placements == ()
        assert sc.expect_deadlock is False and sc.close_generation is False

    def test_comments_and_blank_lines(self):
        sc = parse_scenario(
            "# leading comment\n\ngraph = path-3  # trailing\n\nmessage = m0 0 -> 2\n"
        )
        assert sc.graph_name == "path-3"
        assert sc.workload[0].id == "m0"

    def test_explicit_edges(self):
        sc = parse_scenario("edges = 0-1, 1-2, 2-3\ndiameter_bound = 3\n")
        g = scenario_graph(sc)
        assert g.node_count == 4 and g.diameter_bound == 3

    @pytest.mark.parametrize(
        "text,hint",
        [
            ("scheme = hop\n", "graph"),
            ("edges = 0-1\n", "diameter_bound"),
            ("graph = path-3\nedges = 0:1\ndiameter_bound = 1\n", "edge"),
            ("graph = path-3\nmessage = m0 0 2\n", "message"),
            ("graph = path-3\ninitial = x0 1.3 -> 0\n", "initial"),
            ("graph = path-3\nscheme = mesh\n", "scheme"),
            ("graph = path-3\npolicy = malicious\n", "policy"),
            ("graph = path-3\nvariant = v9_none\n", "v9_none"),
            ("graph = path-3\ncorruption = dirty\n", "corruption"),
            ("graph = path-3\ngraph = path-5\n", "duplicate"),
            ("graph = path-3\nflavor = salt\n", "unknown keys"),
            ("graph = path-3\nexpect_deadlock = maybe\n", "true/false"),
            ("graph = path-3\njust a line\n", "key = value"),
        ],
    )
    def test_rejections(self, text, hint):
        with pytest.raises(ScenarioError, match=hint):
            parse_scenario(text)

    def test_load_uses_stem_as_default_name(self, tmp_path):
        p = tmp_path / "my-case.scenario"
        p.write_text("graph = path-3\n")
        assert load_scenario(p).name == "my-case"


class TestCorpusGraphs:
    def test_shapes(self):
        g = corpus_graph("path-5")
        assert g.node_count == 5 and len(g.edges) == 4 and g.diameter_bound == 4
        g = corpus_graph("cycle-5")
        assert g.node_count == 5 and len(g.edges) == 5 and g.diameter_bound == 2
        g = corpus_graph("star-4")
        assert g.node_count == 4 and g.diameter_bound == 2
        assert all(0 in e for e in g.edges)
        g = corpus_graph("grid-2x2")
        assert g.edges == ((0, 1), (0, 2), (1, 3), (2, 3))
        assert g.diameter_bound == 2

    def test_two_node_degenerates(self):
        assert corpus_graph("path-2").node_count == 2
        assert corpus_graph("star-2").diameter_bound == 1

    @pytest.mark.parametrize("bad", ["path-1", "cycle-2", "mesh-4", "path-x", "blob"])
    def test_unknown_names(self, bad):
        with pytest.raises(ScenarioError):
            corpus_graph(bad)

    def test_corpus_list_builds(self):
        for name in CORPUS_GRAPHS:
            g = corpus_graph(name)
            HopRankScheme(g.diameter_bound + 1).validate_for(g)


class TestSchemeSelection:
    def test_hop_defaults_to_bound_plus_one(self):
        sc = parse_scenario("graph = cycle-5\nscheme = hop\n")
        scheme = scenario_scheme(sc, scenario_graph(sc))
        assert isinstance(scheme, HopRankScheme) and scheme.buffers_per_node == 3

    def test_ring_defaults_to_one(self):
        sc = parse_scenario("graph = cycle-5\nscheme = ring\n")
        scheme = scenario_scheme(sc, scenario_graph(sc))
        assert isinstance(scheme, RingScheme) and scheme.buffers_per_node == 1

    def test_explicit_buffers_win(self):
        sc = parse_scenario("graph = cycle-5\nscheme = hop\nbuffers = 7\n")
        assert scenario_scheme(sc, scenario_graph(sc)).buffers_per_node == 7


class TestBuildConfiguration:
    def test_clean_stays_clean_under_override(self):
        sc = parse_scenario(
            "graph = path-3\ncorruption = clean\ninitial = x0 at 1.3 -> 0\nmessage = m0 0 -> 2\n"
        )
        c = build_configuration(sc, seed_override=41)
        assert c.tables == bfs_oracle(scenario_graph(sc))
        assert c.occupant(1, 3).id == "x0"
        assert sum(1 for s in c.slots if s is not None) == 1
        assert c.coin_seed == 41
        assert c.workload == (WorkloadItem("m0", 0, 2, 0),)

    def test_override_replaces_corruption_seed(self):
        sc = parse_scenario("graph = cycle-5\ncorruption = seed:7\n")
        g = scenario_graph(sc)
        assert build_configuration(sc, seed_override=13) == random_initial_configuration(
            g, HopRankScheme(3), 13
        )
        assert build_configuration(sc) == random_initial_configuration(g, HopRankScheme(3), 7)

    def test_placement_conflict_is_an_error(self):
        sc = parse_scenario(
            "graph = path-3\ninitial = a at 0.1 -> 1\ninitial = b at 0.1 -> 2\n"
        )
        with pytest.raises(ValueError, match="occupied"):
            build_configuration(sc)

    def test_policy_seed_folds_in_override(self):
        sc = parse_scenario("graph = path-3\npolicy = adversary\npolicy_seed = 11\n")
        assert make_policy(sc) == SeededAdversary(11)
        assert make_policy(sc, seed_override=5) == SeededAdversary(16)

    def test_frr_ignores_override(self):
        sc = parse_scenario("graph = path-3\n")
        assert make_policy(sc, seed_override=5) == FairRoundRobin()


class TestRepoCorpus:
    def test_every_shipped_scenario_builds(self):
        paths = sorted((REPO / "scenarios").rglob("*.scenario"))
        assert len(paths) == 16
        for p in paths:
            sc = load_scenario(p)
            c = build_configuration(sc, seed_override=1)
            assert c.step == 0
            assert sc.name == p.stem

    def test_campaign_corpus_has_node0_sources(self):
        # the unfair variant suppresses node 0, so every campaign scenario
        # must queue at least one emission there for the matrix to bite
        for p in sorted((REPO / "scenarios" / "campaign").glob("*.scenario")):
            sc = load_scenario(p)
            assert any(w.source == 0 for w in sc.workload), sc.name
