import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bufgraph.controller import (
    ACK_STEP,
    ADVANCE,
    CONSUME,
    GENERATE,
    LOSS_PERIOD,
    PURGE,
    RETRANSMIT,
    ROUTE_STEP,
    TRANSMIT,
    UNFAIR_NODE,
    IllegalMove,
    Move,
    Variant,
    anchor_node,
    apply_move,
    coin_fires,
    condition_map,
    effective_scheme,
    enabled_moves,
    keeps_source_copy,
    mapped_monitor,
    move_from_json,
    move_to_json,
)
from bufgraph.core import (
    HopRankScheme,
    Message,
    OutboxEntry,
    RingScheme,
    Token,
    WorkloadItem,
    attach_workload,
    place_initial_message,
    random_initial_configuration,
)
from bufgraph.scenario import CORPUS_GRAPHS, corpus_graph

ALL_VARIANTS = list(Variant)


def clean(name="path-3", b=None):
    g = corpus_graph(name)
    scheme = HopRankScheme(b if b is not None else g.diameter_bound + 1)
    return random_initial_configuration(g, scheme, seed=0, clean=True)


def run_only(config, variant=Variant.REFERENCE, limit=200):
    """Drive by always taking the first enabled move; returns the history."""
    hist = [config]
    for _ in range(limit):
        moves = enabled_moves(config, variant)
        if not moves:
            break
        config = apply_move(config, moves[0], variant)
        hist.append(config)
    return hist


class TestVariantTable:
    def test_condition_numbers(self):
        assert condition_map(Variant.REFERENCE) is None
        assert condition_map(Variant.CYCLIC_SCHEME) == 1
        assert condition_map(Variant.UNFAIR) == 2
        assert condition_map(Variant.DROP_NO_COPY) == 3
        assert condition_map(Variant.NO_FLUSH) == 4
        assert condition_map(Variant.LOSSY) == 5

    def test_mapped_monitors(self):
        assert mapped_monitor(Variant.REFERENCE) is None
        assert mapped_monitor(Variant.CYCLIC_SCHEME) == "dag"
        assert mapped_monitor(Variant.UNFAIR) == "emission"
        assert mapped_monitor(Variant.DROP_NO_COPY) == "adequacy"
        assert mapped_monitor(Variant.NO_FLUSH) == "flush"
        assert mapped_monitor(Variant.LOSSY) == "copy"

    def test_knob_values(self):
        assert UNFAIR_NODE == 0
        assert LOSS_PERIOD == 4

    def test_variant_values_are_stable(self):
        assert [v.value for v in Variant] == [
            "reference",
            "v1_cyclic_scheme",
            "v2_unfair",
            "v3_drop_no_copy",
            "v4_no_flush",
            "v5_lossy",
        ]

    def test_effective_scheme(self):
        hop = HopRankScheme(3)
        assert effective_scheme(Variant.REFERENCE, hop) is hop
        eff = effective_scheme(Variant.CYCLIC_SCHEME, hop)
        assert isinstance(eff, RingScheme)
        assert eff.buffers_per_node == 3

    def test_keeps_source_copy(self):
        assert keeps_source_copy(Variant.REFERENCE)
        assert keeps_source_copy(Variant.NO_FLUSH)
        assert not keeps_source_copy(Variant.DROP_NO_COPY)
        assert not keeps_source_copy(Variant.LOSSY)


class TestCoinStream:
    def test_seed0_frozen(self):
        fires = [d for d in range(400) if coin_fires(0, d)]
        assert len(fires) == 106
        assert fires[:9] == [1, 2, 3, 4, 7, 9, 10, 11, 17]

    def test_seed1_frozen(self):
        assert sum(coin_fires(1, d) for d in range(400)) == 88

    def test_pure(self):
        assert coin_fires(7, 13) == coin_fires(7, 13)


class TestMoveBasics:
    def test_canonical_kind_order(self):
        tok = Token("ack", "m0", 1, 0)
        moves = [
            Move(kind=ADVANCE, to_step=9),
            Move(kind=ROUTE_STEP, node=0),
            Move(kind=GENERATE, node=0, msg_id="m0"),
            Move(kind=RETRANSMIT, node=0, msg_id="m0"),
            Move(kind=TRANSMIT, slot=(0, 1), msg_id="m0"),
            Move(kind=PURGE, slot=(0, 3), msg_id="x0"),
            Move(kind=ACK_STEP, node=1, token=tok, msg_id="m0"),
            Move(kind=CONSUME, slot=(2, 2), msg_id="m1"),
        ]
        got = [m.kind for m in sorted(moves, key=Move.sort_key)]
        assert got == [
            CONSUME,
            ACK_STEP,
            PURGE,
            TRANSMIT,
            RETRANSMIT,
            GENERATE,
            ROUTE_STEP,
            ADVANCE,
        ]

    def test_slot_moves_tie_break_on_slot(self):
        a = Move(kind=TRANSMIT, slot=(0, 2), msg_id="a")
        b = Move(kind=TRANSMIT, slot=(1, 1), msg_id="b")
        assert sorted([b, a], key=Move.sort_key) == [a, b]

    def test_anchor_node(self):
        tok = Token("nack", "m0", 3, 1)
        assert anchor_node(Move(kind=CONSUME, slot=(2, 1), msg_id="m")) == 2
        assert anchor_node(Move(kind=PURGE, slot=(4, 3), msg_id="m")) == 4
        assert anchor_node(Move(kind=TRANSMIT, slot=(1, 2), msg_id="m")) == 1
        assert anchor_node(Move(kind=ACK_STEP, node=3, token=tok, msg_id="m0")) == 3
        assert anchor_node(Move(kind=RETRANSMIT, node=2, msg_id="m")) == 2
        assert anchor_node(Move(kind=GENERATE, node=1, msg_id="m")) == 1
        assert anchor_node(Move(kind=ROUTE_STEP, node=0)) == 0
        assert anchor_node(Move(kind=ADVANCE, to_step=5)) is None

    @pytest.mark.parametrize(
        "move",
        [
            Move(kind=CONSUME, slot=(2, 1), msg_id="m0"),
            Move(kind=ACK_STEP, node=1, token=Token("ack", "m0", 1, 0), msg_id="m0"),
            Move(kind=PURGE, slot=(0, 3), msg_id="x1"),
            Move(kind=TRANSMIT, slot=(1, 2), msg_id="m2"),
            Move(kind=RETRANSMIT, node=0, msg_id="m0"),
            Move(kind=GENERATE, node=4, msg_id="m9"),
            Move(kind=ROUTE_STEP, node=3),
            Move(kind=ADVANCE, to_step=17),
        ],
    )
    def test_json_round_trip(self, move):
        assert move_from_json(move_to_json(move)) == move


class TestGenerate:
    def test_emission_places_copy_and_retains_it(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 0)])
        moves = enabled_moves(c, Variant.REFERENCE)
        assert moves == (Move(kind=GENERATE, node=0, msg_id="m0"),)
        c2 = apply_move(c, moves[0], Variant.REFERENCE)
        placed = c2.occupant(0, 1)
        assert placed.id == "m0" and placed.valid and placed.birth_step == 1
        assert placed.source == 0 and placed.destination == 2
        assert c2.workload == ()
        assert c2.outboxes[0] == (OutboxEntry(placed, in_flight=True),)
        assert c2.step == 1

    def test_emission_to_self_delivers_in_place(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 1, 1, 0)])
        c2 = apply_move(c, enabled_moves(c, Variant.REFERENCE)[0], Variant.REFERENCE)
        assert c2.delivered == (("m0", 1),)
        assert all(s is None for s in c2.slots)
        assert c2.outboxes[1] == ()

    def test_release_step_gates_emission(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 5)])
        assert enabled_moves(c, Variant.REFERENCE) == ()
        c5 = replace(c, step=5)
        assert enabled_moves(c5, Variant.REFERENCE) != ()
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=GENERATE, node=0, msg_id="m0"), Variant.REFERENCE)

    def test_occupied_entry_slot_blocks_emission(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 0)])
        c = place_initial_message(c, 0, 1, 2, "x0")
        kinds = {m.kind for m in enabled_moves(c, Variant.REFERENCE)}
        assert GENERATE not in kinds

    def test_unknown_item_rejected(self):
        c = clean()
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=GENERATE, node=0, msg_id="ghost"), Variant.REFERENCE)


class TestTransmitConsumeAck:
    def test_full_clean_run_path3(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 0)])
        hist = run_only(c)
        final = hist[-1]
        # generate, two transmits, consume, two ack hops
        assert [h.step for h in hist] == [0, 1, 2, 3, 4, 5, 6]
        assert final.delivered == (("m0", 4),)
        assert all(s is None for s in final.slots)
        assert final.tokens == ()
        assert all(box == () for box in final.outboxes)
        assert enabled_moves(final, Variant.REFERENCE) == ()

    def test_transmit_moves_copy_one_hop_up(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 0)])
        c = apply_move(c, Move(kind=GENERATE, node=0, msg_id="m0"), Variant.REFERENCE)
        c = apply_move(c, Move(kind=TRANSMIT, slot=(0, 1), msg_id="m0"), Variant.REFERENCE)
        assert c.occupant(0, 1) is None
        assert c.occupant(1, 2).id == "m0"

    def test_transmit_blocked_by_occupied_target(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 0)])
        c = place_initial_message(c, 1, 2, 0, "x0")
        c = apply_move(c, Move(kind=GENERATE, node=0, msg_id="m0"), Variant.REFERENCE)
        # the workload copy at (0,1) cannot move while (1,2) is full
        assert Move(kind=TRANSMIT, slot=(0, 1), msg_id="m0") not in enabled_moves(
            c, Variant.REFERENCE
        )
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=TRANSMIT, slot=(0, 1), msg_id="m0"), Variant.REFERENCE)

    def test_consume_spawns_ack_that_walks_home(self):
        c = attach_workload(clean("path-5"), [WorkloadItem("m0", 0, 3, 0)])
        hist = run_only(c)
        # find the consume step and follow the token back
        after_consume = next(h for h in hist if h.delivered)
        assert after_consume.tokens == (Token("ack", "m0", 3, 0),)
        trail = [h.tokens[0].at for h in hist if h.tokens]
        assert trail == [3, 2, 1]
        final = hist[-1]
        assert final.outboxes[0] == () and final.tokens == ()

    def test_consume_requires_destination_owner(self):
        c = place_initial_message(clean(), 1, 1, 2, "x0")
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=CONSUME, slot=(1, 1), msg_id="x0"), Variant.REFERENCE)
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=CONSUME, slot=(2, 2), msg_id="x0"), Variant.REFERENCE)

    def test_delivery_dedup_keeps_first_step(self):
        c = clean()
        m = Message(id="m5", source=0, destination=2, valid=True, birth_step=1)
        i1, i2 = c.slot_index(2, 1), c.slot_index(2, 2)
        slots = list(c.slots)
        slots[i1] = m
        slots[i2] = m
        c = replace(c, slots=tuple(slots), step=3)
        c = apply_move(c, Move(kind=CONSUME, slot=(2, 1), msg_id="m5"), Variant.REFERENCE)
        assert c.delivered == (("m5", 4),)
        c = apply_move(c, Move(kind=CONSUME, slot=(2, 2), msg_id="m5"), Variant.REFERENCE)
        assert c.delivered == (("m5", 4),)

    def test_ack_step_requires_live_token(self):
        c = clean()
        with pytest.raises(IllegalMove):
            apply_move(
                c,
                Move(kind=ACK_STEP, node=1, token=Token("ack", "m0", 1, 0), msg_id="m0"),
                Variant.REFERENCE,
            )


class TestPurgeRetransmit:
    def stranded(self):
        """Valid copy stuck at a terminal slot it does not belong to, with
        the source still holding the retained copy."""
        c = clean()
        msg = Message(id="m9", source=0, destination=2, valid=True, birth_step=1)
        idx = c.slot_index(1, 3)
        slots = c.slots[:idx] + (msg,) + c.slots[idx + 1 :]
        outboxes = ((OutboxEntry(msg, in_flight=True),), (), ())
        return replace(c, slots=slots, outboxes=outboxes, step=5), msg

    def test_purge_then_nack_then_retransmit(self):
        c, msg = self.stranded()
        assert enabled_moves(c, Variant.REFERENCE) == (
            Move(kind=PURGE, slot=(1, 3), msg_id="m9"),
        )
        c = apply_move(c, Move(kind=PURGE, slot=(1, 3), msg_id="m9"), Variant.REFERENCE)
        assert c.occupant(1, 3) is None
        assert c.tokens == (Token("nack", "m9", 1, 0),)
        c = apply_move(c, enabled_moves(c, Variant.REFERENCE)[0], Variant.REFERENCE)
        assert c.tokens == ()
        assert c.outboxes[0] == (OutboxEntry(msg, in_flight=False),)
        move = Move(kind=RETRANSMIT, node=0, msg_id="m9")
        assert move in enabled_moves(c, Variant.REFERENCE)
        c = apply_move(c, move, Variant.REFERENCE)
        assert c.occupant(0, 1) == msg
        assert c.outboxes[0] == (OutboxEntry(msg, in_flight=True),)

    def test_purge_of_junk_spawns_nothing(self):
        c = place_initial_message(clean(), 1, 3, 0, "x7")
        c = apply_move(c, Move(kind=PURGE, slot=(1, 3), msg_id="x7"), Variant.REFERENCE)
        assert c.tokens == () and c.occupant(1, 3) is None

    def test_purge_rejects_non_terminal(self):
        c = place_initial_message(clean(), 1, 2, 0, "x7")
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=PURGE, slot=(1, 2), msg_id="x7"), Variant.REFERENCE)

    def test_retransmit_needs_lost_copy(self):
        c, _ = self.stranded()
        # retained copy is still believed in flight
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=RETRANSMIT, node=0, msg_id="m9"), Variant.REFERENCE)

    def test_retransmit_blocked_by_busy_entry_slot(self):
        c, msg = self.stranded()
        c = apply_move(c, Move(kind=PURGE, slot=(1, 3), msg_id="m9"), Variant.REFERENCE)
        c = apply_move(c, enabled_moves(c, Variant.REFERENCE)[0], Variant.REFERENCE)
        c = place_initial_message(replace(c, step=0), 0, 1, 2, "x0")
        assert Move(kind=RETRANSMIT, node=0, msg_id="m9") not in enabled_moves(
            c, Variant.REFERENCE
        )


class TestVariantDeviations:
    def test_cyclic_scheme_forwards_at_rank_one(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 0)])
        c = apply_move(c, Move(kind=GENERATE, node=0, msg_id="m0"), Variant.CYCLIC_SCHEME)
        c = apply_move(
            c, Move(kind=TRANSMIT, slot=(0, 1), msg_id="m0"), Variant.CYCLIC_SCHEME
        )
        assert c.occupant(1, 1).id == "m0"
        assert c.occupant(1, 2) is None

    def test_cyclic_scheme_never_purges(self):
        # the slot is terminal under the configured hop scheme, so the
        # reference purges; the ring twin forwards from it instead
        c = place_initial_message(clean("cycle-3"), 0, 2, 1, "x0")
        assert enabled_moves(c, Variant.REFERENCE) == (
            Move(kind=PURGE, slot=(0, 2), msg_id="x0"),
        )
        v1 = enabled_moves(c, Variant.CYCLIC_SCHEME)
        assert v1 == (Move(kind=TRANSMIT, slot=(0, 2), msg_id="x0"),)
        c2 = apply_move(c, v1[0], Variant.CYCLIC_SCHEME)
        assert c2.occupant(1, 1).id == "x0"

    def test_unfair_blocks_one_node(self):
        c = attach_workload(
            clean(), [WorkloadItem("m0", 0, 2, 0), WorkloadItem("m1", 1, 2, 0)]
        )
        gens = [m for m in enabled_moves(c, Variant.UNFAIR) if m.kind == GENERATE]
        assert gens == [Move(kind=GENERATE, node=1, msg_id="m1")]
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=GENERATE, node=0, msg_id="m0"), Variant.UNFAIR)
        # reference schedules both
        gens = [m for m in enabled_moves(c, Variant.REFERENCE) if m.kind == GENERATE]
        assert len(gens) == 2

    def test_drop_no_copy_keeps_no_outbox(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 0)])
        c = apply_move(c, Move(kind=GENERATE, node=0, msg_id="m0"), Variant.DROP_NO_COPY)
        assert c.outboxes == ((), (), ())
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=RETRANSMIT, node=0, msg_id="m0"), Variant.DROP_NO_COPY)

    def test_no_flush_refuses_purge(self):
        c = place_initial_message(clean(), 1, 3, 0, "x7")
        assert enabled_moves(c, Variant.NO_FLUSH) == ()
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=PURGE, slot=(1, 3), msg_id="x7"), Variant.NO_FLUSH)

    def test_lossy_coin_drops_on_schedule(self):
        # seed 0: draw 0 keeps the copy, draw 1 drops it
        c = clean()
        c = place_initial_message(c, 0, 1, 2, "x1")
        c = place_initial_message(c, 0, 2, 2, "x2")
        assert c.coin_seed == 0
        c = apply_move(c, Move(kind=TRANSMIT, slot=(0, 1), msg_id="x1"), Variant.LOSSY)
        assert c.coin_draws == 1
        assert c.occupant(1, 2).id == "x1"
        c = apply_move(c, Move(kind=TRANSMIT, slot=(0, 2), msg_id="x2"), Variant.LOSSY)
        assert c.coin_draws == 2
        assert c.occupant(0, 2) is None
        assert c.occupant(1, 3) is None  # dropped in transit

    def test_lossy_generate_keeps_nothing(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 0)])
        c = apply_move(c, Move(kind=GENERATE, node=0, msg_id="m0"), Variant.LOSSY)
        assert c.outboxes == ((), (), ())

    def test_reference_transmit_never_draws(self):
        c = place_initial_message(clean(), 0, 1, 2, "x1")
        c = apply_move(c, Move(kind=TRANSMIT, slot=(0, 1), msg_id="x1"), Variant.REFERENCE)
        assert c.coin_draws == 0


class TestAdvance:
    def test_advance_jumps_to_next_release(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 7)])
        c2 = apply_move(c, Move(kind=ADVANCE, to_step=7), Variant.REFERENCE)
        assert c2.step == 7
        assert enabled_moves(c2, Variant.REFERENCE) != ()

    def test_advance_must_land_exactly(self):
        c = attach_workload(clean(), [WorkloadItem("m0", 0, 2, 7)])
        for bad in (3, 8, 0):
            with pytest.raises(IllegalMove):
                apply_move(c, Move(kind=ADVANCE, to_step=bad), Variant.REFERENCE)

    def test_advance_needs_a_pending_release(self):
        c = clean()
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=ADVANCE, to_step=5), Variant.REFERENCE)


class TestEnabledIsIff:
    @settings(max_examples=60, deadline=None)
    @given(
        name=st.sampled_from(CORPUS_GRAPHS),
        seed=st.integers(0, 5_000),
        variant=st.sampled_from(ALL_VARIANTS),
    )
    def test_every_enabled_move_applies(self, name, seed, variant):
        g = corpus_graph(name)
        c = random_initial_configuration(g, HopRankScheme(g.diameter_bound + 1), seed)
        c = attach_workload(c, [WorkloadItem("m0", 0, g.node_count - 1, 0)])
        for move in enabled_moves(c, variant):
            nxt = apply_move(c, move, variant)
            assert nxt.step == c.step + 1

    def test_unknown_kind_rejected(self):
        with pytest.raises(IllegalMove):
            apply_move(clean(), Move(kind="teleport"), Variant.REFERENCE)

    def test_route_step_only_when_it_changes_something(self):
        c = clean()
        assert not any(m.kind == ROUTE_STEP for m in enabled_moves(c, Variant.REFERENCE))
        with pytest.raises(IllegalMove):
            apply_move(c, Move(kind=ROUTE_STEP, node=0), Variant.REFERENCE)

    def test_corrupt_tables_enable_route_steps(self):
        g = corpus_graph("path-3")
        c = random_initial_configuration(g, HopRankScheme(3), seed=11)
        kinds = {m.kind for m in enabled_moves(c, Variant.REFERENCE)}
        assert ROUTE_STEP in kinds


class TestRunInvariants:
    @settings(max_examples=50, deadline=None)
    @given(
        name=st.sampled_from(CORPUS_GRAPHS),
        seed=st.integers(0, 5_000),
        variant=st.sampled_from(ALL_VARIANTS),
    )
    def test_random_walks_preserve_invariants(self, name, seed, variant):
        g = corpus_graph(name)
        n = g.node_count
        c = random_initial_configuration(g, HopRankScheme(g.diameter_bound + 1), seed)
        c = attach_workload(
            c,
            [
                WorkloadItem("m0", 0, n - 1, 0),
                WorkloadItem("m1", n - 1, 0, 3),
            ],
        )
        rng = random.Random(seed * 31 + 7)
        prev = c
        for _ in range(60):
            moves = enabled_moves(prev, variant)
            if not moves:
                break
            cur = apply_move(prev, rng.choice(moves), variant)
            assert cur.step == prev.step + 1
            ids = [m.id for m in cur.slots if m is not None]
            assert len(ids) == len(set(ids))
            assert set(prev.delivered) <= set(cur.delivered)
            assert {w.id for w in cur.workload} <= {w.id for w in prev.workload}
            for t in cur.tokens:
                assert t.kind in ("ack", "nack")
                assert t.at != t.target
                assert 0 <= t.at < n and 0 <= t.target < n
            if variant is Variant.LOSSY:
                assert cur.coin_draws >= prev.coin_draws
            else:
                assert cur.coin_draws == prev.coin_draws
            for u in range(n):
                for e in cur.outboxes[u]:
                    assert e.message.source == u and e.message.valid
            prev = cur
