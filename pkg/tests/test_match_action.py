import random

import pytest

from match_action import (
    ActionCall,
    Color,
    DuplicateExactKey,
    Expr,
    IndexOutOfRange,
    MalformedAction,
    MalformedEntry,
    MatchKind,
    MatchTable,
    MatEntry,
    MatNode,
    MauGraph,
    MauLoop,
    NoSuchNode,
    NoSuchObject,
    Stage,
    StatefulStore,
    TwoRateMeter,
    cp_mat_op,
    cp_set_default,
    lookup,
    parse_match,
    run_mau,
    validate_mau,
)
from phv import DuplicateEntry, EgressPortWriteInEgressStage, NoSuchEntry, TableOp, UnresolvedReference

LOOKUPS = 2_000
TABLES = 10
WIDTH = 16


def covers(entry, value, width):
    """Match predicate built from explicit masks."""
    full = (1 << width) - 1
    if entry.kind == MatchKind.EXACT:
        return value == entry.value
    if entry.kind == MatchKind.LPM:
        mask = full ^ (full >> entry.prefix_len)
        return (value & mask) == (entry.value & mask)
    if entry.kind == MatchKind.TERNARY:
        return (value ^ entry.value) & entry.mask == 0
    return entry.value <= value <= entry.high


def reference_lookup(entries, value, width):
    """Linear scan giving the semantic answer for every match kind."""
    matching = [(i, e) for i, e in enumerate(entries) if covers(e, value, width)]
    if not matching:
        return None
    kind = entries[0].kind
    if kind == MatchKind.LPM:
        return max(matching, key=lambda m: m[1].prefix_len)[1]
    if kind == MatchKind.EXACT:
        return matching[0][1]
    return min(matching, key=lambda m: (-m[1].priority, m[0]))[1]


def random_entries(rng, kind, count):
    entries, keys = [], set()
    if kind == MatchKind.LPM:
        # the default route and one host route are always present
        for entry in (MatEntry(kind, 0, prefix_len=0),
                      MatEntry(kind, rng.randrange(1 << WIDTH), prefix_len=WIDTH)):
            keys.add(entry.key)
            entries.append(entry)
    while len(entries) < count:
        if kind == MatchKind.EXACT:
            entry = MatEntry(kind, rng.randrange(1 << WIDTH))
        elif kind == MatchKind.LPM:
            plen = rng.randint(0, WIDTH)
            value = rng.randrange(1 << WIDTH) >> (WIDTH - plen) << (WIDTH - plen) if plen else 0
            entry = MatEntry(kind, value, prefix_len=plen)
        elif kind == MatchKind.TERNARY:
            entry = MatEntry(kind, rng.randrange(1 << WIDTH), mask=rng.randrange(1 << WIDTH),
                             priority=rng.randint(0, 5))
        else:
            low = rng.randrange(1 << WIDTH)
            entry = MatEntry(kind, low, high=min((1 << WIDTH) - 1, low + rng.randrange(4096)),
                             priority=rng.randint(0, 5))
        if entry.key not in keys:
            keys.add(entry.key)
            entries.append(entry)
    rng.shuffle(entries)
    return entries


@pytest.mark.parametrize("kind", list(MatchKind))
def test_lookup_agrees_with_reference(kind):
    rng = random.Random(f"lookup-{kind.value}")
    hits = 0
    for _ in range(TABLES):
        entries = random_entries(rng, kind, rng.randint(2, 64))
        table = MatchTable(kind, WIDTH, entries)
        for _ in range(LOOKUPS):
            if rng.random() < 0.3:
                value = rng.choice(entries).value
            else:
                value = rng.randrange(1 << WIDTH)
            expected = reference_lookup(entries, value, WIDTH)
            assert table.lookup(value) is expected
            assert lookup(entries, value, WIDTH) is expected
            hits += expected is not None
    assert hits > 0


def test_lpm_edge_prefixes():
    default = MatEntry(MatchKind.LPM, 0, prefix_len=0)
    host = MatEntry(MatchKind.LPM, 0xBEEF, prefix_len=WIDTH)
    table = MatchTable(MatchKind.LPM, WIDTH, [default, host])
    assert table.lookup(0xBEEF) is host
    assert table.lookup(0xBEEE) is default
    assert table.lookup(0) is default
    assert MatchTable(MatchKind.LPM, WIDTH, [host]).lookup(0xBEEE) is None


def test_lpm_prefers_longest_prefix():
    entries = [
        parse_match(MatchKind.LPM, "10.0.0.0/8", 32),
        parse_match(MatchKind.LPM, "10.1.0.0/16", 32),
        parse_match(MatchKind.LPM, "0.0.0.0/0", 32),
    ]
    assert lookup(entries, 0x0A010203, 32) is entries[1]
    assert lookup(entries, 0x0A020203, 32) is entries[0]
    assert lookup(entries, 0x0B000000, 32) is entries[2]


def test_ternary_ties_keep_insertion_order():
    first = parse_match(MatchKind.TERNARY, "0x10&&&0xf0", 8, priority=1)
    second = parse_match(MatchKind.TERNARY, "0x12&&&0xff", 8, priority=1)
    assert lookup([first, second], 0x12, 8) is first
    better = parse_match(MatchKind.TERNARY, "0x12&&&0xff", 8, priority=2)
    assert lookup([first, better], 0x12, 8) is better


def test_parse_match_rejects_bad_keys():
    with pytest.raises(MalformedEntry):
        parse_match(MatchKind.RANGE, "5", 8)
    with pytest.raises(MalformedEntry):
        parse_match(MatchKind.EXACT, "ten", 8)


def test_entry_problems():
    assert parse_match(MatchKind.EXACT, "256", 8).problem(8)
    assert parse_match(MatchKind.LPM, "10.0.0.1/8", 32).problem(32) == "lpm key has bits set beyond its prefix"
    assert parse_match(MatchKind.RANGE, "9..3", 8).problem(8)
    assert parse_match(MatchKind.RANGE, "3..9", 8).problem(8) is None


def test_table_apply():
    table = MatchTable(MatchKind.EXACT, 8)
    table.apply(MatEntry(MatchKind.EXACT, 4), TableOp.ADD)
    with pytest.raises(DuplicateExactKey):
        table.apply(MatEntry(MatchKind.EXACT, 4), TableOp.ADD)
    with pytest.raises(MalformedEntry):
        table.apply(MatEntry(MatchKind.EXACT, 400), TableOp.ADD)
    with pytest.raises(MalformedEntry):
        table.apply(MatEntry(MatchKind.LPM, 0, prefix_len=0), TableOp.ADD)
    table.apply(MatEntry(MatchKind.EXACT, 4), TableOp.DELETE)
    assert table.lookup(4) is None
    with pytest.raises(NoSuchEntry):
        table.apply(MatEntry(MatchKind.EXACT, 4), TableOp.MODIFY)

    ternary = MatchTable(MatchKind.TERNARY, 8)
    ternary.apply(parse_match(MatchKind.TERNARY, "1&&&3", 8), TableOp.ADD)
    with pytest.raises(DuplicateEntry):
        ternary.apply(parse_match(MatchKind.TERNARY, "5&&&3", 8), TableOp.ADD)


def test_expr_parse_and_evaluate(phv_for, packet):
    phv = phv_for(packet(), port=3)
    expr = Expr.parse("ingress_port+0x10-1")
    assert expr.field_refs() == ["ingress_port"]
    assert expr.evaluate(phv) == 18
    assert str(expr) == "ingress_port+16-1"
    with pytest.raises(MalformedAction):
        Expr.parse("")


def test_action_build_checks_signature():
    assert ActionCall.build("counter_inc", ["c"]).args == ("c",)
    with pytest.raises(MalformedAction):
        ActionCall.build("teleport", [])
    with pytest.raises(MalformedAction):
        ActionCall.build("set_field", ["prio"])
    assert ActionCall.build("register_read", ["prio", "r", 0]).writes() == ["prio"]


def canonical_graph(miss_threshold=None):
    return MauGraph({
        "proto": MatNode("proto", "proto_type", MatchKind.EXACT, 8, [
            parse_match(MatchKind.EXACT, "4", 8, actions=[ActionCall.build("counter_inc", ["ipv4"])]),
            parse_match(MatchKind.EXACT, "6", 8, actions=[ActionCall.build("drop")]),
        ], next_hit="fwd", next_miss="fwd", miss_threshold=miss_threshold),
        "fwd": MatNode("fwd", "ingress_port", MatchKind.EXACT, 16, [
            parse_match(MatchKind.EXACT, "0", 16, actions=[ActionCall.build("set_egress_port", [1])]),
        ], default_actions=[ActionCall.build("set_mcast_group", [7])]),
    }, start="proto")


def parsed(phv_for, packet, proto, port=0):
    phv = phv_for(packet(proto=proto), port=port)
    phv.write("proto_type", proto)
    return phv


def store_with_ipv4():
    store = StatefulStore()
    store.declare_counter("ipv4")
    return store


def test_run_mau_hit_counts_and_forwards(phv_for, packet):
    store = store_with_ipv4()
    graph = canonical_graph()
    out = run_mau(parsed(phv_for, packet, 4), graph, store)
    assert store.counters["ipv4"] == 1
    assert out.read("egress_port") == 1
    assert out.read("unicast_flag") == 1
    assert out.get("mcast_group") is None
    assert (graph.nodes["proto"].hits, graph.nodes["fwd"].hits) == (1, 1)


def test_run_mau_drop_halts(phv_for, packet):
    graph = canonical_graph()
    out = run_mau(parsed(phv_for, packet, 6), graph, store_with_ipv4())
    assert out.drop_reason == "mat_drop"
    assert out.get("egress_port") is None
    assert graph.nodes["fwd"].hits + graph.nodes["fwd"].misses == 0


def test_run_mau_miss_runs_default(phv_for, packet):
    notes = []
    graph = canonical_graph(miss_threshold=2)
    store = store_with_ipv4()
    for _ in range(3):
        out = run_mau(parsed(phv_for, packet, 17, port=2), graph, store,
                      notify=lambda kind, payload: notes.append((kind, payload)))
    assert out.read("mcast_group") == 7
    assert out.read("unicast_flag") == 0
    assert out.get("egress_port") is None
    assert notes == [("table_miss_threshold", {"node": "proto", "misses": 2})]


def test_empty_graph_is_identity(phv_for, packet):
    phv = parsed(phv_for, packet, 4)
    out = run_mau(phv, MauGraph(), StatefulStore())
    assert out.header_fields == phv.header_fields and out.metadata == phv.metadata


def test_arithmetic_wraps(phv_for, packet):
    graph = MauGraph({"n": MatNode("n", "ingress_port", MatchKind.EXACT, 16, [], default_actions=[
        ActionCall.build("set_field", ["prio", 250]),
        ActionCall.build("add", ["prio", 10]),
        ActionCall.build("shift", ["proto_type", -1]),
        ActionCall.build("xor", ["proto_type", "0x80"]),
    ])}, start="n")
    out = run_mau(parsed(phv_for, packet, 0x44), graph, StatefulStore())
    assert out.read("prio") == 4
    assert out.read("proto_type") == 0xA2


@pytest.mark.parametrize("primitive,operand,expected", [
    ("shl", 1, 0x88),
    ("shl", 7, 0x00),
    ("shl", 8, 0x00),
    ("shl", "eth_src", 0x00),
    ("shr", "eth_src", 0x00),
    ("shift", 1 << 40, 0x00),
    ("shift", -(1 << 40), 0x00),
    ("shl", -2, 0x11),
    ("shr", 2, 0x11),
    ("shr", -1, 0x88),
    ("shift", -1, 0x22),
])
def test_shift_amounts(phv_for, packet, primitive, operand, expected):
    graph = MauGraph({"n": MatNode("n", "ingress_port", MatchKind.EXACT, 16, [], default_actions=[
        ActionCall.build(primitive, ["proto_type", operand])])}, start="n")
    phv = parsed(phv_for, packet, 0x44)
    phv.write("eth_src", 0x001122334455)
    assert run_mau(phv, graph, StatefulStore()).read("proto_type") == expected


def test_registers_and_index_bounds(phv_for, packet):
    store = StatefulStore()
    store.declare_register("seen", 4, width=8)
    graph = MauGraph({"n": MatNode("n", "ingress_port", MatchKind.EXACT, 16, [], default_actions=[
        ActionCall.build("register_write", ["seen", "ingress_port", "proto_type+1"]),
        ActionCall.build("register_read", ["prio", "seen", "ingress_port"]),
    ])}, start="n")
    out = run_mau(parsed(phv_for, packet, 0xFF, port=2), graph, store)
    assert store.registers["seen"] == [0, 0, 0, 0]
    assert out.read("prio") == 0
    out = run_mau(parsed(phv_for, packet, 9, port=2), graph, store)
    assert store.register_read("seen", 2) == 10
    assert out.read("prio") == 10
    with pytest.raises(IndexOutOfRange):
        run_mau(parsed(phv_for, packet, 9, port=5), graph, store)


def test_counter_saturates():
    store = store_with_ipv4()
    store.counter_inc("ipv4", (1 << 64) + 5)
    store.counter_inc("ipv4")
    assert store.counters["ipv4"] == (1 << 64) - 1
    with pytest.raises(NoSuchObject):
        store.counter_inc("missing")


def test_meter_colors():
    meter = TwoRateMeter(cir=1000, cbs=100, pir=2000, pbs=200)
    assert meter.execute(100, 0) is Color.GREEN
    assert meter.execute(100, 0) is Color.YELLOW
    assert meter.execute(100, 0) is Color.RED
    # 0.1 s refills both buckets to their bursts
    assert meter.execute(100, 100_000_000) is Color.GREEN


def test_cp_state_access():
    store = store_with_ipv4()
    store.declare_register("r", 2)
    store.declare_meter("m", 1, 1000, 100, 2000, 200)
    store.counter_inc("ipv4", 3)
    assert store.cp_state_access("read", "counter", "ipv4") == 3
    with pytest.raises(NoSuchObject):
        store.cp_state_access("write", "counter", "ipv4", 0, 1)
    store.cp_state_access("reset", "counter", "ipv4")
    assert store.counters["ipv4"] == 0
    store.cp_state_access("write", "register", "r", 1, 7)
    assert store.cp_state_access("read", "register", "r", 1) == 7
    store.cp_state_access("reset", "register", "r")
    assert store.registers["r"] == [0, 0]
    assert store.cp_state_access("read", "meter", "m", 0) == {
        "color": None, "committed_tokens": 100, "peak_tokens": 200}
    store.cp_state_access("write", "meter", "m", 0, (10, 5, 20, 8))
    assert store.cp_state_access("read", "meter", "m", 0)["peak_tokens"] == 8


def test_egress_stage_rejects_egress_decision(phv_for, packet):
    graph = MauGraph({"n": MatNode("n", "ingress_port", MatchKind.EXACT, 16, [], default_actions=[
        ActionCall.build("set_egress_port", [2])])}, start="n")
    with pytest.raises(EgressPortWriteInEgressStage):
        run_mau(parsed(phv_for, packet, 4), graph, StatefulStore(), stage=Stage.EGRESS)


def test_loop_guard(phv_for, packet):
    graph = MauGraph({
        "a": MatNode("a", "ingress_port", MatchKind.EXACT, 16, next_miss="b"),
        "b": MatNode("b", "ingress_port", MatchKind.EXACT, 16, next_miss="a"),
    }, start="a")
    with pytest.raises(MauLoop):
        run_mau(parsed(phv_for, packet, 4), graph, StatefulStore())


def test_cp_mat_op(phv_for, packet):
    graph = canonical_graph()
    store = store_with_ipv4()
    entry = parse_match(MatchKind.EXACT, "17", 8, actions=[ActionCall.build("drop")])
    cp_mat_op(graph, "proto", entry, TableOp.ADD)
    assert run_mau(parsed(phv_for, packet, 17), graph, store).dropped
    with pytest.raises(DuplicateExactKey):
        cp_mat_op(graph, "proto", entry, TableOp.ADD)
    with pytest.raises(NoSuchNode):
        cp_mat_op(graph, "nope", entry, TableOp.ADD)


def test_cp_mat_op_checks_action_references(catalog):
    graph = canonical_graph()
    store = store_with_ipv4()
    checks = {"catalog": catalog, "store": store}
    unknown_counter = parse_match(MatchKind.EXACT, "4", 8, actions=[
        ActionCall.build("counter_inc", ["no_such_counter"])])
    with pytest.raises(UnresolvedReference):
        cp_mat_op(graph, "proto", unknown_counter, TableOp.MODIFY, **checks)
    unknown_field = parse_match(MatchKind.EXACT, "9", 8, actions=[
        ActionCall.build("set_field", ["ttl", 1])])
    with pytest.raises(UnresolvedReference):
        cp_mat_op(graph, "proto", unknown_field, TableOp.ADD, **checks)
    assert graph.nodes["proto"].table.lookup(4).actions[0].args == ("ipv4",)
    assert graph.nodes["proto"].table.lookup(9) is None

    with pytest.raises(EgressPortWriteInEgressStage):
        cp_set_default(graph, "fwd", [ActionCall.build("set_egress_port", [2])],
                       stage=Stage.EGRESS, **checks)
    with pytest.raises(UnresolvedReference):
        cp_set_default(graph, "fwd", [ActionCall.build("register_write", ["r", 0, 1])], **checks)
    assert graph.nodes["fwd"].default_actions[0].primitive == "set_mcast_group"


def test_validate_mau(catalog):
    store = StatefulStore()
    graph = MauGraph({
        "a": MatNode("a", "proto_type", MatchKind.EXACT, 8, [
            MatEntry(MatchKind.EXACT, 1, actions=[ActionCall.build("counter_inc", ["nope"])]),
            MatEntry(MatchKind.EXACT, 1),
        ], next_hit="b", next_miss="ghost"),
        "b": MatNode("b", "ttl", MatchKind.EXACT, 8, next_miss="a"),
    }, start="a")
    codes = {d.code for d in validate_mau(graph, catalog, store, Stage.INGRESS)}
    assert {"UnresolvedReference", "DuplicateExactKey", "UnknownNode", "CycleInGraph"} <= codes

    egress = MauGraph({"e": MatNode("e", "egress_port", MatchKind.EXACT, 16, default_actions=[
        ActionCall.build("set_field", ["egress_port", 1])])}, start="e")
    codes = [d.code for d in validate_mau(egress, catalog, store, Stage.EGRESS)]
    assert codes == ["EgressPortWriteInEgressStage"]
