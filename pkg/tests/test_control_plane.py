import pytest

import control_plane
from buffer_engine import NoSuchBuffer
from control_plane import CpCommand, Notification, ParseError, apply, format_notification, parse_actions, parse_command, parse_script, poll_notifications
from dpp_io import TraceRecord
from match_action import Color, DuplicateExactKey, IndexOutOfRange, MatchKind
from phv import EgressPortWriteInEgressStage, UnresolvedReference
from pipeline import Device, run_trace
from replication import NoSuchGroup
from scheduler import UnknownParam


@pytest.fixture
def device(canonical):
    return Device(canonical)


def run(device, line):
    return apply(parse_command(line), device)


def test_parse_script_collects_errors():
    script = parse_script([
        "# header",
        "10 read counter ipv4_counter",
        "",
        "x read counter ipv4_counter",
        "20 frobnicate",
        "5 read counter ipv4_counter",
        "30 sched set capacity 4  # trailing comment",
    ])
    assert [c.at for c in script.commands] == [10, 30]
    assert script.commands[1].args == ("set", "capacity", "4")
    assert len(script.errors) == 3
    assert script.errors[0].startswith("ParseError: line 4")
    assert "before 10" in script.errors[2]


def test_command_str_round_trips():
    cmd = parse_command("50 table add mat_proto exact 17 drop", 3)
    assert cmd == CpCommand(50, "table", ("add", "mat_proto", "exact", "17", "drop"), 3)
    assert str(cmd) == "50 table add mat_proto exact 17 drop"


def test_parse_actions_splits_on_semicolons():
    actions = parse_actions(["counter_inc", "ipv4_counter;", "set_egress_port", "2", ";", "no_op"])
    assert [a.primitive for a in actions] == ["counter_inc", "set_egress_port", "no_op"]
    assert parse_actions([]) == []


def test_table_verbs(device):
    assert run(device, "0 table add mat_proto exact 17 drop") == "ack"
    node = device.dpp.mau_ingress.nodes["mat_proto"]
    assert node.table.lookup(17).actions[0].primitive == "drop"
    with pytest.raises(DuplicateExactKey):
        run(device, "0 table add mat_proto exact 17 drop")
    run(device, "0 table mod mat_proto exact 17 no_op")
    assert node.table.lookup(17).actions[0].primitive == "no_op"
    run(device, "0 table del mat_proto exact 17")
    assert node.table.lookup(17) is None
    run(device, "0 table default mat_proto counter_inc ipv4_counter")
    assert node.default_actions[0].primitive == "counter_inc"
    with pytest.raises(ParseError):
        run(device, "0 table add mat_proto fuzzy 17 drop")


def test_table_priority_option(canonical_raw, build):
    canonical_raw["mau_ingress"]["nodes"][0].update(kind="ternary", entries=[])
    device = Device(build(canonical_raw))
    run(device, "0 table add mat_proto ternary 0x04&&&0x0f prio=3 drop")
    entry = device.dpp.mau_ingress.nodes["mat_proto"].entries[0]
    assert (entry.kind, entry.priority, entry.mask) == (MatchKind.TERNARY, 3, 0x0F)


def test_buffer_verbs(device):
    run(device, "0 bpt set 1 tx true")
    assert device.be2.bpt[1].tx is True
    run(device, "0 bpt set bre 2 size 8")
    assert device.bre.buffers.bpt[2].size == 8
    run(device, "0 bct add vlan_tag 0x000100 5 prio=4")
    assert device.be2.bct[-1].priority == 4
    run(device, "0 bct del vlan_tag 0x000100")
    assert len(device.be2.bct) == 2
    with pytest.raises(NoSuchBuffer):
        run(device, "0 bpt set 9 rx false")
    with pytest.raises(ParseError):
        run(device, "0 bpt set 1 rx maybe")
    with pytest.raises(ParseError):
        run(device, "0 bpt map 0 1")


def test_mgt_and_sched_verbs(device):
    run(device, "0 mgt set 9 0,3")
    assert device.bre.mgt[9] == frozenset({0, 3})
    run(device, "0 mgt del 9")
    with pytest.raises(NoSuchGroup):
        run(device, "0 mgt del 9")
    with pytest.raises(ParseError):
        run(device, "0 mgt frob 9 1")
    assert 9 not in device.bre.mgt
    run(device, "0 sched set capacity 16")
    assert device.sched.params.capacity == 16
    with pytest.raises(UnknownParam):
        run(device, "0 sched set flow_field vlan_tag")


def test_deparse_and_parse_verbs(device):
    run(device, "0 deparse set egress eth_dst const=0x8100/16 proto_type!")
    nodes = device.dpp.deparse_egress.nodes
    assert [n.is_constant for n in nodes] == [False, True, False]
    assert nodes[2].emit_if_valid is False
    with pytest.raises(ParseError):
        run(device, "0 deparse set egress const=0x8100")

    run(device, "0 parse mod ingress p_proto * accept")
    run(device, "0 parse add ingress p_proto 0x11 accept")
    table = device.dpp.parse_ingress.nodes["p_proto"].table
    assert [t.value for t in table] == [None, 0x11]


def test_state_verbs(canonical_raw, build):
    canonical_raw["state_decls"].update(
        registers=[{"name": "r", "size": 2}],
        meters=[{"name": "m", "size": 1, "cir": 100, "cbs": 10, "pir": 200, "pbs": 20}])
    device = Device(build(canonical_raw))
    assert run(device, "0 read counter ipv4_counter") == 0
    assert run(device, "0 write register r 1 0x2a") == "ack"
    assert run(device, "0 read register r 1") == 42
    assert run(device, "0 reset register r") == "ack"
    assert run(device, "0 read register r 1") == 0
    assert run(device, "0 write meter m 0 1 2 3 4") == "ack"
    assert run(device, "0 read meter m 0")["peak_tokens"] == 4
    with pytest.raises(ParseError):
        run(device, "0 read register r")
    with pytest.raises(ParseError):
        run(device, "0 write meter m 0 5 2 3 4")


def test_read_sds(device):
    snapshot = run(device, "0 read sds")
    assert snapshot == {"occupancy": {"0": 0, "1": 0, "2": 0, "3": 0},
                        "algorithm": "fifo", "capacity": 1024}


def test_notifications(device):
    device.notifications.append(Notification(7, "buffer_full", {"engine": "be2", "buffer_id": 3}))
    pending = poll_notifications(device)
    assert [format_notification(n) for n in pending] == ["7 buffer_full buffer_id=3 engine=be2"]
    assert poll_notifications(device) == []


def test_describe_error():
    cmd = parse_command("4 mgt del 1", 6)
    assert control_plane.describe_error(cmd, NoSuchGroup("no manycast group 1")) == \
        "NoSuchGroup: line 6: no manycast group 1"


def meter_device(canonical_raw, build):
    canonical_raw["state_decls"]["meters"] = [
        {"name": "m", "size": 2, "cir": 100, "cbs": 10, "pir": 200, "pbs": 20}]
    return Device(build(canonical_raw))


def test_reset_meter_refills_every_cell(canonical_raw, build):
    device = meter_device(canonical_raw, build)
    for cell in device.dpp.store.meters["m"]:
        assert cell.execute(10, 0) is Color.GREEN
    assert run(device, "0 read meter m 1") == {
        "color": "green", "committed_tokens": 0, "peak_tokens": 10}
    assert run(device, "0 reset meter m") == "ack"
    for index in (0, 1):
        assert run(device, f"0 read meter m {index}") == {
            "color": None, "committed_tokens": 10, "peak_tokens": 20}
    with pytest.raises(IndexOutOfRange):
        device.dpp.store.cp_state_access("read", "meter", "m")


def test_reset_meter_inside_a_run(canonical_raw, build, packet):
    canonical_raw["state_decls"]["meters"] = [{"name": "m", "size": 2}]
    trace = [TraceRecord(5, 0, packet(proto=0x11))]
    outputs, stats = run_trace(build(canonical_raw), trace, parse_script("0 reset meter m"))
    assert stats.cp_errors == []
    assert [(o.time_ns, o.port) for o in outputs] == [(5, 1)]


def test_table_actions_are_checked_at_run_time(device):
    with pytest.raises(UnresolvedReference):
        run(device, "0 table mod mat_proto exact 4 counter_inc no_such_counter")
    with pytest.raises(UnresolvedReference):
        run(device, "0 table add mat_proto exact 9 set_field ttl 1")
    with pytest.raises(UnresolvedReference):
        run(device, "0 table default mat_fwd register_write r 0 1")
    with pytest.raises(EgressPortWriteInEgressStage):
        run(device, "0 table default mat_egress set_egress_port 2")
    node = device.dpp.mau_ingress.nodes["mat_proto"]
    assert str(node.table.lookup(4).actions[0]) == "counter_inc ipv4_counter"


def test_rejected_table_entry_is_a_cp_error(canonical, packet):
    script = parse_script("0 table mod mat_proto exact 4 counter_inc no_such_counter")
    outputs, stats = run_trace(canonical, [TraceRecord(1, 0, packet(proto=4))], script)
    assert len(stats.cp_errors) == 1
    assert stats.cp_errors[0].startswith("0 UnresolvedReference: line 1:")
    assert stats.counters["ipv4_counter"] == 1
    assert stats.drops_by_reason == {}
    assert [(o.time_ns, o.port) for o in outputs] == [(1, 1)]
