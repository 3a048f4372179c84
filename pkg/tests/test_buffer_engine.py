import pytest

from buffer_engine import (
    DEFAULT_BUFFER_ID,
    BufferParams,
    BufferRule,
    BufferSet,
    Dropped,
    InvalidSize,
    NoSuchBuffer,
    SelectBy,
    Stored,
    UnknownParam,
)
from phv import DuplicateEntry, NoSuchEntry, TableOp, UnresolvedReference


def sample_engine(notify=None):
    """The canonical BPT and BCT, with buffers 3 and 6 shrunk to four PHVs."""
    return BufferSet(
        [
            BufferParams(1, 2048, rx=True, tx=False),
            BufferParams(3, 4, rx=True, tx=True),
            BufferParams(5, 3072, rx=False, tx=True),
            BufferParams(6, 4, rx=True, tx=True),
        ],
        bct=[BufferRule("vlan_tag", 0x001525, 3, 1), BufferRule("vlan_tag", 0x004525, 6, 0)],
        notify=notify,
    )


def tagged(phv_for, packet, vlan, seq=0):
    phv = phv_for(packet(vlan=vlan), seq=seq)
    phv.write("vlan_tag", vlan)
    return phv


def test_default_buffer_is_added():
    engine = BufferSet([BufferParams(1, 8)])
    assert engine.buffer_ids == [DEFAULT_BUFFER_ID, 1]


def test_bct_selects_buffer(phv_for, packet):
    engine = sample_engine()
    assert engine.receive(tagged(phv_for, packet, 0x001525)) == Stored(3)
    assert engine.receive(tagged(phv_for, packet, 0x004525)) == Stored(6)
    assert engine.receive(tagged(phv_for, packet, 0x000001)) == Stored(DEFAULT_BUFFER_ID)


def test_highest_priority_rule_wins(phv_for, packet):
    engine = sample_engine()
    engine.cp_update_bct(BufferRule("proto_type", 4, 6, 5), TableOp.ADD)
    phv = tagged(phv_for, packet, 0x001525)
    phv.write("proto_type", 4)
    assert engine.receive(phv) == Stored(6)


def test_rules_on_invalid_fields_do_not_match(phv_for, packet):
    engine = sample_engine()
    assert engine.receive(phv_for(packet())) == Stored(DEFAULT_BUFFER_ID)


def test_tx_closed_holds_packets(phv_for, packet):
    engine = sample_engine()
    engine.cp_update_bct(BufferRule("vlan_tag", 0x000100, 1), TableOp.ADD)
    for seq in range(3):
        assert engine.receive(tagged(phv_for, packet, 0x000100, seq)) == Stored(1)
    assert not engine.has_eligible()
    assert engine.send() is None
    engine.cp_set_bpt(1, "tx", True)
    assert [engine.send().seq for _ in range(3)] == [0, 1, 2]


def test_rx_closed_drops(phv_for, packet):
    engine = sample_engine()
    engine.cp_update_bct(BufferRule("vlan_tag", 0x000500, 5), TableOp.ADD)
    assert engine.receive(tagged(phv_for, packet, 0x000500)) == Dropped("rx_closed", 5)
    assert engine.drops["rx_closed"] == 1
    assert engine.occupancy()[5] == 0


def test_full_buffer_drops_and_notifies_once(phv_for, packet):
    notes = []
    engine = sample_engine(notify=lambda kind, payload: notes.append((kind, payload)))
    for seq in range(4):
        assert isinstance(engine.receive(tagged(phv_for, packet, 0x001525, seq)), Stored)
    for seq in range(4, 7):
        assert engine.receive(tagged(phv_for, packet, 0x001525, seq)) == Dropped("buffer_full", 3)
    assert notes == [("buffer_full", {"engine": "be2", "buffer_id": 3})]

    engine.send()
    engine.receive(tagged(phv_for, packet, 0x001525, 8))
    engine.receive(tagged(phv_for, packet, 0x001525, 9))
    assert len(notes) == 2


def test_round_robin_between_buffers(phv_for, packet):
    engine = sample_engine()
    for seq, vlan in enumerate([0x001525, 0x001525, 0x004525, 0x004525]):
        engine.receive(tagged(phv_for, packet, vlan, seq))
    order = [engine.send().seq for _ in range(4)]
    assert order == [0, 2, 1, 3]


def test_shrinking_never_evicts(phv_for, packet):
    engine = sample_engine()
    for seq in range(3):
        engine.receive(tagged(phv_for, packet, 0x001525, seq))
    engine.cp_set_bpt(3, "size", 1)
    assert engine.occupancy()[3] == 3
    assert engine.receive(tagged(phv_for, packet, 0x001525, 9)) == Dropped("buffer_full", 3)


def test_cp_set_bpt_errors():
    engine = sample_engine()
    with pytest.raises(NoSuchBuffer):
        engine.cp_set_bpt(42, "size", 1)
    with pytest.raises(InvalidSize):
        engine.cp_set_bpt(1, "size", 0)
    with pytest.raises(UnknownParam):
        engine.cp_set_bpt(1, "colour", 1)


def test_cp_update_bct_errors():
    engine = sample_engine()
    with pytest.raises(UnresolvedReference):
        engine.cp_update_bct(BufferRule("vlan_tag", 1, 99), TableOp.ADD)
    with pytest.raises(DuplicateEntry):
        engine.cp_update_bct(BufferRule("vlan_tag", 0x001525, 6), TableOp.ADD)
    with pytest.raises(NoSuchEntry):
        engine.cp_update_bct(BufferRule("vlan_tag", 0x7, 6), TableOp.MODIFY)
    engine.cp_update_bct(BufferRule("vlan_tag", 0x001525, 6), TableOp.MODIFY)
    assert engine.bct[0].buffer_id == 6


def test_ingress_port_selection(phv_for, packet):
    engine = BufferSet([BufferParams(1, 4)], SelectBy.INGRESS_PORT, port_map={2: 1}, name="be1")
    assert engine.receive(phv_for(packet(), port=2)) == Stored(1)
    assert engine.receive(phv_for(packet(), port=0)) == Stored(DEFAULT_BUFFER_ID)
    engine.cp_map_port(0, 1)
    assert engine.receive(phv_for(packet(), port=0)) == Stored(1)
    with pytest.raises(NoSuchBuffer):
        engine.cp_map_port(0, 7)


def test_egress_port_selection(phv_for, packet):
    engine = BufferSet([BufferParams(0, 4), BufferParams(1, 4)], SelectBy.EGRESS_PORT, name="bre")
    phv = phv_for(packet())
    phv.write("egress_port", 1)
    assert engine.receive(phv) == Stored(1)
    phv.write("egress_port", 9)
    assert engine.receive(phv) == Dropped("no_such_port", None)
