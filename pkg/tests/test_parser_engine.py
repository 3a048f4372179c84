import pytest

from parser_engine import (
    ACCEPT,
    DepthExceeded,
    NoSuchNode,
    NoTransition,
    ParseGraph,
    ParseNode,
    ParseTransition,
    ParseUnderflow,
    WidthMismatch,
    cp_update_parse_table,
    run_parser,
    validate_graph,
)
from phv import BitBuffer, DuplicateEntry, FieldCatalog, HeaderFieldDef, NoSuchEntry, TableOp, VARIABLE, make_phv


def linear_graph():
    return ParseGraph({
        "p_dst": ParseNode("p_dst", "eth_dst", [ParseTransition(None, "p_src")]),
        "p_src": ParseNode("p_src", "eth_src", [ParseTransition(None, "p_vlan")]),
        "p_vlan": ParseNode("p_vlan", "vlan_tag", [ParseTransition(None, "p_proto")]),
        "p_proto": ParseNode("p_proto", "proto_type", [
            ParseTransition(4, ACCEPT),
            ParseTransition(6, ACCEPT),
        ]),
    }, start="p_dst")


def test_parses_canonical_layout(phv_for, packet):
    out = run_parser(phv_for(packet(vlan=0x004525, proto=6)), linear_graph())
    assert out.read("eth_dst") == 0xFFFFFFFFFFFF
    assert out.read("eth_src") == 0x001122334455
    assert out.read("vlan_tag") == 0x004525
    assert out.read("proto_type") == 6
    assert out.read("payload_offset") == 128


def test_parser_does_not_touch_input(phv_for, packet):
    phv = phv_for(packet())
    run_parser(phv, linear_graph())
    assert not phv.is_valid("eth_dst")


def test_empty_graph_parses_nothing(phv_for, packet):
    out = run_parser(phv_for(packet()), ParseGraph({}))
    assert out.read("payload_offset") == 0
    assert not any(out.validity.values())


def test_underflow(phv_for):
    with pytest.raises(ParseUnderflow) as exc:
        run_parser(phv_for(b"\x00" * 10), linear_graph())
    assert exc.value.drop_reason == "parse_underflow"


def test_no_transition(phv_for, packet):
    with pytest.raises(NoTransition):
        run_parser(phv_for(packet(proto=0x11)), linear_graph())


def test_depth_exceeded(phv_for, packet):
    looping = ParseGraph({"again": ParseNode("again", "proto_type", [ParseTransition(None, "again")])},
                         start="again", max_parse_depth=3)
    with pytest.raises(DepthExceeded):
        run_parser(phv_for(packet()), looping)


def test_variable_length_field():
    catalog = FieldCatalog([
        HeaderFieldDef("opt_len", 0, 8),
        HeaderFieldDef("options", 8, VARIABLE, length_from="opt_len"),
        HeaderFieldDef("tail", 0, 8),
    ])
    graph = ParseGraph({
        "len": ParseNode("len", "opt_len", [ParseTransition(None, "opts")]),
        "opts": ParseNode("opts", "options", [ParseTransition(None, "tail")]),
        "tail": ParseNode("tail", "tail", [ParseTransition(None, ACCEPT)]),
    }, start="len")
    phv = make_phv(BitBuffer.from_hex("02abcd7f99"), 0, 0, 0, catalog)
    out = run_parser(phv, graph)
    assert out.read("options") == 0xABCD
    assert out.width("options") == 16
    assert out.read("tail") == 0x7F
    assert out.read("payload_offset") == 32


def test_validate_accepts_canonical(catalog):
    assert validate_graph(linear_graph(), catalog) == []


def test_validate_reports_problems(catalog):
    graph = ParseGraph({
        "a": ParseNode("a", "eth_dst", [ParseTransition(None, "nowhere")]),
        "b": ParseNode("b", "ttl", []),
        "c": ParseNode("c", "proto_type", [ParseTransition(0x1FF, ACCEPT)]),
    }, start="a")
    codes = {d.code for d in validate_graph(graph, catalog)}
    assert {"UnknownNode", "UnknownField", "WidthMismatch", "UnreachableAccept"} <= codes


def test_validate_reports_position_mismatch(catalog):
    graph = ParseGraph({
        "v": ParseNode("v", "vlan_tag", [ParseTransition(None, ACCEPT)]),
    }, start="v")
    codes = [d.code for d in validate_graph(graph, catalog)]
    assert codes == ["PositionMismatch"]


def test_validate_unknown_start(catalog):
    codes = [d.code for d in validate_graph(ParseGraph({}, start="missing"), catalog)]
    assert codes == ["UnknownNode"]


def test_cp_update_parse_table(catalog, phv_for, packet):
    graph = linear_graph()
    cp_update_parse_table(graph, "p_proto", ParseTransition(0x11, ACCEPT), TableOp.ADD, catalog)
    assert run_parser(phv_for(packet(proto=0x11)), graph).read("proto_type") == 0x11

    with pytest.raises(DuplicateEntry):
        cp_update_parse_table(graph, "p_proto", ParseTransition(0x11, ACCEPT), TableOp.ADD, catalog)

    cp_update_parse_table(graph, "p_proto", ParseTransition(0x11, ""), TableOp.DELETE, catalog)
    with pytest.raises(NoTransition):
        run_parser(phv_for(packet(proto=0x11)), graph)
    with pytest.raises(NoSuchEntry):
        cp_update_parse_table(graph, "p_proto", ParseTransition(0x11, ""), TableOp.DELETE, catalog)


def test_cp_update_parse_table_errors(catalog):
    graph = linear_graph()
    with pytest.raises(NoSuchNode):
        cp_update_parse_table(graph, "nope", ParseTransition(1, ACCEPT), TableOp.ADD, catalog)
    with pytest.raises(NoSuchNode):
        cp_update_parse_table(graph, "p_proto", ParseTransition(1, "nope"), TableOp.ADD, catalog)
    with pytest.raises(WidthMismatch):
        cp_update_parse_table(graph, "p_proto", ParseTransition(0x100, ACCEPT), TableOp.ADD, catalog)
