"""Graph-driven header parser used for both the ingress and egress parsers."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

from config import config
from phv import (
    AVSError,
    Diagnostic,
    DuplicateEntry,
    FieldCatalog,
    NoSuchEntry,
    PHV,
    TableOp,
    slice_bits,
)

logger = logging.getLogger(__name__)

ACCEPT = "accept"


class ParseError(AVSError):
    """Base exception for packets the parser cannot handle."""


class ParseUnderflow(ParseError):
    """Raised when the packet is shorter than a field on the parse path."""

    drop_reason = "parse_underflow"


class NoTransition(ParseError):
    """Raised when a field value matches no parse-table entry."""

    drop_reason = "parse_no_transition"


class DepthExceeded(ParseError):
    """Raised when the parse path is longer than max_parse_depth."""

    drop_reason = "parse_depth_exceeded"


class NoSuchNode(AVSError):
    """Raised when a node id is not part of the graph."""


class WidthMismatch(AVSError):
    """Raised when an entry value does not fit the field width."""


@dataclass
class ParseTransition:
    """Parse-table row: field value (None = wildcard) and the next node."""

    value: Optional[int]
    next_node: str

    @property
    def is_wildcard(self) -> bool:
        return self.value is None


@dataclass
class ParseNode:
    node_id: str
    field: str
    table: List[ParseTransition] = field(default_factory=list)

    def next_for(self, value: int) -> Optional[str]:
        wildcard = None
        for entry in self.table:
            if entry.is_wildcard:
                wildcard = entry.next_node
            elif entry.value == value:
                return entry.next_node
        return wildcard


@dataclass
class ParseGraph:
    """Parse graph. ACCEPT is an implicit terminal and needs no node."""

    nodes: Dict[str, ParseNode]
    start: str = ACCEPT
    max_parse_depth: int = field(default_factory=lambda: config.MAX_PARSE_DEPTH)

    def has_node(self, node_id: str) -> bool:
        return node_id == ACCEPT or node_id in self.nodes

    def successors(self, node_id: str) -> List[str]:
        if node_id == ACCEPT:
            return []
        return [entry.next_node for entry in self.nodes[node_id].table]


def _field_width(phv: PHV, field_id: str) -> int:
    fdef = phv.catalog.header[field_id]
    if not fdef.is_variable:
        return fdef.length_bits
    return phv.read(fdef.length_from) * fdef.length_scale


def run_parser(phv: PHV, graph: ParseGraph) -> PHV:
    """Parse ``phv.data_buffer`` along ``graph`` and return the populated PHV.

    All header fields are invalidated first; every field on the taken path is
    set and marked valid, and ``payload_offset`` records where parsing stopped.

    Raises:
        ParseUnderflow: Packet shorter than a field on the path.
        NoTransition: Field value matches no entry and there is no wildcard.
        DepthExceeded: More than ``max_parse_depth`` nodes visited.
    """
    out = phv.clone()
    for field_id in out.catalog.header:
        out.validity[field_id] = False
    buf = out.data_buffer
    cursor = 0
    depth = 0
    node_id = graph.start
    while node_id != ACCEPT:
        depth += 1
        if depth > graph.max_parse_depth:
            raise DepthExceeded(
                f"parse path exceeds {graph.max_parse_depth} nodes")
        node = graph.nodes.get(node_id)
        if node is None:
            raise NoSuchNode(f"parse node '{node_id}' does not exist")
        width = _field_width(out, node.field)
        if cursor + width > buf.length:
            raise ParseUnderflow(
                f"'{node.field}' needs bits [{cursor}, {cursor + width}) "
                f"but packet has {buf.length}")
        value = slice_bits(buf, cursor, width) if width else 0
        out.set_header(node.field, value, width)
        cursor += width
        next_node = node.next_for(value)
        if next_node is None:
            raise NoTransition(
                f"no transition from '{node_id}' for {node.field}={value:#x}")
        node_id = next_node
    out.metadata["payload_offset"] = cursor
    return out


def validate_graph(graph: ParseGraph, catalog: FieldCatalog,
                   max_packet_length_bits: Optional[int] = None) -> List[Diagnostic]:
    """Check a parse graph against the header definition.

    Returns an empty list iff the graph is well formed.
    """
    where = "parse_graph"
    found: List[Diagnostic] = []
    limit = max_packet_length_bits or config.MAX_PACKET_LENGTH_BITS

    if not graph.has_node(graph.start):
        found.append(Diagnostic(
            "UnknownNode", f"start node '{graph.start}' does not exist", where))
        return found

    for node_id, node in graph.nodes.items():
        if node_id == ACCEPT:
            found.append(Diagnostic(
                "MalformedNode", "ACCEPT is a reserved terminal", where))
            continue
        if node.field not in catalog.header:
            found.append(Diagnostic(
                "UnknownField", f"node '{node_id}' extracts unknown header field '{node.field}'", where))
            continue
        width = catalog.static_width(node.field)
        seen_values: Set[Optional[int]] = set()
        for entry in node.table:
            if entry.value in seen_values:
                label = "*" if entry.is_wildcard else f"{entry.value:#x}"
                found.append(Diagnostic(
                    "DuplicateEntry", f"node '{node_id}' lists {label} twice", where))
            seen_values.add(entry.value)
            if not graph.has_node(entry.next_node):
                found.append(Diagnostic(
                    "UnknownNode", f"node '{node_id}' points to unknown node '{entry.next_node}'", where))
            if width is not None and entry.value is not None and entry.value >> width:
                found.append(Diagnostic(
                    "WidthMismatch", f"value {entry.value:#x} does not fit {width}-bit '{node.field}'", where))

    # Nodes that can reach ACCEPT, by reverse traversal.
    reverse: Dict[str, Set[str]] = {}
    for node_id in graph.nodes:
        for succ in graph.successors(node_id):
            reverse.setdefault(succ, set()).add(node_id)
    can_accept = {ACCEPT}
    frontier = [ACCEPT]
    while frontier:
        current = frontier.pop()
        for pred in reverse.get(current, ()):
            if pred not in can_accept:
                can_accept.add(pred)
                frontier.append(pred)

    reachable = {graph.start}
    frontier = [graph.start]
    while frontier:
        current = frontier.pop()
        for succ in graph.successors(current):
            if graph.has_node(succ) and succ not in reachable:
                reachable.add(succ)
                frontier.append(succ)

    for node_id in sorted(reachable - can_accept):
        found.append(Diagnostic(
            "UnreachableAccept", f"ACCEPT is unreachable from node '{node_id}'", where))

    found.extend(_check_paths(graph, catalog, limit))
    return found


def _check_paths(graph: ParseGraph, catalog: FieldCatalog, limit: int) -> List[Diagnostic]:
    """Walk every acyclic path checking field offsets, total length and depth."""
    where = "parse_graph"
    found: List[Diagnostic] = []
    reported: Set[tuple] = set()

    def report(diag: Diagnostic):
        key = (diag.code, diag.message)
        if key not in reported:
            reported.add(key)
            found.append(diag)

    def walk(node_id: str, cursor: Optional[int], depth: int, on_path: Set[str]):
        if node_id == ACCEPT or node_id not in graph.nodes or node_id in on_path:
            return
        node = graph.nodes[node_id]
        if node.field not in catalog.header:
            return
        depth += 1
        if depth > graph.max_parse_depth:
            report(Diagnostic(
                "DepthExceeded", f"a path through '{node_id}' exceeds max_parse_depth "
                f"{graph.max_parse_depth}", where))
            return
        fdef = catalog.header[node.field]
        if cursor is not None and not fdef.is_variable:
            if fdef.start_bit < cursor:
                report(Diagnostic(
                    "OverlappingFields", f"'{fdef.id}' starts at bit {fdef.start_bit} "
                    f"but the path already extracted {cursor} bits", where))
            elif fdef.start_bit > cursor:
                report(Diagnostic(
                    "PositionMismatch", f"'{fdef.id}' starts at bit {fdef.start_bit} "
                    f"but the path reaches it at bit {cursor}", where))
            cursor += fdef.length_bits
            if cursor > limit:
                report(Diagnostic(
                    "PathTooLong", f"path through '{fdef.id}' extracts beyond {limit} bits", where))
                return
        else:
            cursor = None
        for succ in dict.fromkeys(graph.successors(node_id)):
            walk(succ, cursor, depth, on_path | {node_id})

    walk(graph.start, 0, 0, set())
    return found


def cp_update_parse_table(
    graph: ParseGraph,
    node_id: str,
    entry: ParseTransition,
    op: TableOp,
    catalog: Optional[FieldCatalog] = None,
) -> ParseGraph:
    """Add, modify or delete one parse-table entry between packets.

    Entries are keyed by value (None for the wildcard); ``modify`` retargets
    an existing entry.

    Raises:
        NoSuchNode: Unknown node or unknown next node.
        WidthMismatch: Value wider than the node's field.
        DuplicateEntry: Adding a value that is already present.
        NoSuchEntry: Modifying or deleting an absent value.
    """
    node = graph.nodes.get(node_id)
    if node is None:
        raise NoSuchNode(f"parse node '{node_id}' does not exist")
    if catalog is not None and entry.value is not None:
        width = catalog.static_width(node.field)
        if width is not None and entry.value >> width:
            raise WidthMismatch(
                f"value {entry.value:#x} does not fit {width}-bit '{node.field}'")
    if op != TableOp.DELETE and not graph.has_node(entry.next_node):
        raise NoSuchNode(f"next node '{entry.next_node}' does not exist")

    table = list(node.table)
    index = next((i for i, e in enumerate(table) if e.value == entry.value), None)
    if op == TableOp.ADD:
        if index is not None:
            raise DuplicateEntry(f"node '{node_id}' already has this entry")
        table.append(ParseTransition(entry.value, entry.next_node))
    elif index is None:
        raise NoSuchEntry(f"node '{node_id}' has no such entry")
    elif op == TableOp.MODIFY:
        table[index] = ParseTransition(entry.value, entry.next_node)
    else:
        del table[index]
    node.table = table
    logger.info("parse table %s %s on node %s", op.value,
                "*" if entry.is_wildcard else hex(entry.value), node_id)
    return graph
