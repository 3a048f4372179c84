"""Deparser: serializes a PHV back into its data buffer."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

from config import config
from phv import AVSError, BitBuffer, Diagnostic, FieldCatalog, InvalidFieldRead, PHV, UnknownField

logger = logging.getLogger(__name__)


class DeparseTooLong(AVSError):
    """Raised when the emitted packet exceeds the maximum packet length."""

    drop_reason = "deparse_too_long"


@dataclass(frozen=True)
class DeparseNode:
    """A header field to emit, or a constant bit string emitted verbatim."""

    node_id: str
    source: Union[str, BitBuffer]
    emit_if_valid: bool = True

    @property
    def is_constant(self) -> bool:
        return isinstance(self.source, BitBuffer)


@dataclass
class DeparseGraph:
    """Linear emission order. An empty graph emits the payload only."""

    nodes: List[DeparseNode] = field(default_factory=list)


def run_deparser(phv: PHV, graph: DeparseGraph,
                 max_packet_length_bits: Optional[int] = None) -> PHV:
    """Rebuild ``data_buffer`` as emitted fields followed by the payload.

    Valid fields are emitted in graph order (repeats allowed), invalid ones are
    skipped unless the node has ``emit_if_valid`` off, in which case the read
    fails. The payload is everything from ``payload_offset`` onwards.

    Raises:
        InvalidFieldRead: A node that must always emit refers to an invalid field.
        DeparseTooLong: Output longer than the maximum packet length.
    """
    out = phv.clone()
    parts = []
    for node in graph.nodes:
        if node.is_constant:
            parts.append(node.source)
        elif out.is_valid(node.source):
            parts.append(BitBuffer(out.read(node.source), out.width(node.source)))
        elif not node.emit_if_valid:
            raise InvalidFieldRead(f"deparse node '{node.node_id}' emits invalid '{node.source}'")
    headers = BitBuffer.concat(parts)
    offset = min(out.metadata.get("payload_offset", 0), out.data_buffer.length)
    emitted = BitBuffer.concat([headers, out.data_buffer.tail(offset)])
    limit = max_packet_length_bits or config.MAX_PACKET_LENGTH_BITS
    if emitted.length > limit:
        raise DeparseTooLong(f"deparsed packet is {emitted.length} bits, limit {limit}")
    out.data_buffer = emitted
    out.metadata["payload_offset"] = headers.length
    return out


def validate_deparse(graph: DeparseGraph, catalog: FieldCatalog, where: str) -> List[Diagnostic]:
    found = []
    seen = set()
    for node in graph.nodes:
        if node.node_id in seen:
            found.append(Diagnostic("DuplicateNode", f"deparse node '{node.node_id}' listed twice", where))
        seen.add(node.node_id)
        if not node.is_constant and not catalog.is_header(node.source):
            found.append(Diagnostic(
                "UnknownField", f"deparse node '{node.node_id}' emits unknown header field '{node.source}'", where))
    return found


def cp_set_deparse(graph: DeparseGraph, nodes: Sequence[DeparseNode],
                   catalog: FieldCatalog) -> DeparseGraph:
    """Replace the whole emission list atomically.

    Raises:
        UnknownField: A node emits a field absent from the header definition.
    """
    problems = validate_deparse(DeparseGraph(list(nodes)), catalog, "deparse")
    if problems:
        raise UnknownField("; ".join(str(p) for p in problems))
    graph.nodes = list(nodes)
    logger.info("deparse graph replaced with %d nodes", len(graph.nodes))
    return graph
