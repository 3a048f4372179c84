"""Loading and validation of data-plane programs, plus the packet trace format.

A program file is JSON checked against ``DppModel``; ``load_dpp`` turns it
into a ``DppFile`` of runtime objects or raises with every problem found.
Traces are text lines ``<time_ns> <port> <hex bytes>``.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Tuple, Union

from pydantic import ValidationError

from buffer_engine import DEFAULT_BUFFER_ID, BufferParams, BufferRule
from config import config
from deparser_engine import DeparseGraph, DeparseNode, validate_deparse
from dpp_models import DppModel
from match_action import (
    ActionCall,
    MatchKind,
    MatNode,
    MauError,
    MauGraph,
    Stage,
    StatefulStore,
    parse_match,
    validate_mau,
)
from parser_engine import ParseGraph, ParseNode, ParseTransition, validate_graph
from phv import (
    VARIABLE,
    AVSError,
    BitBuffer,
    Diagnostic,
    FieldCatalog,
    HeaderFieldDef,
    MetadataFieldDef,
    MetaType,
    parse_value,
)
from scheduler import SchedParams

logger = logging.getLogger(__name__)

PORT_COMPONENTS = ("port_in", "port_e")
COMPONENT_NAMES = (
    "port_in", "be1", "pr_in", "be2", "mau_in", "dpr_in", "bre",
    "pr_e", "mau_e", "dpr_e", "sched", "port_e",
)


class DppValidationError(AVSError):
    """Raised when a program fails to load; carries every diagnostic."""

    def __init__(self, diagnostics: List[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__(f"{len(self.diagnostics)} problem(s) in program")


class MalformedLine(AVSError):
    """Raised for an unreadable trace line."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass
class PipelineConfig:
    """Which optional blocks are present, device ports and per-component costs."""

    ports: List[int] = field(default_factory=lambda: [0, 1, 2, 3])
    enable_be1: bool = False
    enable_be2: bool = True
    enable_egress_block: bool = True
    costs: Dict[str, int] = field(default_factory=dict)
    max_packet_length_bits: int = field(default_factory=lambda: config.MAX_PACKET_LENGTH_BITS)
    bre_buffer_size: int = field(default_factory=lambda: config.BRE_BUFFER_SIZE)

    @property
    def wiring(self) -> List[str]:
        """Component order a PHV follows through this device."""
        chain = ["port_in"]
        if self.enable_be1:
            chain.append("be1")
        chain.append("pr_in")
        if self.enable_be2:
            chain.append("be2")
        chain += ["mau_in", "dpr_in", "bre"]
        if self.enable_egress_block:
            chain += ["pr_e", "mau_e", "dpr_e"]
        chain += ["sched", "port_e"]
        return chain

    def cost(self, component: str) -> int:
        if component in PORT_COMPONENTS:
            return 0
        return self.costs.get(component, 0)


@dataclass
class DppFile:
    """A loaded program: runtime objects for every component."""

    name: str
    catalog: FieldCatalog
    parse_ingress: ParseGraph
    parse_egress: ParseGraph
    be1_bpt: List[BufferParams]
    be1_port_map: Dict[int, int]
    bpt: List[BufferParams]
    bct: List[BufferRule]
    mau_ingress: MauGraph
    mau_egress: MauGraph
    deparse_ingress: DeparseGraph
    deparse_egress: DeparseGraph
    mgt: Dict[int, FrozenSet[int]]
    sched: SchedParams
    pipeline: PipelineConfig
    store: StatefulStore


@dataclass(frozen=True)
class TraceRecord:
    time_ns: int
    port: int
    data: bytes

    @property
    def bits(self) -> BitBuffer:
        return BitBuffer.from_bytes(self.data)


def load_dpp(path: Union[str, Path]) -> DppFile:
    """Load and fully validate a program file.

    Raises:
        DppValidationError: With the complete list of diagnostics.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DppValidationError([Diagnostic(
            "SyntaxError", f"{exc.msg} at line {exc.lineno} column {exc.colno}", str(path))])
    dpp = parse_dpp(raw)
    logger.info("loaded program '%s' from %s", dpp.name, path)
    return dpp


def parse_dpp(raw: dict) -> DppFile:
    """Validate a decoded program document and build its runtime objects."""
    try:
        model = DppModel.model_validate(raw)
    except ValidationError as exc:
        raise DppValidationError([
            Diagnostic("SchemaError", err["msg"], ".".join(str(p) for p in err["loc"]))
            for err in exc.errors()
        ])
    dpp, found = build_dpp(model)
    found.extend(validate_dpp(dpp))
    if found:
        raise DppValidationError(found)
    return dpp


def build_dpp(model: DppModel) -> Tuple[DppFile, List[Diagnostic]]:
    """Convert a schema-valid model into runtime objects, collecting conversion errors."""
    found: List[Diagnostic] = []

    def value_of(raw, where: str) -> int:
        try:
            return parse_value(raw)
        except ValueError as exc:
            found.append(Diagnostic("MalformedValue", str(exc), where))
            return 0

    headers = [
        HeaderFieldDef(h.id, h.start_bit, VARIABLE if h.length_bits == "variable" else h.length_bits,
                       h.length_from, h.length_scale)
        for h in model.header_definition
    ]
    metadata = [
        MetadataFieldDef(m.id, MetaType(m.type), m.width, tuple(m.variants))
        for m in model.metadata_extension
    ]
    catalog = FieldCatalog(headers, metadata)

    pipe = model.pipeline
    pipeline = PipelineConfig(
        ports=sorted(set(pipe.ports)),
        enable_be1=pipe.enable_be1,
        enable_be2=pipe.enable_be2,
        enable_egress_block=pipe.enable_egress_block,
        costs=dict(pipe.costs),
        max_packet_length_bits=pipe.max_packet_length_bits or config.MAX_PACKET_LENGTH_BITS,
        bre_buffer_size=pipe.bre_buffer_size or config.BRE_BUFFER_SIZE,
    )

    def parse_graph(graph_model, where: str) -> ParseGraph:
        nodes = {}
        for node in graph_model.nodes:
            table = []
            for t in node.transitions:
                wildcard = t.value is None or t.value == "*"
                table.append(ParseTransition(
                    None if wildcard else value_of(t.value, f"{where}.{node.id}"), t.next))
            if node.id in nodes:
                found.append(Diagnostic("DuplicateNode", f"parse node '{node.id}' declared twice", where))
            nodes[node.id] = ParseNode(node.id, node.field, table)
        return ParseGraph(nodes, graph_model.start,
                          graph_model.max_parse_depth or config.MAX_PARSE_DEPTH)

    store = StatefulStore()
    for name in model.state_decls.counters:
        store.declare_counter(name)
    for reg in model.state_decls.registers:
        store.declare_register(reg.name, reg.size, reg.width)
    for meter in model.state_decls.meters:
        store.declare_meter(meter.name, meter.size, meter.cir, meter.cbs, meter.pir, meter.pbs)

    def actions(models, where: str) -> List[ActionCall]:
        built = []
        for action in models:
            try:
                built.append(ActionCall.build(action.primitive, action.args))
            except MauError as exc:
                found.append(Diagnostic(type(exc).__name__, str(exc), where))
        return built

    def mau(mau_model, where: str) -> MauGraph:
        graph = MauGraph(start=mau_model.start)
        for node in mau_model.nodes:
            at = f"{where}.{node.id}"
            if not catalog.knows(node.field):
                found.append(Diagnostic("UnresolvedReference", f"matches unknown field '{node.field}'", at))
                continue
            width = catalog.static_width(node.field)
            if width is None:
                found.append(Diagnostic("MalformedNode", f"cannot match variable-length '{node.field}'", at))
                continue
            kind = MatchKind(node.kind)
            entries = []
            for entry in node.entries:
                try:
                    entries.append(parse_match(kind, entry.key, width, entry.priority,
                                               actions(entry.actions, at)))
                except MauError as exc:
                    found.append(Diagnostic(type(exc).__name__, str(exc), at))
            if node.id in graph.nodes:
                found.append(Diagnostic("DuplicateNode", f"MAT node '{node.id}' declared twice", where))
            graph.nodes[node.id] = MatNode(
                node.id, node.field, kind, width, entries,
                actions(node.default_actions, at), node.next_hit, node.next_miss, node.miss_threshold)
        return graph

    def deparse(node_models) -> DeparseGraph:
        nodes = []
        for node in node_models:
            if node.field is not None:
                nodes.append(DeparseNode(node.id, node.field, node.emit_if_valid))
                continue
            value = value_of(node.const, f"deparse.{node.id}")
            if value >> node.bits:
                found.append(Diagnostic("WidthMismatch", f"constant does not fit {node.bits} bits",
                                        f"deparse.{node.id}"))
                value &= (1 << node.bits) - 1
            nodes.append(DeparseNode(node.id, BitBuffer(value, node.bits)))
        return DeparseGraph(nodes)

    sched_model = model.scheduler
    sched = SchedParams(
        algorithm=sched_model.algorithm,
        capacity=sched_model.capacity or config.SCHED_CAPACITY,
        port_rate_bps=sched_model.port_rate_bps,
        flow_field=sched_model.flow_field,
        weights={value_of(k, "scheduler.weights"): w for k, w in sched_model.weights.items()},
        default_weight=sched_model.default_weight,
        priority_field=sched_model.priority_field,
    )

    mgt: Dict[int, FrozenSet[int]] = {}
    for entry in model.mgt_initial:
        if entry.group_id in mgt:
            found.append(Diagnostic("DuplicateEntry", f"manycast group {entry.group_id} declared twice", "mgt"))
        mgt[entry.group_id] = frozenset(entry.ports)

    dpp = DppFile(
        name=model.name,
        catalog=catalog,
        parse_ingress=parse_graph(model.parse_graph_ingress, "parse_graph_ingress"),
        parse_egress=parse_graph(model.parse_graph_egress, "parse_graph_egress"),
        be1_bpt=[BufferParams(b.buffer_id, b.size, b.rx, b.tx) for b in model.be1.bpt],
        be1_port_map={int(k): v for k, v in model.be1.port_map.items()},
        bpt=[BufferParams(b.buffer_id, b.size, b.rx, b.tx) for b in model.bpt_initial],
        bct=[BufferRule(r.field, value_of(r.value, "bct"), r.buffer_id, r.priority) for r in model.bct],
        mau_ingress=mau(model.mau_ingress, "mau_ingress"),
        mau_egress=mau(model.mau_egress, "mau_egress"),
        deparse_ingress=deparse(model.deparse_ingress),
        deparse_egress=deparse(model.deparse_egress),
        mgt=mgt,
        sched=sched,
        pipeline=pipeline,
        store=store,
    )
    return dpp, found


def validate_dpp(dpp: DppFile) -> List[Diagnostic]:
    """Cross-reference and static checks over a built program."""
    catalog = dpp.catalog
    limit = dpp.pipeline.max_packet_length_bits
    found = list(catalog.diagnostics())
    found.extend(validate_graph(dpp.parse_ingress, catalog, limit))
    found.extend(validate_graph(dpp.parse_egress, catalog, limit))
    found.extend(validate_mau(dpp.mau_ingress, catalog, dpp.store, Stage.INGRESS))
    found.extend(validate_mau(dpp.mau_egress, catalog, dpp.store, Stage.EGRESS))
    for node_id in sorted(set(dpp.mau_ingress.nodes) & set(dpp.mau_egress.nodes)):
        found.append(Diagnostic("DuplicateNode", f"MAT node '{node_id}' exists in both stages", "mau"))
    found.extend(validate_deparse(dpp.deparse_ingress, catalog, "deparse_ingress"))
    found.extend(validate_deparse(dpp.deparse_egress, catalog, "deparse_egress"))
    found.extend(_validate_buffers(dpp))

    ports = set(dpp.pipeline.ports)
    for group_id, members in sorted(dpp.mgt.items()):
        unknown = sorted(members - ports)
        if unknown:
            found.append(Diagnostic("UnresolvedReference",
                                    f"group {group_id} names unknown ports {unknown}", "mgt"))

    sched = dpp.sched
    for key in ("flow_field", "priority_field"):
        field_id = getattr(sched, key)
        if field_id is not None and not catalog.knows(field_id):
            found.append(Diagnostic("UnresolvedReference", f"{key} '{field_id}' is not declared", "scheduler"))

    for component, cost in sorted(dpp.pipeline.costs.items()):
        if component not in COMPONENT_NAMES:
            found.append(Diagnostic("UnknownComponent", f"cost for unknown component '{component}'", "pipeline"))
        elif cost < 0 or (component in PORT_COMPONENTS and cost):
            found.append(Diagnostic("InvalidCost", f"{component} cost {cost} not allowed", "pipeline"))
    return found


def _validate_buffers(dpp: DppFile) -> List[Diagnostic]:
    found = []
    for where, bpt in (("be1", dpp.be1_bpt), ("bpt_initial", dpp.bpt)):
        seen = set()
        for params in bpt:
            if params.buffer_id in seen:
                found.append(Diagnostic("DuplicateEntry", f"buffer {params.buffer_id} declared twice", where))
            seen.add(params.buffer_id)

    be1_ids = {p.buffer_id for p in dpp.be1_bpt} | {DEFAULT_BUFFER_ID}
    for port, bid in sorted(dpp.be1_port_map.items()):
        if bid not in be1_ids:
            found.append(Diagnostic("UnresolvedReference", f"port {port} maps to unknown buffer {bid}", "be1"))
        if port not in dpp.pipeline.ports:
            found.append(Diagnostic("UnresolvedReference", f"port map names unknown port {port}", "be1"))

    be2_ids = {p.buffer_id for p in dpp.bpt} | {DEFAULT_BUFFER_ID}
    keys = set()
    for rule in dpp.bct:
        if rule.buffer_id not in be2_ids:
            found.append(Diagnostic("UnresolvedReference",
                                    f"BCT rule references unknown buffer {rule.buffer_id}", "bct"))
        if not dpp.catalog.knows(rule.field_id):
            found.append(Diagnostic("UnresolvedReference",
                                    f"BCT rule matches unknown field '{rule.field_id}'", "bct"))
        if rule.key in keys:
            found.append(Diagnostic("DuplicateEntry", f"BCT lists {rule.field_id}={rule.match_value:#x} twice", "bct"))
        keys.add(rule.key)
    return found


def parse_trace(lines: Iterable[str]) -> List[TraceRecord]:
    """Parse trace lines; blank lines and ``#`` comments are skipped.

    Raises:
        MalformedLine: Wrong field count, bad numbers, odd-length hex or
            time going backwards.
    """
    records: List[TraceRecord] = []
    last = 0
    for line_no, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) not in (2, 3):
            raise MalformedLine(line_no, f"expected '<time_ns> <port> <hex>', got {len(parts)} fields")
        try:
            time_ns, port = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedLine(line_no, "time and port must be integers") from None
        if time_ns < 0 or port < 0:
            raise MalformedLine(line_no, "time and port must be non-negative")
        hex_text = parts[2] if len(parts) == 3 else ""
        if len(hex_text) % 2:
            raise MalformedLine(line_no, "odd-length hex payload")
        try:
            data = bytes.fromhex(hex_text)
        except ValueError:
            raise MalformedLine(line_no, "payload is not hex") from None
        if time_ns < last:
            raise MalformedLine(line_no, f"time {time_ns} is before previous {last}")
        last = time_ns
        records.append(TraceRecord(time_ns, port, data))
    return records


def read_trace(path: Union[str, Path]) -> List[TraceRecord]:
    with open(path) as f:
        return parse_trace(f)


def format_trace(records: Iterable[TraceRecord]) -> str:
    return "".join(f"{r.time_ns} {r.port} {r.data.hex()}".rstrip() + "\n" for r in records)


def write_trace(path: Union[str, Path], records: Iterable[TraceRecord]):
    Path(path).write_text(format_trace(records))
