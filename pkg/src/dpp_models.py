"""Pydantic models for data-plane program files and run statistics."""

from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HeaderFieldModel(_Strict):
    """A header field in the header definition."""

    id: str = Field(..., min_length=1, description="Unique field id")
    start_bit: int = Field(..., ge=0, description="Nominal offset from the start of the packet")
    length_bits: Union[int, Literal["variable"]] = Field(
        ...,
        description="Width in bits, or 'variable' to take it from length_from",
        examples=[48, "variable"],
    )
    length_from: Optional[str] = Field(
        None, description="Previously parsed field holding the length of a variable field"
    )
    length_scale: int = Field(8, ge=1, description="Bits per unit of the length_from value")


class MetadataFieldModel(_Strict):
    """A program-defined metadata field."""

    id: str = Field(..., min_length=1, description="Unique field id")
    type: Literal["unsigned-int", "timestamp-ns", "port-id", "enum"] = Field(
        "unsigned-int", description="Semantic type"
    )
    width: Optional[int] = Field(None, ge=1, description="Width in bits for unsigned-int fields")
    variants: List[str] = Field(default_factory=list, description="Names of enum variants")


class ParseTransitionModel(_Strict):
    value: Optional[Union[int, str]] = Field(
        ..., description="Field value to match, or '*' / null for the wildcard", examples=["0x11", "*"]
    )
    next: str = Field(..., description="Next node id, or 'accept'")


class ParseNodeModel(_Strict):
    id: str = Field(..., min_length=1, description="Node id")
    field: str = Field(..., description="Header field extracted at this node")
    transitions: List[ParseTransitionModel] = Field(default_factory=list)


class ParseGraphModel(_Strict):
    """Parse graph: nodes extract fields and branch on their values."""

    start: str = Field("accept", description="Start node id; 'accept' parses nothing")
    nodes: List[ParseNodeModel] = Field(default_factory=list)
    max_parse_depth: Optional[int] = Field(None, ge=1, description="Maximum nodes on one parse path")


class BufferParamsModel(_Strict):
    """One buffer parameter table row."""

    buffer_id: int = Field(..., ge=0)
    size: int = Field(..., gt=0, description="Capacity in PHVs")
    rx: bool = Field(True, description="Receiver gate open")
    tx: bool = Field(True, description="Sender gate open")


class BufferRuleModel(_Strict):
    """One buffer configuration table rule."""

    field: str = Field(..., description="PHV field compared by the rule")
    value: Union[int, str] = Field(..., description="Value the field must equal", examples=["0x001525"])
    buffer_id: int = Field(..., ge=0)
    priority: int = Field(0, description="Higher wins when several rules match")


class PortBufferModel(_Strict):
    """Post-port buffer engine: buffers chosen by ingress port."""

    bpt: List[BufferParamsModel] = Field(default_factory=list)
    port_map: Dict[str, int] = Field(default_factory=dict, description="Ingress port to buffer id")


class ActionModel(_Strict):
    primitive: str = Field(..., description="Action primitive name", examples=["counter_inc"])
    args: List[Union[int, str, List[Union[int, str]]]] = Field(default_factory=list)


class MatEntryModel(_Strict):
    key: Union[int, str] = Field(
        ...,
        description="exact: '17'; lpm: '10.0.0.0/8'; ternary: 'v&&&m'; range: 'lo..hi'",
        examples=["4", "0x0800&&&0xff00"],
    )
    priority: int = Field(0, description="Tie order for ternary and range entries")
    actions: List[ActionModel] = Field(default_factory=list)


class MatNodeModel(_Strict):
    """A match-action table node of the MAU graph."""

    id: str = Field(..., min_length=1)
    field: str = Field(..., description="Field matched by the table")
    kind: Literal["exact", "lpm", "ternary", "range"] = Field("exact")
    entries: List[MatEntryModel] = Field(default_factory=list)
    default_actions: List[ActionModel] = Field(default_factory=list, description="Actions on a miss")
    next_hit: Optional[str] = Field(None, description="Node after a hit; null ends the graph")
    next_miss: Optional[str] = Field(None, description="Node after a miss; null ends the graph")
    miss_threshold: Optional[int] = Field(None, ge=1, description="Miss count that triggers a notification")


class MauModel(_Strict):
    start: Optional[str] = Field(None, description="First node; null is the empty graph")
    nodes: List[MatNodeModel] = Field(default_factory=list)


class DeparseNodeModel(_Strict):
    id: str = Field(..., min_length=1)
    field: Optional[str] = Field(None, description="Header field to emit")
    const: Optional[Union[int, str]] = Field(None, description="Constant value to emit")
    bits: Optional[int] = Field(None, ge=1, description="Width of the constant")
    emit_if_valid: bool = Field(True, description="Skip the field when invalid instead of failing")

    @model_validator(mode="after")
    def _one_source(self):
        if (self.field is None) == (self.const is None):
            raise ValueError("deparse node needs exactly one of 'field' or 'const'")
        if self.const is not None and self.bits is None:
            raise ValueError("constant deparse node needs 'bits'")
        return self


class MgtEntryModel(_Strict):
    group_id: int = Field(..., ge=0)
    ports: List[int] = Field(..., min_length=1)


class SchedulerModel(_Strict):
    algorithm: Literal["fifo", "strict_priority", "wfq"] = Field("fifo")
    capacity: Optional[int] = Field(None, gt=0, description="PHVs per port")
    port_rate_bps: Optional[int] = Field(None, gt=0, description="Departure pacing rate")
    flow_field: Optional[str] = Field(None, description="wfq: field identifying the flow")
    weights: Dict[str, int] = Field(default_factory=dict, description="wfq: flow value to weight")
    default_weight: int = Field(1, gt=0)
    priority_field: Optional[str] = Field(None, description="strict_priority: field holding the priority")


class PipelineModel(_Strict):
    ports: List[int] = Field(default_factory=lambda: [0, 1, 2, 3], min_length=1)
    enable_be1: bool = Field(False, description="Post-port buffer engine")
    enable_be2: bool = Field(True, description="Post-parser buffer engine")
    enable_egress_block: bool = Field(True, description="Egress parser, MAU and deparser")
    costs: Dict[str, int] = Field(default_factory=dict, description="Processing cost in ns per component")
    max_packet_length_bits: Optional[int] = Field(None, gt=0)
    bre_buffer_size: Optional[int] = Field(None, gt=0)


class RegisterDeclModel(_Strict):
    name: str
    size: int = Field(..., gt=0)
    width: int = Field(32, ge=1)


class MeterDeclModel(_Strict):
    name: str
    size: int = Field(..., gt=0)
    cir: int = Field(0, ge=0, description="Committed rate, bytes/s")
    cbs: int = Field(0, ge=0, description="Committed burst, bytes")
    pir: int = Field(0, ge=0, description="Peak rate, bytes/s")
    pbs: int = Field(0, ge=0, description="Peak burst, bytes")


class StateDeclsModel(_Strict):
    counters: List[str] = Field(default_factory=list)
    registers: List[RegisterDeclModel] = Field(default_factory=list)
    meters: List[MeterDeclModel] = Field(default_factory=list)


class DppModel(_Strict):
    """A data-plane program file."""

    name: str = Field("unnamed", description="Program name")
    header_definition: List[HeaderFieldModel] = Field(default_factory=list)
    metadata_extension: List[MetadataFieldModel] = Field(default_factory=list)
    parse_graph_ingress: ParseGraphModel = Field(default_factory=ParseGraphModel)
    parse_graph_egress: ParseGraphModel = Field(default_factory=ParseGraphModel)
    be1: PortBufferModel = Field(default_factory=PortBufferModel)
    bpt_initial: List[BufferParamsModel] = Field(default_factory=list, description="Post-parser buffers")
    bct: List[BufferRuleModel] = Field(default_factory=list, description="Post-parser buffer rules")
    mau_ingress: MauModel = Field(default_factory=MauModel)
    mau_egress: MauModel = Field(default_factory=MauModel)
    deparse_ingress: List[DeparseNodeModel] = Field(default_factory=list)
    deparse_egress: List[DeparseNodeModel] = Field(default_factory=list)
    mgt_initial: List[MgtEntryModel] = Field(default_factory=list)
    scheduler: SchedulerModel = Field(default_factory=SchedulerModel)
    pipeline: PipelineModel = Field(default_factory=PipelineModel)
    state_decls: StateDeclsModel = Field(default_factory=StateDeclsModel)


class DelayStats(BaseModel):
    """Delay aggregate in nanoseconds with a power-of-two histogram."""

    count: int = Field(0, ge=0)
    sum: int = Field(0, ge=0)
    min: Optional[int] = Field(None, ge=0)
    max: Optional[int] = Field(None, ge=0)
    histogram: Dict[str, int] = Field(default_factory=dict, description="Bucket 'lo-hi' to count")

    def add(self, value: int):
        self.count += 1
        self.sum += value
        self.min = value if self.min is None else min(self.min, value)
        self.max = value if self.max is None else max(self.max, value)
        bucket = histogram_bucket(value)
        self.histogram[bucket] = self.histogram.get(bucket, 0) + 1


def histogram_bucket(value: int) -> str:
    if value <= 0:
        return "0"
    k = value.bit_length()
    return f"{1 << (k - 1)}-{(1 << k) - 1}"


class NotificationModel(BaseModel):
    at: int = Field(..., description="Simulated time in ns")
    kind: str = Field(..., examples=["buffer_full", "table_miss_threshold"])
    payload: Dict[str, Any] = Field(default_factory=dict)


class CpReadModel(BaseModel):
    at: int
    command: str
    value: Any = None


class RunStats(BaseModel):
    """Statistics of one trace replay."""

    program: str = Field("unnamed")
    arrivals: int = Field(0, ge=0)
    emissions: int = Field(0, ge=0)
    replicas_created: int = Field(0, ge=0, description="Extra copies made by manycast")
    drops_by_reason: Dict[str, int] = Field(default_factory=dict)
    residual: Dict[str, int] = Field(default_factory=dict, description="PHVs still buffered at the end")
    counters: Dict[str, int] = Field(default_factory=dict)
    table_hits: Dict[str, int] = Field(default_factory=dict)
    table_misses: Dict[str, int] = Field(default_factory=dict)
    component_delays: Dict[str, DelayStats] = Field(default_factory=dict)
    network_delay: Dict[str, DelayStats] = Field(default_factory=dict)
    buffer_occupancy: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    sched_occupancy: Dict[str, int] = Field(default_factory=dict)
    notifications: List[NotificationModel] = Field(default_factory=list)
    cp_errors: List[str] = Field(default_factory=list)
    cp_reads: List[CpReadModel] = Field(default_factory=list)

    @property
    def total_drops(self) -> int:
        return sum(self.drops_by_reason.values())

    @property
    def conserved(self) -> bool:
        return (self.arrivals + self.replicas_created
                == self.emissions + self.total_drops + sum(self.residual.values()))
