"""The device pipeline and its discrete-event run loop.

Components are wired

    port_in -> [be1] -> pr_in -> [be2] -> mau_in -> dpr_in -> bre
            -> [pr_e -> mau_e -> dpr_e] -> sched -> port_e

``Device.step`` advances one PHV through one component per event and returns
the follow-up events; ``run_trace`` schedules those on a simpy environment.
Every PHV records entry and exit timestamps per component, from which the
per-packet network delay is decomposed.
"""

import copy
import enum
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import simpy

import control_plane
from buffer_engine import BufferSet, Dropped, SelectBy
from config import config
from control_plane import CpCommand, CpScript, Notification
from deparser_engine import run_deparser
from dpp_io import DppFile, DppValidationError, TraceRecord, validate_dpp
from dpp_models import CpReadModel, DelayStats, NotificationModel, RunStats
from match_action import Stage, run_mau
from parser_engine import run_parser
from phv import PHV, AVSError, PacketTooLong, make_phv
from replication import BreState, replicate
from scheduler import DroppedSelf, Evicted, Scheduler

logger = logging.getLogger(__name__)

QUEUING_COMPONENTS = ("be1", "be2")
PROCESSING_COMPONENTS = ("pr_in", "mau_in", "dpr_in", "bre", "pr_e", "mau_e", "dpr_e", "sched")

DelayRecord = Dict[str, Sequence[Optional[int]]]


class IncompleteRecord(AVSError):
    """Raised when a visited component lacks an entry or exit timestamp."""


class EventKind(str, enum.Enum):
    PACKET_ARRIVAL = "packet_arrival"
    COMPONENT = "component"
    BUFFER_DRAIN_TICK = "buffer_drain_tick"
    SCHEDULER_TICK = "scheduler_tick"
    CP_COMMAND = "cp_command"


@dataclass
class Event:
    at: int
    kind: EventKind
    phv: Optional[PHV] = None
    component: Optional[str] = None
    port: Optional[int] = None
    record: Optional[TraceRecord] = None
    command: Optional[CpCommand] = None


class Lifecycle(str, enum.Enum):
    """Packet lifecycle states; S-numbered ones are the complex states."""

    PORT_IN = "S1"
    BE1_RECEIVE = "S2"
    BE1_SEND = "S3"
    PR_IN = "S4"
    BE2_RECEIVE = "S5"
    BE2_SEND = "S6"
    MAU_IN = "S7"
    DPR_IN = "S8"
    BRE_REPLICATE = "S9"
    BRE_RECEIVE = "S10"
    SCHED_INSERT = "S11"
    BRE_SEND = "S12"
    PR_E = "S13"
    MAU_E = "S14"
    DPR_E = "S15"
    SCHED_REMOVE = "SCHED_REMOVE"
    PORT_E = "PORT_E"
    EMITTED = "EMITTED"
    DROPPED = "DROPPED"

    @property
    def label(self) -> str:
        if self.value.startswith("S") and self.value[1:].isdigit():
            return f"{self.value}:{self.name}"
        return self.value


SUB_MACHINES: Dict[str, Tuple[Lifecycle, ...]] = {
    "buffer_receiver": (Lifecycle.BE1_RECEIVE, Lifecycle.BE2_RECEIVE,
                        Lifecycle.BRE_RECEIVE, Lifecycle.SCHED_INSERT),
    "buffer_sender": (Lifecycle.BE1_SEND, Lifecycle.BE2_SEND, Lifecycle.BRE_SEND),
    "parser": (Lifecycle.PR_IN, Lifecycle.PR_E),
    "mau": (Lifecycle.MAU_IN, Lifecycle.MAU_E),
    "deparser": (Lifecycle.DPR_IN, Lifecycle.DPR_E),
}

ENTRY_STATE = {
    "port_in": Lifecycle.PORT_IN,
    "be1": Lifecycle.BE1_RECEIVE,
    "pr_in": Lifecycle.PR_IN,
    "be2": Lifecycle.BE2_RECEIVE,
    "mau_in": Lifecycle.MAU_IN,
    "dpr_in": Lifecycle.DPR_IN,
    "bre": Lifecycle.BRE_REPLICATE,
    "pr_e": Lifecycle.PR_E,
    "mau_e": Lifecycle.MAU_E,
    "dpr_e": Lifecycle.DPR_E,
    "sched": Lifecycle.SCHED_INSERT,
    "port_e": Lifecycle.PORT_E,
}
SEND_STATE = {"be1": Lifecycle.BE1_SEND, "be2": Lifecycle.BE2_SEND, "bre": Lifecycle.BRE_SEND}


def _identity(x, proc_logic=None, **conf):
    return x


@dataclass(frozen=True)
class ComponentFunction:
    """A component as a function ``f(x, proc_logic, conf) -> y``.

    ``ctp`` lists what a program fixes at load time, ``rtc`` what the control
    plane may change at run time.
    """

    title: str
    instances: Tuple[str, ...]
    input_space: str
    output_space: str
    proc_logic: str
    conf_param: str
    ctp: Tuple[str, ...]
    rtc: Tuple[str, ...]
    invoke: Callable = _identity


COMPONENTS: Tuple[ComponentFunction, ...] = (
    ComponentFunction(
        "ingress port", ("port_in",), "packet bits", "PHV", "PHV construction", "-",
        ("port set",), ()),
    ComponentFunction(
        "ingress buffer engine", ("be1", "be2"), "PHV", "PHV", "round-robin FIFO drain",
        "BPT, BCT, port map",
        ("buffer count and sizes", "field-based buffer selection"),
        ("bpt set", "bct add|mod|del", "bpt map"),
        lambda x, proc_logic, engine: engine.receive(x)),
    ComponentFunction(
        "ingress parser", ("pr_in",), "PHV", "PHV", "parse graph", "parse tables",
        ("header definition", "parse graph", "max parse depth"), ("parse add|mod|del",),
        run_parser),
    ComponentFunction(
        "ingress match-action unit", ("mau_in",), "PHV", "PHV", "MAT graph and actions",
        "MAT entries, stateful objects",
        ("match kinds", "action primitives", "stateful objects"),
        ("table add|mod|del|default", "read", "write", "reset"),
        run_mau),
    ComponentFunction(
        "ingress deparser", ("dpr_in",), "PHV", "PHV", "deparse graph", "-",
        ("emission order", "constants", "max packet length"), ("deparse set",),
        run_deparser),
    ComponentFunction(
        "buffer and replication engine", ("bre",), "PHV", "PHV copies", "manycast expansion",
        "MGT, per-port BPT", ("per-port buffer sizes",), ("mgt set|del", "bpt set bre"),
        lambda x, proc_logic, bre: replicate(x, bre)),
    ComponentFunction(
        "egress parser", ("pr_e",), "PHV", "PHV", "parse graph", "parse tables",
        ("parse graph",), ("parse add|mod|del",), run_parser),
    ComponentFunction(
        "egress match-action unit", ("mau_e",), "PHV", "PHV", "MAT graph and actions",
        "MAT entries, stateful objects", ("match kinds", "action primitives"),
        ("table add|mod|del|default",), run_mau),
    ComponentFunction(
        "egress deparser", ("dpr_e",), "PHV", "PHV", "deparse graph", "-",
        ("emission order", "constants"), ("deparse set",), run_deparser),
    ComponentFunction(
        "scheduler", ("sched",), "PHV", "(PHV, departure time)", "insert/remove algorithm",
        "scheduling parameters", ("algorithm", "capacity", "port rate"),
        ("sched set", "read sds"),
        lambda x, proc_logic, sds: sds.insert(x)),
    ComponentFunction(
        "egress port", ("port_e",), "PHV", "packet bits", "emission", "-", ("port set",), ()),
)

COMPONENT_BY_INSTANCE: Dict[str, ComponentFunction] = {
    name: c for c in COMPONENTS for name in c.instances}


@dataclass(frozen=True)
class DelayBreakdown:
    queuing: int
    processing: int
    link: int
    total: int


def network_delay(rec: DelayRecord, link_delay: int = 0) -> DelayBreakdown:
    """Split a packet's delay into queuing, processing and link parts.

    Raises:
        IncompleteRecord: A visited component has no exit stamp or exits
            before it was entered.
    """
    spans = {}
    for component, (entry, exit_) in rec.items():
        if entry is None or exit_ is None or exit_ < entry:
            raise IncompleteRecord(f"component '{component}' has timestamps {entry}..{exit_}")
        spans[component] = exit_ - entry
    queuing = sum(spans.get(c, 0) for c in QUEUING_COMPONENTS)
    processing = sum(spans.get(c, 0) for c in PROCESSING_COMPONENTS)
    return DelayBreakdown(queuing, processing, link_delay, queuing + processing + link_delay)


class Device:
    """One loaded device: component state plus the event handlers."""

    def __init__(self, dpp: DppFile, link_delay: Optional[int] = None, record_events: bool = False):
        self.dpp = copy.deepcopy(dpp)
        pipe = self.dpp.pipeline
        self.pipeline = pipe
        self.wiring = pipe.wiring
        self.link_delay = config.LINK_DELAY_NS if link_delay is None else link_delay
        self.now = 0
        self._seq = itertools.count()
        self.notifications: List[Notification] = []
        self.outputs: List[TraceRecord] = []
        self.event_log: Optional[List[str]] = [] if record_events else None
        self.stats = RunStats(program=self.dpp.name)

        self.be1 = BufferSet(self.dpp.be1_bpt, SelectBy.INGRESS_PORT, port_map=self.dpp.be1_port_map,
                             name="be1", notify=self._notify) if pipe.enable_be1 else None
        self.be2 = BufferSet(self.dpp.bpt, SelectBy.RULES, bct=self.dpp.bct,
                             name="be2", notify=self._notify) if pipe.enable_be2 else None
        self.bre = BreState(pipe.ports, self.dpp.mgt, pipe.bre_buffer_size,
                            seq_source=self._next_seq, notify=self._notify)
        self.sched = Scheduler(pipe.ports, self.dpp.sched)
        self.engines: Dict[str, BufferSet] = {
            name: engine for name, engine in
            (("be1", self.be1), ("be2", self.be2), ("bre", self.bre.buffers)) if engine is not None}
        self._tick_pending = {name: False for name in self.engines}
        self._port_busy = {port: False for port in pipe.ports}
        self._next = {a: b for a, b in zip(self.wiring, self.wiring[1:])}

    def _next_seq(self) -> int:
        return next(self._seq)

    def _notify(self, kind: str, payload: dict):
        note = Notification(self.now, kind, dict(payload))
        self.notifications.append(note)
        self.stats.notifications.append(NotificationModel(at=note.at, kind=kind, payload=dict(payload)))
        logger.warning("notification t=%d %s", self.now, control_plane.format_notification(note))

    def _log(self, t: int, seq: int, state: Lifecycle, detail: str = ""):
        if self.event_log is not None:
            label = f"{state.label}:{detail}" if detail else state.label
            self.event_log.append(f"{t} {seq} {label}")

    def step(self, event: Event) -> List[Event]:
        """Handle one event and return its follow-up events."""
        self.now = event.at
        handler = {
            EventKind.PACKET_ARRIVAL: self._on_arrival,
            EventKind.COMPONENT: self._on_component,
            EventKind.BUFFER_DRAIN_TICK: self._on_drain_tick,
            EventKind.SCHEDULER_TICK: self._on_scheduler_tick,
            EventKind.CP_COMMAND: self._on_cp_command,
        }[event.kind]
        return handler(event)

    def _forward(self, phv: PHV, after: str, t: int) -> Event:
        return Event(t, EventKind.COMPONENT, phv=phv, component=self._next[after])

    def _drop(self, phv: PHV, reason: str, t: int) -> List[Event]:
        return self._drop_seq(phv.seq, reason, t)

    def _drop_seq(self, seq: int, reason: str, t: int) -> List[Event]:
        self.stats.drops_by_reason[reason] = self.stats.drops_by_reason.get(reason, 0) + 1
        self._log(t, seq, Lifecycle.DROPPED, reason)
        logger.debug("t=%d seq=%d dropped: %s", t, seq, reason)
        return []

    def _on_arrival(self, event: Event) -> List[Event]:
        record, t = event.record, event.at
        seq = self._next_seq()
        self.stats.arrivals += 1
        try:
            phv = make_phv(record.bits, record.port, t, seq, self.dpp.catalog,
                           self.pipeline.max_packet_length_bits)
        except PacketTooLong as exc:
            return self._drop_seq(seq, exc.drop_reason, t)
        phv.stamp_entry("port_in", t)
        self._log(t, seq, Lifecycle.PORT_IN)
        if record.port not in self._port_busy:
            return self._drop(phv, "no_such_port", t)
        phv.stamp_exit("port_in", t)
        return [self._forward(phv, "port_in", t)]

    def _on_component(self, event: Event) -> List[Event]:
        name, phv, t = event.component, event.phv, event.at
        if name in self.engines:
            return self._buffer_receive(name, phv, t)
        if name == "sched":
            return self._sched_insert(phv, t)
        if name == "port_e":
            return self._emit(phv, t)

        phv.stamp_entry(name, t)
        self._log(t, phv.seq, ENTRY_STATE[name])
        proc_logic, conf = self._processing_inputs(name, t)
        try:
            out = COMPONENT_BY_INSTANCE[name].invoke(phv, proc_logic, **conf)
        except AVSError as exc:
            return self._drop(phv, exc.drop_reason, t)
        if out.dropped:
            return self._drop(out, out.drop_reason, t)
        exit_time = t + self.pipeline.cost(name)
        out.stamp_exit(name, exit_time)
        return [self._forward(out, name, exit_time)]

    def _processing_inputs(self, name: str, t: int):
        dpp = self.dpp
        if name == "pr_in":
            return dpp.parse_ingress, {}
        if name == "pr_e":
            return dpp.parse_egress, {}
        if name in ("mau_in", "mau_e"):
            stage = Stage.INGRESS if name == "mau_in" else Stage.EGRESS
            graph = dpp.mau_ingress if name == "mau_in" else dpp.mau_egress
            return graph, {"store": dpp.store, "stage": stage, "now": t, "notify": self._notify}
        graph = dpp.deparse_ingress if name == "dpr_in" else dpp.deparse_egress
        return graph, {"max_packet_length_bits": self.pipeline.max_packet_length_bits}

    def _kick(self, name: str, t: int) -> List[Event]:
        if not self._tick_pending[name] and self.engines[name].has_eligible():
            self._tick_pending[name] = True
            return [Event(t, EventKind.BUFFER_DRAIN_TICK, component=name)]
        return []

    def _buffer_receive(self, name: str, phv: PHV, t: int) -> List[Event]:
        phv.stamp_entry(name, t)
        self._log(t, phv.seq, ENTRY_STATE[name])
        if name == "bre":
            try:
                results = self.bre.receive(phv)
            except AVSError as exc:
                return self._drop(phv, exc.drop_reason, t)
            for copy_phv, outcome in results:
                self._log(t, copy_phv.seq, Lifecycle.BRE_RECEIVE)
                if isinstance(outcome, Dropped):
                    self._drop(copy_phv, outcome.reason, t)
        else:
            outcome = self.engines[name].receive(phv)
            if isinstance(outcome, Dropped):
                self._drop(phv, outcome.reason, t)
        return self._kick(name, t)

    def _on_drain_tick(self, event: Event) -> List[Event]:
        name, t = event.component, event.at
        engine = self.engines[name]
        phv = engine.send()
        if phv is None:
            self._tick_pending[name] = False
            return []
        self._log(t, phv.seq, SEND_STATE[name])
        exit_time = t + self.pipeline.cost(name)
        phv.stamp_exit(name, exit_time)
        follow = [self._forward(phv, name, exit_time)]
        if engine.has_eligible():
            follow.append(Event(exit_time, EventKind.BUFFER_DRAIN_TICK, component=name))
        else:
            self._tick_pending[name] = False
        return follow

    def _sched_insert(self, phv: PHV, t: int) -> List[Event]:
        phv.stamp_entry("sched", t)
        self._log(t, phv.seq, Lifecycle.SCHED_INSERT)
        try:
            outcome = self.sched.insert(phv)
        except AVSError as exc:
            return self._drop(phv, exc.drop_reason, t)
        if isinstance(outcome, DroppedSelf):
            return self._drop(phv, outcome.reason, t)
        if isinstance(outcome, Evicted):
            self._drop(outcome.victim, outcome.reason, t)
        port = phv.read("egress_port")
        if self._port_busy[port]:
            return []
        self._port_busy[port] = True
        return [Event(max(t, self.sched.next_free(port)), EventKind.SCHEDULER_TICK, port=port)]

    def _on_scheduler_tick(self, event: Event) -> List[Event]:
        port, t = event.port, event.at
        removed = self.sched.remove(t, port)
        if removed is None:
            self._port_busy[port] = False
            return []
        phv, depart = removed
        self._log(t, phv.seq, Lifecycle.SCHED_REMOVE)
        exit_time = depart + self.pipeline.cost("sched")
        phv.stamp_exit("sched", exit_time)
        follow = [self._forward(phv, "sched", exit_time)]
        if self.sched.ports[port]:
            follow.append(Event(max(t, self.sched.next_free(port)), EventKind.SCHEDULER_TICK, port=port))
        else:
            self._port_busy[port] = False
        return follow

    def _emit(self, phv: PHV, t: int) -> List[Event]:
        phv.stamp_entry("port_e", t)
        phv.stamp_exit("port_e", t)
        self._log(t, phv.seq, Lifecycle.PORT_E)
        data = phv.data_buffer
        if not data.is_byte_aligned:
            logger.warning("seq=%d emitted %d bits, padding to a byte boundary", phv.seq, data.length)
        port = phv.read("egress_port")
        self.outputs.append(TraceRecord(t + self.link_delay, port, data.to_bytes()))
        self.stats.emissions += 1
        self._log(t, phv.seq, Lifecycle.EMITTED)
        self._record_delays(phv)
        return []

    def _record_delays(self, phv: PHV):
        delays = self.stats.component_delays
        for component, (entry, exit_) in phv.timestamps.items():
            delays.setdefault(component, DelayStats()).add(exit_ - entry)
        breakdown = network_delay(phv.timestamps, self.link_delay)
        for part in ("queuing", "processing", "link", "total"):
            self.stats.network_delay.setdefault(part, DelayStats()).add(getattr(breakdown, part))

    def _on_cp_command(self, event: Event) -> List[Event]:
        cmd, t = event.command, event.at
        try:
            result = control_plane.apply(cmd, self)
        except AVSError as exc:
            message = control_plane.describe_error(cmd, exc)
            self.stats.cp_errors.append(f"{t} {message}")
            logger.warning("cp command '%s' failed: %s", cmd, message)
        else:
            if cmd.verb == "read":
                self.stats.cp_reads.append(CpReadModel(at=t, command=str(cmd), value=result))
        follow = []
        for name in self.engines:
            follow.extend(self._kick(name, t))
        return follow

    def finish(self) -> RunStats:
        """Fill end-of-run occupancies and state into the stats."""
        stats = self.stats
        stats.replicas_created = self.bre.replicas_created
        for name, engine in self.engines.items():
            stats.residual[name] = engine.total_occupancy()
            stats.buffer_occupancy[name] = {str(b): n for b, n in engine.occupancy().items()}
        stats.residual["sched"] = self.sched.total_occupancy()
        stats.sched_occupancy = {str(p): n for p, n in self.sched.occupancy().items()}
        stats.counters = dict(self.dpp.store.counters)
        for graph in (self.dpp.mau_ingress, self.dpp.mau_egress):
            for node_id, node in graph.nodes.items():
                stats.table_hits[node_id] = node.hits
                stats.table_misses[node_id] = node.misses
        if not stats.conserved:
            logger.error("conservation violated: %s", stats.model_dump_json())
        return stats


def run_device(
    dpp: DppFile,
    trace: Iterable[TraceRecord],
    cp_script: Optional[CpScript] = None,
    link_delay: Optional[int] = None,
    record_events: bool = False,
) -> Device:
    """Replay ``trace`` through a fresh device and return it after the run.

    Control-plane commands are scheduled before packets, so a command and a
    packet at the same timestamp apply the command first.

    Raises:
        DppValidationError: The program does not validate.
    """
    problems = validate_dpp(dpp)
    if problems:
        raise DppValidationError(problems)
    device = Device(dpp, link_delay, record_events)
    script = cp_script or CpScript()
    device.stats.cp_errors.extend(script.errors)
    env = simpy.Environment()

    def deliver(event: Event):
        yield env.timeout(event.at - env.now)
        for follow in device.step(event):
            env.process(deliver(follow))

    for cmd in script.commands:
        env.process(deliver(Event(cmd.at, EventKind.CP_COMMAND, command=cmd)))
    for record in trace:
        env.process(deliver(Event(record.time_ns, EventKind.PACKET_ARRIVAL, record=record)))
    env.run()
    device.finish()
    logger.info("run complete: %d arrivals, %d emissions, %d drops",
                device.stats.arrivals, device.stats.emissions, device.stats.total_drops)
    return device


def run_trace(
    dpp: DppFile,
    trace: Iterable[TraceRecord],
    cp_script: Optional[CpScript] = None,
    link_delay: Optional[int] = None,
) -> Tuple[List[TraceRecord], RunStats]:
    """Replay a trace and return the output trace and run statistics."""
    device = run_device(dpp, trace, cp_script, link_delay)
    return device.outputs, device.stats
