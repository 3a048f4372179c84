"""Scheduler: per-port ordered PHV sets behind Insert and Remove.

Algorithms are plugins registered by name. Each one maps an arriving PHV to
an order key; the scheduler keeps every port's residents sorted by that key
plus the PhvOrderKey tiebreak (arrival_time, ingress_port, seq), so the head
of a port is always the next PHV to transmit.
"""

import bisect
import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Type, Union

from config import config
from phv import AVSError, Direction, PHV, PhvOrderKey, compare

logger = logging.getLogger(__name__)


class SchedulerError(AVSError):
    """Base exception for scheduler errors."""


class NoEgressPort(SchedulerError):
    """Raised when a PHV reaches the scheduler without an egress port."""

    drop_reason = "no_egress"


class UnknownParam(SchedulerError):
    """Raised when a parameter is not known to the active algorithm."""


class InvalidValue(SchedulerError):
    """Raised when a parameter value is out of range."""


class UnknownAlgorithm(SchedulerError):
    """Raised when no algorithm is registered under a name."""


@dataclass
class SchedParams:
    """Scheduler parameters. ``port_rate_bps`` of None sends at line speed."""

    algorithm: str = "fifo"
    capacity: int = field(default_factory=lambda: config.SCHED_CAPACITY)
    port_rate_bps: Optional[int] = None
    flow_field: Optional[str] = None
    weights: Dict[int, int] = field(default_factory=dict)
    default_weight: int = 1
    priority_field: Optional[str] = None


@dataclass(frozen=True)
class Accepted:
    pass


@dataclass(frozen=True)
class DroppedSelf:
    reason: str = "sched_full"


@dataclass(frozen=True)
class Evicted:
    victim: PHV
    reason: str = "sched_evicted"


InsertOutcome = Union[Accepted, DroppedSelf, Evicted]


@dataclass
class PortQueue:
    """Residents of one port, sorted by key, plus algorithm state."""

    entries: List[Tuple[tuple, PHV]] = field(default_factory=list)
    next_free: int = 0
    virtual_time: Fraction = Fraction(0)
    last_finish: Dict[Optional[int], Fraction] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)


class SchedulingAlgorithm:
    """Insert/Remove policy. Subclasses compute order keys (smaller is earlier)."""

    name = ""
    params_keys: Tuple[str, ...] = ()

    def order(self, phv: PHV, queue: PortQueue, params: SchedParams, arrival_no: int) -> tuple:
        raise NotImplementedError

    def victim(self, key: tuple, queue: PortQueue) -> Optional[int]:
        """Index of the resident to evict for an arrival with ``key``, or None to drop it."""
        return None

    def on_accept(self, key: tuple, phv: PHV, queue: PortQueue, params: SchedParams):
        pass

    def on_remove(self, key: tuple, phv: PHV, queue: PortQueue):
        pass


ALGORITHMS: Dict[str, Type[SchedulingAlgorithm]] = {}


def register_algorithm(name: str) -> Callable[[Type[SchedulingAlgorithm]], Type[SchedulingAlgorithm]]:
    def decorator(cls):
        cls.name = name
        ALGORITHMS[name] = cls
        return cls
    return decorator


@register_algorithm("fifo")
class Fifo(SchedulingAlgorithm):
    """First come, first served in the order PHVs reach the scheduler.

    That order is the scheduler's own arrival count, not ``seq``: after
    unequal stage costs or a buffer hold, a later packet can reach the
    scheduler first and is then sent first.
    """

    def order(self, phv, queue, params, arrival_no):
        return (arrival_no,)


@register_algorithm("strict_priority")
class StrictPriority(SchedulingAlgorithm):
    """Highest priority first. A configured priority_field wins over scheduling_order."""

    params_keys = ("priority_field",)

    def order(self, phv, queue, params, arrival_no):
        if params.priority_field:
            return self.order_key(params.priority_field).field_values(phv)
        if phv.get("scheduling_order") is None:
            return (0,)
        return self.order_key("scheduling_order").field_values(phv)

    @staticmethod
    def order_key(field_id: str) -> PhvOrderKey:
        return PhvOrderKey(((field_id, Direction.DESC),))

    def victim(self, key, queue):
        lowest = len(queue.entries) - 1
        if lowest >= 0 and key[0] < queue.entries[lowest][0][0]:
            return lowest
        return None


@register_algorithm("wfq")
class WeightedFairQueuing(SchedulingAlgorithm):
    """Self-clocked fair queuing on per-flow virtual finish tags.

    A packet of ``L`` bits from a flow of weight ``w`` gets
    ``finish = max(V, last_finish[flow]) + L / w``; ``V`` is the finish tag of
    the packet most recently removed from the port.
    """

    params_keys = ("flow_field", "default_weight", "weight.")

    def order(self, phv, queue, params, arrival_no):
        flow = self._flow(phv, params)
        weight = params.weights.get(flow, params.default_weight)
        start = max(queue.virtual_time, queue.last_finish.get(flow, Fraction(0)))
        return (start + Fraction(phv.data_buffer.length, weight),)

    def on_accept(self, key, phv, queue, params):
        queue.last_finish[self._flow(phv, params)] = key[0]

    @staticmethod
    def _flow(phv: PHV, params: SchedParams) -> Optional[int]:
        return phv.get(params.flow_field) if params.flow_field else None

    def on_remove(self, key, phv, queue):
        queue.virtual_time = max(queue.virtual_time, key[0])


@dataclass(frozen=True)
class SdsSnapshot:
    occupancy: Dict[int, int]
    head: Dict[int, Optional[tuple]]
    capacity: int
    algorithm: str


class Scheduler:
    """The scheduler data structure: one ordered PHV set per egress port."""

    def __init__(self, ports: Iterable[int], params: Optional[SchedParams] = None):
        self.params = params or SchedParams()
        if self.params.algorithm not in ALGORITHMS:
            raise UnknownAlgorithm(f"unknown scheduling algorithm '{self.params.algorithm}'")
        self.algorithm = ALGORITHMS[self.params.algorithm]()
        self.ports: Dict[int, PortQueue] = {port: PortQueue() for port in sorted(set(ports))}
        self._arrivals = itertools.count()
        self.arrival_key = PhvOrderKey()
        self._rr_cursor = 0

    def occupancy(self) -> Dict[int, int]:
        return {port: len(queue) for port, queue in self.ports.items()}

    def total_occupancy(self) -> int:
        return sum(len(queue) for queue in self.ports.values())

    def insert(self, phv: PHV) -> InsertOutcome:
        """Place ``phv`` in its port's ordered set.

        Raises:
            NoEgressPort: The PHV has no egress port, or the port does not exist.
            DuplicateSequence: A resident ties with ``phv`` on the whole key.
        """
        port = phv.get("egress_port")
        if port is None or port not in self.ports:
            raise NoEgressPort(f"PHV seq={phv.seq} has no schedulable egress port")
        queue = self.ports[port]
        arrival_no = next(self._arrivals)
        key = self.algorithm.order(phv, queue, self.params, arrival_no) + self.arrival_key.sort_key(phv)
        index = bisect.bisect_left(queue.entries, key, key=_entry_key)
        if index < len(queue.entries) and queue.entries[index][0] == key:
            # equal keys tie on arrival too, which compare rejects
            compare(queue.entries[index][1], phv, self.arrival_key)
        outcome: InsertOutcome = Accepted()
        if len(queue) >= self.params.capacity:
            index = self.algorithm.victim(key, queue)
            if index is None:
                logger.debug("port %d full, dropping seq=%d", port, phv.seq)
                return DroppedSelf()
            _, victim = queue.entries.pop(index)
            outcome = Evicted(victim)
        bisect.insort(queue.entries, (key, phv), key=_entry_key)
        self.algorithm.on_accept(key, phv, queue, self.params)
        return outcome

    def remove(self, now: int, port: Optional[int] = None) -> Optional[Tuple[PHV, int]]:
        """Pop the head PHV and its departure time.

        With ``port`` None the ports take turns round-robin among the
        non-empty ones. Departure is ``max(now, next_free)`` and a configured
        port rate pushes ``next_free`` forward by the packet's serialization time.
        """
        if port is None:
            port = self._next_port()
            if port is None:
                return None
        queue = self.ports.get(port)
        if not queue:
            return None
        key, phv = queue.entries.pop(0)
        self.algorithm.on_remove(key, phv, queue)
        depart = max(now, queue.next_free)
        rate = self.params.port_rate_bps
        queue.next_free = depart + (-(-phv.data_buffer.length * 1_000_000_000 // rate) if rate else 0)
        return phv, depart

    def _next_port(self) -> Optional[int]:
        order = list(self.ports)
        for step in range(len(order)):
            index = (self._rr_cursor + step) % len(order)
            if self.ports[order[index]]:
                self._rr_cursor = (index + 1) % len(order)
                return order[index]
        return None

    def next_free(self, port: int) -> int:
        return self.ports[port].next_free

    def cp_set_sched(self, key: str, value) -> SchedParams:
        """Change one scheduler parameter between packets.

        Keys: ``capacity``, ``port_rate_bps`` and the active algorithm's own
        keys (``priority_field``; ``flow_field``, ``default_weight``,
        ``weight.<flow value>``).

        Raises:
            UnknownParam: Key unknown to the active algorithm.
            InvalidValue: Non-positive capacity or weight, negative rate.
        """
        known = ("capacity", "port_rate_bps") + self.algorithm.params_keys
        if not any(key == k or (k.endswith(".") and key.startswith(k)) for k in known):
            raise UnknownParam(f"'{key}' is not a parameter of {self.algorithm.name}")
        params = self.params
        if key in ("flow_field", "priority_field"):
            setattr(params, key, None if str(value) in ("", "none") else str(value))
        elif key == "port_rate_bps":
            rate = _integer(value)
            if rate < 0:
                raise InvalidValue(f"port rate must be non-negative, got {rate}")
            params.port_rate_bps = rate or None
        else:
            number = _integer(value)
            if number <= 0:
                raise InvalidValue(f"{key} must be positive, got {number}")
            if key == "capacity":
                params.capacity = number
            elif key == "default_weight":
                params.default_weight = number
            else:
                params.weights[_integer(key.split(".", 1)[1])] = number
        logger.info("sched set %s=%s", key, value)
        return params


def _entry_key(entry: Tuple[tuple, PHV]) -> tuple:
    return entry[0]


def _integer(value) -> int:
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    try:
        return int(str(value), 0)
    except ValueError:
        raise InvalidValue(f"not an integer: {value!r}") from None


def sds_inspect(sds: Scheduler) -> SdsSnapshot:
    """Read-only copy of per-port occupancy and head order keys."""
    return SdsSnapshot(
        occupancy=sds.occupancy(),
        head={port: (q.entries[0][0] if q.entries else None) for port, q in sds.ports.items()},
        capacity=sds.params.capacity,
        algorithm=sds.algorithm.name,
    )
