"""Programmable buffer engine: a set of FIFO buffers behind RX/TX gates.

The same class backs the post-port buffer engine (buffer chosen by ingress
port), the post-parser buffer engine (buffer chosen by BCT rules on PHV
fields) and the per-port buffers of the replication engine (buffer chosen
by egress port).
"""

import collections
import enum
import logging
from dataclasses import dataclass
from typing import Callable, Deque, Dict, Iterable, List, Optional, Union

from config import config
from phv import (
    AVSError,
    DuplicateEntry,
    NoSuchEntry,
    PHV,
    TableOp,
    UnresolvedReference,
)

logger = logging.getLogger(__name__)

DEFAULT_BUFFER_ID = 0


class NoSuchBuffer(AVSError):
    """Raised when a buffer id is not in the buffer parameter table."""


class InvalidSize(AVSError):
    """Raised when a buffer size is not a positive integer."""


class UnknownParam(AVSError):
    """Raised when a BPT column name is not size, rx or tx."""


class SelectBy(str, enum.Enum):
    RULES = "rules"
    INGRESS_PORT = "ingress_port"
    EGRESS_PORT = "egress_port"


@dataclass
class BufferParams:
    """One BPT row. ``size`` is a capacity in PHVs."""

    buffer_id: int
    size: int
    rx: bool = True
    tx: bool = True


@dataclass(frozen=True)
class BufferRule:
    """One BCT row: PHV field value to buffer, with a priority."""

    field_id: str
    match_value: int
    buffer_id: int
    priority: int = 0

    @property
    def key(self):
        return (self.field_id, self.match_value)


@dataclass(frozen=True)
class Stored:
    buffer_id: int


@dataclass(frozen=True)
class Dropped:
    reason: str
    buffer_id: Optional[int] = None


ReceiveOutcome = Union[Stored, Dropped]
Notifier = Callable[[str, dict], None]


class BufferSet:
    """Named FIFO buffers with BPT gates and an optional BCT."""

    def __init__(
        self,
        bpt: Iterable[BufferParams],
        select_by: SelectBy = SelectBy.RULES,
        bct: Iterable[BufferRule] = (),
        port_map: Optional[Dict[int, int]] = None,
        name: str = "be2",
        notify: Optional[Notifier] = None,
    ):
        """Initialize the buffer set.

        Args:
            bpt: Initial buffer parameter table rows
            select_by: How the receiver picks a buffer for a PHV
            bct: Initial buffer configuration rules (rules mode only)
            port_map: Ingress port to buffer id (ingress_port mode only)
            name: Label used in stats and notifications
            notify: Callback receiving (kind, payload) for control-plane events
        """
        self.name = name
        self.select_by = select_by
        self.bpt: Dict[int, BufferParams] = {
            p.buffer_id: BufferParams(p.buffer_id, p.size, p.rx, p.tx) for p in bpt}
        if select_by != SelectBy.EGRESS_PORT and DEFAULT_BUFFER_ID not in self.bpt:
            self.bpt[DEFAULT_BUFFER_ID] = BufferParams(
                DEFAULT_BUFFER_ID, config.DEFAULT_BUFFER_SIZE, True, True)
        self.buffers: Dict[int, Deque[PHV]] = {
            bid: collections.deque() for bid in self.bpt}
        self.bct: List[BufferRule] = list(bct)
        self.port_map: Dict[int, int] = dict(port_map or {})
        self.rr_cursor = 0
        self.inserts: Dict[int, int] = {bid: 0 for bid in self.bpt}
        self.pops: Dict[int, int] = {bid: 0 for bid in self.bpt}
        self.drops: Dict[str, int] = collections.Counter()
        self._full_armed: Dict[int, bool] = {bid: True for bid in self.bpt}
        self.notify = notify

    @property
    def buffer_ids(self) -> List[int]:
        return sorted(self.bpt)

    def occupancy(self) -> Dict[int, int]:
        return {bid: len(self.buffers[bid]) for bid in self.buffer_ids}

    def total_occupancy(self) -> int:
        return sum(len(q) for q in self.buffers.values())

    def select_buffer(self, phv: PHV) -> Optional[int]:
        if self.select_by == SelectBy.EGRESS_PORT:
            port = phv.get("egress_port")
            return port if port in self.bpt else None
        if self.select_by == SelectBy.INGRESS_PORT:
            return self.port_map.get(phv.read("ingress_port"), DEFAULT_BUFFER_ID)
        matches = [r for r in self.bct if phv.get(r.field_id) == r.match_value]
        if not matches:
            return DEFAULT_BUFFER_ID
        return min(matches, key=lambda r: (-r.priority, r.buffer_id)).buffer_id

    def receive(self, phv: PHV) -> ReceiveOutcome:
        """Receiver thread: admit a PHV into its buffer or drop it."""
        bid = self.select_buffer(phv)
        if bid is None:
            return self._drop("no_such_port", None)
        params = self.bpt[bid]
        if not params.rx:
            return self._drop("rx_closed", bid)
        queue = self.buffers[bid]
        if len(queue) >= params.size:
            if self._full_armed[bid]:
                self._full_armed[bid] = False
                logger.warning("%s buffer %d is full", self.name, bid)
                if self.notify:
                    self.notify("buffer_full", {"engine": self.name, "buffer_id": bid})
            return self._drop("buffer_full", bid)
        queue.append(phv)
        self.inserts[bid] += 1
        return Stored(bid)

    def _drop(self, reason: str, bid: Optional[int]) -> Dropped:
        self.drops[reason] += 1
        return Dropped(reason, bid)

    def _rearm(self, bid: int):
        if len(self.buffers[bid]) < self.bpt[bid].size:
            self._full_armed[bid] = True

    def has_eligible(self) -> bool:
        return any(self.bpt[bid].tx and self.buffers[bid] for bid in self.bpt)

    def send(self) -> Optional[PHV]:
        """Sender thread: pop the head of the next eligible buffer, round-robin.

        Buffers with tx=false are paused and skipped, as are empty ones.
        """
        ids = self.buffer_ids
        for step in range(len(ids)):
            index = (self.rr_cursor + step) % len(ids)
            bid = ids[index]
            queue = self.buffers[bid]
            if self.bpt[bid].tx and queue:
                phv = queue.popleft()
                self.pops[bid] += 1
                self.rr_cursor = (index + 1) % len(ids)
                self._rearm(bid)
                return phv
        return None

    def cp_set_bpt(self, buffer_id: int, param: str, value) -> "BufferSet":
        """Update one BPT cell. Shrinking below occupancy never evicts.

        Raises:
            NoSuchBuffer: Unknown buffer id.
            InvalidSize: Size that is not a positive integer.
            UnknownParam: Column other than size, rx or tx.
        """
        params = self.bpt.get(buffer_id)
        if params is None:
            raise NoSuchBuffer(f"{self.name} has no buffer {buffer_id}")
        if param == "size":
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise InvalidSize(f"invalid buffer size {value!r}")
            params.size = value
            self._rearm(buffer_id)
        elif param in ("rx", "tx"):
            setattr(params, param, bool(value))
        else:
            raise UnknownParam(f"unknown BPT column '{param}'")
        logger.info("%s bpt buffer %d %s=%s", self.name, buffer_id, param, value)
        return self

    def cp_update_bct(self, rule: BufferRule, op: TableOp) -> "BufferSet":
        """Add, modify or delete a BCT rule keyed by (field_id, match_value).

        Raises:
            UnresolvedReference: Rule points at a buffer absent from the BPT.
            DuplicateEntry: Adding an existing key.
            NoSuchEntry: Modifying or deleting an absent key.
        """
        if op != TableOp.DELETE and rule.buffer_id not in self.bpt:
            raise UnresolvedReference(
                f"BCT rule references unknown buffer {rule.buffer_id}")
        bct = list(self.bct)
        index = next((i for i, r in enumerate(bct) if r.key == rule.key), None)
        if op == TableOp.ADD:
            if index is not None:
                raise DuplicateEntry(f"BCT already has {rule.field_id}={rule.match_value:#x}")
            bct.append(rule)
        elif index is None:
            raise NoSuchEntry(f"BCT has no {rule.field_id}={rule.match_value:#x}")
        elif op == TableOp.MODIFY:
            bct[index] = rule
        else:
            del bct[index]
        self.bct = bct
        logger.info("%s bct %s %s=%#x", self.name, op.value, rule.field_id, rule.match_value)
        return self

    def cp_map_port(self, port: int, buffer_id: int) -> "BufferSet":
        """Point an ingress port at a buffer (post-port engine)."""
        if buffer_id not in self.bpt:
            raise NoSuchBuffer(f"{self.name} has no buffer {buffer_id}")
        self.port_map[port] = buffer_id
        return self
