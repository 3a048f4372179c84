"""Buffer and replication engine between the ingress and egress stages.

Holds one FIFO buffer per egress port and expands manycast PHVs into one
copy per member port of their group.
"""

import itertools
import logging
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Tuple

from buffer_engine import BufferParams, BufferSet, ReceiveOutcome, SelectBy
from config import config
from phv import AVSError, PHV

logger = logging.getLogger(__name__)


class ReplicationError(AVSError):
    """Base exception for replication failures."""


class NoEgressDecision(ReplicationError):
    """Raised when a PHV has neither egress_port nor mcast_group."""

    drop_reason = "no_egress"


class AmbiguousEgress(ReplicationError):
    """Raised when a PHV has both egress_port and mcast_group."""

    drop_reason = "ambiguous_egress"


class NoSuchGroup(ReplicationError):
    """Raised when a manycast group is not in the MGT."""

    drop_reason = "no_such_group"


class NoSuchPort(ReplicationError):
    """Raised when a port does not exist on the device."""

    drop_reason = "no_such_port"


class EmptyGroup(ReplicationError):
    """Raised when a manycast group is set with no member ports."""


class BreState:
    """Per-egress-port buffers plus the manycast group table."""

    def __init__(
        self,
        ports: Iterable[int],
        mgt: Optional[Dict[int, Iterable[int]]] = None,
        buffer_size: Optional[int] = None,
        seq_source: Optional[Callable[[], int]] = None,
        notify=None,
    ):
        self.ports = sorted(set(ports))
        size = buffer_size or config.BRE_BUFFER_SIZE
        self.buffers = BufferSet(
            [BufferParams(port, size) for port in self.ports],
            select_by=SelectBy.EGRESS_PORT,
            name="bre",
            notify=notify,
        )
        self.mgt: Dict[int, FrozenSet[int]] = {}
        for group_id, members in (mgt or {}).items():
            self.cp_set_mgt(group_id, members, "set")
        self.seq_source = seq_source or itertools.count(1 << 32).__next__
        self.replicas_created = 0

    def cp_set_mgt(self, group_id: int, ports: Iterable[int] = (), op: str = "set") -> "BreState":
        """Set or delete a manycast group.

        Raises:
            EmptyGroup: Set with no member ports.
            NoSuchPort: A member port is not a device port.
            NoSuchGroup: Delete of an absent group.
        """
        if op in ("del", "delete"):
            if group_id not in self.mgt:
                raise NoSuchGroup(f"no manycast group {group_id}")
            del self.mgt[group_id]
            logger.info("mgt delete group %d", group_id)
            return self
        members = frozenset(ports)
        if not members:
            raise EmptyGroup(f"manycast group {group_id} has no member ports")
        unknown = sorted(members - set(self.ports))
        if unknown:
            raise NoSuchPort(f"manycast group {group_id} names unknown ports {unknown}")
        self.mgt[group_id] = members
        logger.info("mgt set group %d -> %s", group_id, sorted(members))
        return self

    def receive(self, phv: PHV) -> List[Tuple[PHV, ReceiveOutcome]]:
        """Replicate and store every copy in its port buffer.

        Copies are stamped egress-locked here: from this point the egress port
        of a copy can no longer change.
        """
        results = []
        for _, copy in replicate(phv, self):
            copy.egress_locked = True
            results.append((copy, self.buffers.receive(copy)))
        return results

    def send(self) -> Optional[PHV]:
        return self.buffers.send()

    def has_eligible(self) -> bool:
        return self.buffers.has_eligible()


def replicate(phv: PHV, bre: BreState) -> List[Tuple[int, PHV]]:
    """Expand ``phv`` into (port, copy) pairs.

    Unicast PHVs yield one pair. Manycast PHVs yield one copy per member port
    in ascending port order; copy 0 keeps the original seq, later copies draw
    fresh ones.

    Raises:
        NoEgressDecision: Neither egress_port nor mcast_group is set.
        AmbiguousEgress: Both are set.
        NoSuchGroup: Group absent from the MGT.
        NoSuchPort: Unicast egress port absent from the device.
    """
    port = phv.get("egress_port")
    group = phv.get("mcast_group")
    if port is not None and group is not None:
        raise AmbiguousEgress(f"PHV seq={phv.seq} has both egress_port and mcast_group")
    if port is not None:
        if port not in bre.buffers.bpt:
            raise NoSuchPort(f"egress port {port} does not exist")
        copy = phv.clone()
        copy.metadata["copy_index"] = 0
        return [(port, copy)]
    if group is None:
        raise NoEgressDecision(f"PHV seq={phv.seq} has no egress decision")
    members = bre.mgt.get(group)
    if members is None:
        raise NoSuchGroup(f"no manycast group {group}")

    copies = []
    for index, member in enumerate(sorted(members)):
        copy = phv.clone()
        copy.metadata["egress_port"] = member
        copy.metadata["copy_index"] = index
        if index:
            copy.seq = bre.seq_source()
        copies.append((member, copy))
    bre.replicas_created += len(copies) - 1
    logger.debug("seq=%d group %d -> %d copies", phv.seq, group, len(copies))
    return copies


