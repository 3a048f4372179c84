"""Match-action unit: a graph of match-action tables over PHV fields.

Each node matches one PHV field against a table of entries (exact, lpm,
ternary or range), runs the actions of the best entry (or the node's
default actions on a miss) and follows its hit or miss edge. Actions may be
stateless (PHV fields only) or stateful (counters, registers, meters).
"""

import enum
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from phv import (
    AVSError,
    Diagnostic,
    DuplicateEntry,
    EgressPortWriteInEgressStage,
    FieldCatalog,
    NoSuchEntry,
    PHV,
    TableOp,
    UnresolvedReference,
    parse_value,
)

logger = logging.getLogger(__name__)

COUNTER_MAX = (1 << 64) - 1
NS_PER_SECOND = 1_000_000_000


class MauError(AVSError):
    """Base exception for match-action errors."""


class NoSuchNode(MauError):
    """Raised when a MAT node id is not part of the graph."""


class DuplicateExactKey(MauError):
    """Raised when an exact key is added twice to one table."""


class MalformedEntry(MauError):
    """Raised when an entry does not fit its node (kind, width, prefix, range)."""


class MalformedAction(MauError):
    """Raised when an action has an unknown primitive or wrong arguments."""


class NoSuchObject(MauError):
    """Raised when a counter, register or meter is not declared."""


class IndexOutOfRange(MauError):
    """Raised when a register or meter index is outside the declared size."""

    drop_reason = "state_index_out_of_range"


class MauLoop(MauError):
    """Raised when graph traversal visits more nodes than the graph has."""

    drop_reason = "mau_loop"


class MatchKind(str, enum.Enum):
    EXACT = "exact"
    LPM = "lpm"
    TERNARY = "ternary"
    RANGE = "range"


class Stage(str, enum.Enum):
    INGRESS = "ingress"
    EGRESS = "egress"


class Color(enum.IntEnum):
    GREEN = 0
    YELLOW = 1
    RED = 2


_EXPR_TOKEN = re.compile(r"[+-]|[^+\-\s]+")


@dataclass(frozen=True)
class Expr:
    """Signed sum of constants and field references."""

    terms: Tuple[Tuple[int, Union[int, str]], ...]

    @classmethod
    def parse(cls, raw) -> "Expr":
        """Build from an int, a string like ``"ttl-1"`` or a token list."""
        if isinstance(raw, Expr):
            return raw
        if isinstance(raw, bool):
            raise MalformedAction(f"bad expression {raw!r}")
        if isinstance(raw, int):
            return cls(((1, raw),))
        tokens = raw if isinstance(raw, (list, tuple)) else _EXPR_TOKEN.findall(str(raw))
        terms = []
        sign = 1
        for token in tokens:
            if token in ("+", "-"):
                sign = sign if token == "+" else -sign
                continue
            terms.append((sign, _term(token)))
            sign = 1
        if not terms:
            raise MalformedAction(f"empty expression {raw!r}")
        return cls(tuple(terms))

    def field_refs(self) -> List[str]:
        return [t for _, t in self.terms if isinstance(t, str)]

    def evaluate(self, phv: PHV) -> int:
        total = 0
        for sign, term in self.terms:
            total += sign * (phv.read(term) if isinstance(term, str) else term)
        return total

    def __str__(self) -> str:
        out = ""
        for sign, term in self.terms:
            out += ("-" if sign < 0 else ("+" if out else "")) + str(term)
        return out


def _term(token):
    if isinstance(token, int):
        return token
    try:
        return parse_value(token)
    except ValueError:
        return token


# Argument kinds per primitive; "expr?" is optional.
SIGNATURES: Dict[str, Tuple[str, ...]] = {
    "set_field": ("field", "expr"),
    "copy_field": ("field", "field"),
    "add": ("field", "expr"),
    "sub": ("field", "expr"),
    "and": ("field", "expr"),
    "or": ("field", "expr"),
    "xor": ("field", "expr"),
    "shl": ("field", "expr"),
    "shr": ("field", "expr"),
    "shift": ("field", "expr"),
    "drop": (),
    "no_op": (),
    "set_egress_port": ("expr",),
    "set_mcast_group": ("expr",),
    "counter_inc": ("counter", "expr?"),
    "register_read": ("field", "register", "expr"),
    "register_write": ("register", "expr", "expr"),
    "meter_exec": ("meter", "expr", "field"),
    "set_sched_order": ("expr",),
}

STATEFUL_PRIMITIVES = {"counter_inc", "register_read", "register_write", "meter_exec"}
EGRESS_FORBIDDEN = {"set_egress_port", "set_mcast_group"}


@dataclass(frozen=True)
class ActionCall:
    primitive: str
    args: Tuple = ()

    @classmethod
    def build(cls, primitive: str, raw_args: Sequence = ()) -> "ActionCall":
        signature = SIGNATURES.get(primitive)
        if signature is None:
            raise MalformedAction(f"unknown action primitive '{primitive}'")
        required = [k for k in signature if not k.endswith("?")]
        if not len(required) <= len(raw_args) <= len(signature):
            raise MalformedAction(
                f"{primitive} takes {len(required)}..{len(signature)} arguments, got {len(raw_args)}")
        args = []
        for kind, raw in zip(signature, raw_args):
            args.append(Expr.parse(raw) if kind.startswith("expr") else str(raw))
        return cls(primitive, tuple(args))

    def writes(self) -> List[str]:
        """Fields this action writes."""
        if self.primitive in ("set_field", "copy_field", "add", "sub", "and", "or",
                              "xor", "shl", "shr", "shift", "register_read"):
            return [self.args[0]]
        if self.primitive == "meter_exec":
            return [self.args[2]]
        if self.primitive == "set_egress_port":
            return ["egress_port"]
        if self.primitive == "set_mcast_group":
            return ["mcast_group"]
        if self.primitive == "set_sched_order":
            return ["scheduling_order"]
        return []

    def reads(self) -> List[str]:
        fields = []
        signature = SIGNATURES[self.primitive]
        for kind, arg in zip(signature, self.args):
            if kind.startswith("expr"):
                fields.extend(arg.field_refs())
        if self.primitive == "copy_field":
            fields.append(self.args[1])
        return fields

    def __str__(self) -> str:
        return " ".join([self.primitive] + [str(a) for a in self.args])


@dataclass
class MatEntry:
    """One MAT entry. For range entries ``value`` is the low bound."""

    kind: MatchKind
    value: int
    mask: Optional[int] = None
    prefix_len: Optional[int] = None
    high: Optional[int] = None
    priority: int = 0
    actions: List[ActionCall] = field(default_factory=list)

    @property
    def key(self) -> tuple:
        if self.kind == MatchKind.TERNARY:
            return (self.kind, self.value & self.mask, self.mask)
        if self.kind == MatchKind.LPM:
            return (self.kind, self.value, self.prefix_len)
        if self.kind == MatchKind.RANGE:
            return (self.kind, self.value, self.high)
        return (self.kind, self.value)

    def problem(self, width: int) -> Optional[str]:
        """Why this entry is malformed for a ``width``-bit field, or None."""
        limit = 1 << width
        if not 0 <= self.value < limit:
            return f"key {self.value:#x} does not fit {width} bits"
        if self.kind == MatchKind.LPM:
            if self.prefix_len is None or not 0 <= self.prefix_len <= width:
                return f"prefix length {self.prefix_len} outside 0..{width}"
            if self.value & ((1 << (width - self.prefix_len)) - 1):
                return "lpm key has bits set beyond its prefix"
        if self.kind == MatchKind.TERNARY and (self.mask is None or not 0 <= self.mask < limit):
            return f"mask {self.mask} does not fit {width} bits"
        if self.kind == MatchKind.RANGE:
            if self.high is None or not 0 <= self.high < limit:
                return f"high bound {self.high} does not fit {width} bits"
            if self.value > self.high:
                return f"range low {self.value} above high {self.high}"
        return None

    def matches(self, value: int, width: int) -> bool:
        if self.kind == MatchKind.EXACT:
            return value == self.value
        if self.kind == MatchKind.LPM:
            shift = width - self.prefix_len
            return value >> shift == self.value >> shift
        if self.kind == MatchKind.TERNARY:
            return value & self.mask == self.value & self.mask
        return self.value <= value <= self.high


def parse_match(kind: MatchKind, key, width: int, priority: int = 0,
                actions: Sequence[ActionCall] = ()) -> MatEntry:
    """Build an entry from its key text.

    exact ``17``; lpm ``10.0.0.0/8`` (no prefix means full width); ternary
    ``value&&&mask``; range ``lo..hi``.

    Raises:
        MalformedEntry: Key text that does not parse for ``kind``.
    """
    text = str(key).strip()
    try:
        if kind == MatchKind.LPM:
            value, _, plen = text.partition("/")
            return MatEntry(kind, parse_value(value), prefix_len=int(plen) if plen else width,
                            priority=priority, actions=list(actions))
        if kind == MatchKind.TERNARY:
            value, sep, mask = text.partition("&&&")
            full = (1 << width) - 1
            return MatEntry(kind, parse_value(value), mask=parse_value(mask) if sep else full,
                            priority=priority, actions=list(actions))
        if kind == MatchKind.RANGE:
            low, sep, high = text.partition("..")
            if not sep:
                raise ValueError("range key needs 'lo..hi'")
            return MatEntry(kind, parse_value(low), high=parse_value(high),
                            priority=priority, actions=list(actions))
        return MatEntry(kind, parse_value(text), priority=priority, actions=list(actions))
    except ValueError as exc:
        raise MalformedEntry(f"bad {kind.value} key '{text}': {exc}") from None


class MatchTable:
    """Indexed lookup structure over the entries of one node."""

    def __init__(self, kind: MatchKind, width: int, entries: Sequence[MatEntry] = ()):
        self.kind = kind
        self.width = width
        self.entries = list(entries)
        self._exact: Dict[int, MatEntry] = {}
        self._lpm: Dict[int, Dict[int, MatEntry]] = {}
        self._lpm_lengths: List[int] = []
        self._ordered: List[MatEntry] = []
        self._reindex()

    def _reindex(self):
        # malformed entries stay listed for validation but are never matched
        usable = [e for e in self.entries if e.kind == self.kind and e.problem(self.width) is None]
        if self.kind == MatchKind.EXACT:
            self._exact = {e.value: e for e in usable}
        elif self.kind == MatchKind.LPM:
            self._lpm = {}
            for e in usable:
                self._lpm.setdefault(e.prefix_len, {})[
                    e.value >> (self.width - e.prefix_len)] = e
            self._lpm_lengths = sorted(self._lpm, reverse=True)
        else:
            # stable: equal priorities keep insertion order
            self._ordered = sorted(usable, key=lambda e: -e.priority)

    def lookup(self, value: int) -> Optional[MatEntry]:
        if self.kind == MatchKind.EXACT:
            return self._exact.get(value)
        if self.kind == MatchKind.LPM:
            for plen in self._lpm_lengths:
                entry = self._lpm[plen].get(value >> (self.width - plen))
                if entry is not None:
                    return entry
            return None
        for entry in self._ordered:
            if entry.matches(value, self.width):
                return entry
        return None

    def apply(self, entry: MatEntry, op: TableOp):
        """Mutate the table; entries are keyed by ``MatEntry.key``."""
        problem = entry.problem(self.width)
        if entry.kind != self.kind:
            problem = f"{entry.kind.value} entry in {self.kind.value} table"
        if problem and op != TableOp.DELETE:
            raise MalformedEntry(problem)
        entries = list(self.entries)
        index = next((i for i, e in enumerate(entries) if e.key == entry.key), None)
        if op == TableOp.ADD:
            if index is not None:
                if self.kind == MatchKind.EXACT:
                    raise DuplicateExactKey(f"exact key {entry.value:#x} already present")
                raise DuplicateEntry(f"{self.kind.value} key already present")
            entries.append(entry)
        elif index is None:
            raise NoSuchEntry(f"no {self.kind.value} entry with this key")
        elif op == TableOp.MODIFY:
            entries[index] = entry
        else:
            del entries[index]
        self.entries = entries
        self._reindex()


def lookup(entries: Sequence[MatEntry], value: int, width: int) -> Optional[MatEntry]:
    """Best entry for ``value`` among ``entries`` (all of one kind), or None on miss.

    exact: key equality; lpm: longest matching prefix; ternary and range:
    highest priority among matching entries, earliest added on ties.
    """
    if not entries:
        return None
    return MatchTable(entries[0].kind, width, entries).lookup(value)


@dataclass
class TwoRateMeter:
    """Two-rate three-color marker, color-blind mode.

    Rates are bytes per second, bursts in bytes. Bucket levels are kept in
    byte-nanoseconds-per-second units so refill arithmetic stays exact.
    """

    cir: int = 0
    cbs: int = 0
    pir: int = 0
    pbs: int = 0
    tc: int = -1
    tp: int = -1
    last_ns: Optional[int] = None
    last_color: Optional[Color] = None

    def __post_init__(self):
        if self.tc < 0:
            self.tc = self.cbs * NS_PER_SECOND
        if self.tp < 0:
            self.tp = self.pbs * NS_PER_SECOND

    def configure(self, cir: int, cbs: int, pir: int, pbs: int):
        if min(cir, cbs, pir, pbs) < 0 or pir < cir:
            raise ValueError("meter rates and bursts must be non-negative with pir >= cir")
        self.cir, self.cbs, self.pir, self.pbs = cir, cbs, pir, pbs
        self.tc = cbs * NS_PER_SECOND
        self.tp = pbs * NS_PER_SECOND
        self.last_ns = None

    def execute(self, nbytes: int, now: int) -> Color:
        if self.last_ns is not None and now > self.last_ns:
            elapsed = now - self.last_ns
            self.tc = min(self.cbs * NS_PER_SECOND, self.tc + elapsed * self.cir)
            self.tp = min(self.pbs * NS_PER_SECOND, self.tp + elapsed * self.pir)
        self.last_ns = now if self.last_ns is None else max(self.last_ns, now)
        need = nbytes * NS_PER_SECOND
        if self.tp < need:
            color = Color.RED
        elif self.tc < need:
            self.tp -= need
            color = Color.YELLOW
        else:
            self.tp -= need
            self.tc -= need
            color = Color.GREEN
        self.last_color = color
        return color


class StatefulStore:
    """Counters, registers and meters shared by the match-action stages."""

    def __init__(self):
        self.counters: Dict[str, int] = {}
        self.registers: Dict[str, List[int]] = {}
        self.register_widths: Dict[str, int] = {}
        self.meters: Dict[str, List[TwoRateMeter]] = {}

    def declare_counter(self, name: str):
        self.counters[name] = 0

    def declare_register(self, name: str, size: int, width: int = 32):
        self.registers[name] = [0] * size
        self.register_widths[name] = width

    def declare_meter(self, name: str, size: int, cir=0, cbs=0, pir=0, pbs=0):
        self.meters[name] = [TwoRateMeter(cir, cbs, pir, pbs) for _ in range(size)]

    def knows(self, kind: str, name: str) -> bool:
        return name in {"counter": self.counters, "register": self.registers,
                        "meter": self.meters}[kind]

    def snapshot(self) -> tuple:
        """Value copy of all state, for equality checks."""
        return (
            dict(self.counters),
            {k: list(v) for k, v in self.registers.items()},
            {k: [(m.cir, m.cbs, m.pir, m.pbs, m.tc, m.tp, m.last_ns) for m in v]
             for k, v in self.meters.items()},
        )

    def counter_inc(self, name: str, by: int = 1):
        if name not in self.counters:
            raise NoSuchObject(f"no counter '{name}'")
        self.counters[name] = min(COUNTER_MAX, self.counters[name] + max(0, by))

    def _cell(self, table: Dict[str, list], kind: str, name: str, idx: int):
        cells = table.get(name)
        if cells is None:
            raise NoSuchObject(f"no {kind} '{name}'")
        if idx is None or not 0 <= idx < len(cells):
            raise IndexOutOfRange(f"{kind} '{name}' index {idx} outside 0..{len(cells) - 1}")
        return cells

    def register_read(self, name: str, idx: int) -> int:
        return self._cell(self.registers, "register", name, idx)[idx]

    def register_write(self, name: str, idx: int, value: int):
        cells = self._cell(self.registers, "register", name, idx)
        cells[idx] = value & ((1 << self.register_widths[name]) - 1)

    def meter(self, name: str, idx: int) -> TwoRateMeter:
        return self._cell(self.meters, "meter", name, idx)[idx]

    def cp_state_access(self, op: str, kind: str, name: str,
                        idx: Optional[int] = None, value=None):
        """Control-plane access to stateful objects.

        Counters are read-only from the control plane apart from ``reset``.

        Raises:
            NoSuchObject: Unknown object or unsupported operation on it.
            IndexOutOfRange: Index outside the declared size.
        """
        if kind == "counter":
            if name not in self.counters:
                raise NoSuchObject(f"no counter '{name}'")
            if op == "read":
                return self.counters[name]
            if op == "reset":
                self.counters[name] = 0
                return "ack"
            raise NoSuchObject("counters are read-only from the control plane")
        if kind == "register":
            if op == "read":
                return self.register_read(name, idx)
            if op == "write":
                self.register_write(name, idx, value)
                return "ack"
            if op == "reset":
                cells = self._cell(self.registers, "register", name, 0)
                cells[:] = [0] * len(cells)
                return "ack"
        if kind == "meter":
            if op == "reset":
                for cell in self._cell(self.meters, "meter", name, 0):
                    cell.configure(cell.cir, cell.cbs, cell.pir, cell.pbs)
                    cell.last_color = None
                return "ack"
            meter = self.meter(name, idx)
            if op == "read":
                return {
                    "color": None if meter.last_color is None else meter.last_color.name.lower(),
                    "committed_tokens": meter.tc // NS_PER_SECOND,
                    "peak_tokens": meter.tp // NS_PER_SECOND,
                }
            if op == "write":
                meter.configure(*value)
                return "ack"
        raise NoSuchObject(f"unsupported {op} on {kind} '{name}'")


@dataclass
class MatNode:
    """One match-action node: the matched field, its table and its edges."""

    node_id: str
    field_id: str
    kind: MatchKind
    width: int
    entries: List[MatEntry] = field(default_factory=list)
    default_actions: List[ActionCall] = field(default_factory=list)
    next_hit: Optional[str] = None
    next_miss: Optional[str] = None
    miss_threshold: Optional[int] = None
    hits: int = 0
    misses: int = 0

    def __post_init__(self):
        self.table = MatchTable(self.kind, self.width, self.entries)
        self.entries = self.table.entries


@dataclass
class MauGraph:
    """Match-action graph. ``start`` of None is the empty graph."""

    nodes: Dict[str, MatNode] = field(default_factory=dict)
    start: Optional[str] = None


Notifier = Callable[[str, dict], None]


def run_mau(
    phv: PHV,
    graph: MauGraph,
    store: StatefulStore,
    stage: Stage = Stage.INGRESS,
    now: Optional[int] = None,
    notify: Optional[Notifier] = None,
) -> PHV:
    """Run ``phv`` through the match-action graph and return the result.

    A drop action halts the graph and marks the PHV dropped with reason
    ``mat_drop``.

    Raises:
        InvalidFieldRead: A matched or referenced field is invalid.
        EgressPortWriteInEgressStage: Egress decision written in the egress stage.
    """
    out = phv.clone()
    clock = out.metadata.get("arrival_time", 0) if now is None else now
    node_id = graph.start
    visited = 0
    while node_id is not None:
        visited += 1
        if visited > len(graph.nodes):
            raise MauLoop(f"match-action graph loops at '{node_id}'")
        node = graph.nodes[node_id]
        entry = node.table.lookup(out.read(node.field_id))
        if entry is None:
            node.misses += 1
            if node.miss_threshold is not None and node.misses == node.miss_threshold and notify:
                notify("table_miss_threshold", {"node": node.node_id, "misses": node.misses})
            actions = node.default_actions
        else:
            node.hits += 1
            actions = entry.actions
        for action in actions:
            _execute(action, out, store, stage, clock)
            if out.dropped:
                return out
        node_id = node.next_hit if entry is not None else node.next_miss
    return out


def _execute(action: ActionCall, phv: PHV, store: StatefulStore, stage: Stage, now: int):
    name, args = action.primitive, action.args
    if stage == Stage.EGRESS and (name in EGRESS_FORBIDDEN or "egress_port" in action.writes()):
        raise EgressPortWriteInEgressStage(f"'{action}' changes the egress decision in the egress stage")

    if name == "no_op":
        return
    if name == "drop":
        phv.drop_reason = "mat_drop"
    elif name == "set_field":
        phv.write(args[0], args[1].evaluate(phv))
    elif name == "copy_field":
        phv.write(args[0], phv.read(args[1]))
    elif name in ("add", "sub", "and", "or", "xor", "shl", "shr", "shift"):
        current, operand = phv.read(args[0]), args[1].evaluate(phv)
        phv.write(args[0], _arith(name, current, operand, phv.width(args[0])))
    elif name == "set_egress_port":
        phv.write("egress_port", args[0].evaluate(phv))
        phv.write("unicast_flag", 1)
        phv.invalidate("mcast_group")
    elif name == "set_mcast_group":
        phv.write("mcast_group", args[0].evaluate(phv))
        phv.write("unicast_flag", 0)
        phv.invalidate("egress_port")
    elif name == "counter_inc":
        store.counter_inc(args[0], args[1].evaluate(phv) if len(args) > 1 else 1)
    elif name == "register_read":
        phv.write(args[0], store.register_read(args[1], args[2].evaluate(phv)))
    elif name == "register_write":
        store.register_write(args[0], args[1].evaluate(phv), args[2].evaluate(phv))
    elif name == "meter_exec":
        nbytes = (phv.data_buffer.length + 7) // 8
        color = store.meter(args[0], args[1].evaluate(phv)).execute(nbytes, now)
        phv.write(args[2], int(color))
    elif name == "set_sched_order":
        phv.write("scheduling_order", args[0].evaluate(phv))


def _arith(name: str, current: int, operand: int, width: int) -> int:
    if name == "add":
        return current + operand
    if name == "sub":
        return current - operand
    if name == "and":
        return current & operand
    if name == "or":
        return current | operand
    if name == "xor":
        return current ^ operand
    # shl and shift move left for positive amounts, shr moves right; a negative
    # amount reverses the direction. Shifting out the whole field yields 0.
    amount = -operand if name == "shr" else operand
    if abs(amount) >= width:
        return 0
    return current << amount if amount >= 0 else current >> -amount


def cp_mat_op(graph: MauGraph, node_id: str, entry: MatEntry, op: TableOp,
              catalog: Optional[FieldCatalog] = None, store: Optional[StatefulStore] = None,
              stage: Stage = Stage.INGRESS) -> MauGraph:
    """Add, modify or delete one entry of a MAT node between packets.

    With ``catalog`` and ``store`` given, the entry's actions get the same
    reference checks as at load time.

    Raises:
        NoSuchNode: Unknown node.
        DuplicateExactKey: Exact key added twice.
        MalformedEntry: Entry of the wrong kind or not fitting the field.
        NoSuchEntry: Modify/delete of an absent key.
        UnresolvedReference: An action names an undeclared field or state object.
        EgressPortWriteInEgressStage: An egress-stage action changes the egress decision.
    """
    node = graph.nodes.get(node_id)
    if node is None:
        raise NoSuchNode(f"no MAT node '{node_id}'")
    if op != TableOp.DELETE:
        _check_actions(entry.actions, catalog, store, stage, node_id)
    node.table.apply(entry, op)
    node.entries = node.table.entries
    logger.info("table %s %s on %s", op.value, entry.key, node_id)
    return graph


def cp_set_default(graph: MauGraph, node_id: str, actions: List[ActionCall],
                   catalog: Optional[FieldCatalog] = None, store: Optional[StatefulStore] = None,
                   stage: Stage = Stage.INGRESS) -> MauGraph:
    node = graph.nodes.get(node_id)
    if node is None:
        raise NoSuchNode(f"no MAT node '{node_id}'")
    _check_actions(actions, catalog, store, stage, node_id)
    node.default_actions = list(actions)
    return graph


def validate_actions(actions: Sequence[ActionCall], catalog: FieldCatalog,
                     store: StatefulStore, stage: Stage, where: str) -> List[Diagnostic]:
    found = []
    for action in actions:
        signature = SIGNATURES[action.primitive]
        if stage == Stage.EGRESS and (action.primitive in EGRESS_FORBIDDEN
                                      or "egress_port" in action.writes()):
            found.append(Diagnostic(
                "EgressPortWriteInEgressStage", f"'{action}' changes the egress decision", where))
        for kind, arg in zip(signature, action.args):
            if kind in ("counter", "register", "meter") and not store.knows(kind, arg):
                found.append(Diagnostic(
                    "UnresolvedReference", f"{kind} '{arg}' is not declared", where))
        for field_id in action.reads() + action.writes():
            if not catalog.knows(field_id):
                found.append(Diagnostic(
                    "UnresolvedReference", f"'{action}' references unknown field '{field_id}'", where))
    return found


_DIAGNOSTIC_ERRORS = {
    "UnresolvedReference": UnresolvedReference,
    "EgressPortWriteInEgressStage": EgressPortWriteInEgressStage,
}


def _check_actions(actions: Sequence[ActionCall], catalog: Optional[FieldCatalog],
                   store: Optional[StatefulStore], stage: Stage, where: str):
    if catalog is None or store is None:
        return
    found = validate_actions(actions, catalog, store, stage, where)
    if found:
        error = _DIAGNOSTIC_ERRORS.get(found[0].code, MalformedAction)
        raise error("; ".join(d.message for d in found))


def validate_mau(graph: MauGraph, catalog: FieldCatalog, store: StatefulStore,
                 stage: Stage) -> List[Diagnostic]:
    """Static checks: fields, entries, action references, egress guard, terminal reachability."""
    found: List[Diagnostic] = []
    where = f"mau_{stage.value}"
    if graph.start is not None and graph.start not in graph.nodes:
        found.append(Diagnostic("UnknownNode", f"start node '{graph.start}' does not exist", where))
        return found
    for node_id, node in graph.nodes.items():
        at = f"{where}.{node_id}"
        if not catalog.knows(node.field_id):
            found.append(Diagnostic("UnresolvedReference", f"matches unknown field '{node.field_id}'", at))
        for target in (node.next_hit, node.next_miss):
            if target is not None and target not in graph.nodes:
                found.append(Diagnostic("UnknownNode", f"edge to unknown node '{target}'", at))
        seen = set()
        for entry in node.entries:
            problem = entry.problem(node.width)
            if entry.kind != node.kind:
                problem = f"{entry.kind.value} entry in {node.kind.value} table"
            if problem:
                found.append(Diagnostic("MalformedEntry", problem, at))
            if entry.key in seen:
                code = "DuplicateExactKey" if node.kind == MatchKind.EXACT else "DuplicateEntry"
                found.append(Diagnostic(code, f"key {entry.key[1:]} listed twice", at))
            seen.add(entry.key)
            found.extend(validate_actions(entry.actions, catalog, store, stage, at))
        found.extend(validate_actions(node.default_actions, catalog, store, stage, at))

    # every node must reach the terminal without revisiting a node
    state: Dict[str, int] = {}

    def visit(node_id: str) -> bool:
        if node_id is None or node_id not in graph.nodes:
            return True
        if state.get(node_id) == 1:
            found.append(Diagnostic("CycleInGraph", f"cycle through '{node_id}'", where))
            return False
        if state.get(node_id) == 2:
            return True
        state[node_id] = 1
        node = graph.nodes[node_id]
        ok = visit(node.next_hit) and visit(node.next_miss)
        state[node_id] = 2
        return ok

    for node_id in sorted(graph.nodes):
        if not visit(node_id):
            break
    return found
