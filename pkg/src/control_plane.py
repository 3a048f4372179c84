"""Control-plane scripts: timestamped commands applied to a running device.

Each script line is ``<timestamp_ns> <verb> <args...>``. Commands mutate
tables and parameters between packet events, read state back, and the device
queues notifications (buffer full, table miss threshold) for the controller.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

from buffer_engine import BufferRule
from deparser_engine import DeparseNode, cp_set_deparse
from match_action import ActionCall, MatchKind, NoSuchNode, Stage, cp_mat_op, cp_set_default, parse_match
from parser_engine import ParseTransition, cp_update_parse_table
from phv import AVSError, BitBuffer, TableOp, parse_value
from scheduler import sds_inspect

logger = logging.getLogger(__name__)

VERBS = ("table", "bpt", "bct", "mgt", "sched", "deparse", "parse", "read", "write", "reset")


class ParseError(AVSError):
    """Raised for a script line that is not a well-formed command."""


@dataclass(frozen=True)
class CpCommand:
    at: int
    verb: str
    args: Tuple[str, ...]
    line_no: int = 0

    def __str__(self) -> str:
        return " ".join((str(self.at), self.verb) + self.args)


@dataclass(frozen=True)
class Notification:
    at: int
    kind: str
    payload: dict = field(default_factory=dict)


@dataclass
class CpScript:
    commands: List[CpCommand] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)


def parse_script(lines: Union[str, Sequence[str]]) -> CpScript:
    """Parse script text. Bad lines become errors; the rest still run."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    script = CpScript()
    last = 0
    for line_no, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            command = parse_command(text, line_no)
        except ParseError as exc:
            script.errors.append(f"ParseError: line {line_no}: {exc}")
            continue
        if command.at < last:
            script.errors.append(
                f"ParseError: line {line_no}: timestamp {command.at} is before {last}, skipped")
            continue
        last = command.at
        script.commands.append(command)
    return script


def read_script(path: Union[str, Path]) -> CpScript:
    return parse_script(Path(path).read_text())


def parse_command(text: str, line_no: int = 0) -> CpCommand:
    parts = text.split()
    if len(parts) < 2:
        raise ParseError(f"expected '<timestamp_ns> <verb> <args>', got '{text}'")
    try:
        at = int(parts[0])
    except ValueError:
        raise ParseError(f"bad timestamp '{parts[0]}'") from None
    if at < 0:
        raise ParseError(f"negative timestamp {at}")
    if parts[1] not in VERBS:
        raise ParseError(f"unknown verb '{parts[1]}'")
    return CpCommand(at, parts[1], tuple(parts[2:]), line_no)


def parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "t", "1", "on", "yes"):
        return True
    if lowered in ("false", "f", "0", "off", "no"):
        return False
    raise ParseError(f"not a boolean: '{text}'")


def parse_actions(tokens: Sequence[str]) -> List[ActionCall]:
    """Actions separated by ``;``, e.g. ``counter_inc c ; set_egress_port 2``."""
    actions = []
    current: List[str] = []
    for token in list(tokens) + [";"]:
        pieces = token.split(";")
        for index, piece in enumerate(pieces):
            if piece:
                current.append(piece)
            if index < len(pieces) - 1 and current:
                actions.append(ActionCall.build(current[0], current[1:]))
                current = []
    return actions


def _need(args: Sequence[str], count: int, usage: str):
    if len(args) < count:
        raise ParseError(f"usage: {usage}")


def _integer(text: str) -> int:
    try:
        return parse_value(text)
    except ValueError:
        raise ParseError(f"not an integer: '{text}'") from None


def apply(cmd: CpCommand, device) -> Any:
    """Apply one command to ``device``; returns ``"ack"`` or the value read.

    Raises:
        ParseError: Malformed arguments.
        AVSError: Any component error, surfaced unchanged.
    """
    handler = _HANDLERS[cmd.verb]
    result = handler(list(cmd.args), device)
    logger.info("cp t=%d %s -> %s", cmd.at, cmd, result)
    return result


def _table(args, device):
    _need(args, 2, "table add|mod|del|default <node> ...")
    op_text, node_id = args[0], args[1]
    graph, stage = _mau_graph_for(device, node_id)
    checks = {"catalog": device.dpp.catalog, "store": device.dpp.store, "stage": stage}
    if op_text == "default":
        return _ack(cp_set_default(graph, node_id, parse_actions(args[2:]), **checks))
    _need(args, 4, "table add|mod|del <node> <kind> <key> [prio=N] [actions]")
    node = graph.nodes[node_id]
    try:
        kind = MatchKind(args[2])
    except ValueError:
        raise ParseError(f"unknown match kind '{args[2]}'") from None
    rest = args[4:]
    priority = 0
    if rest and rest[0].startswith("prio="):
        priority = _integer(rest[0][5:])
        rest = rest[1:]
    entry = parse_match(kind, args[3], node.width, priority, parse_actions(rest))
    return _ack(cp_mat_op(graph, node_id, entry, _op(op_text), **checks))


def _mau_graph_for(device, node_id: str):
    for graph, stage in ((device.dpp.mau_ingress, Stage.INGRESS), (device.dpp.mau_egress, Stage.EGRESS)):
        if node_id in graph.nodes:
            return graph, stage
    raise NoSuchNode(f"no MAT node '{node_id}'")


def _op(text: str) -> TableOp:
    try:
        return TableOp.parse(text)
    except ValueError:
        raise ParseError(f"unknown table operation '{text}'") from None


def _engine(device, name: str):
    engines = {"be1": device.be1, "be2": device.be2, "bre": device.bre.buffers}
    if engines.get(name) is None:
        raise ParseError(f"buffer engine '{name}' is not present")
    return engines[name]


def _bpt(args, device):
    _need(args, 3, "bpt set [be1|be2|bre] <id> <param> <value> | bpt map <port> <id>")
    if args[0] == "map":
        return _ack(_engine(device, "be1").cp_map_port(_integer(args[1]), _integer(args[2])))
    if args[0] != "set":
        raise ParseError(f"unknown bpt operation '{args[0]}'")
    rest = args[1:]
    name = "be2"
    if rest[0] in ("be1", "be2", "bre"):
        name, rest = rest[0], rest[1:]
    _need(rest, 3, "bpt set [be1|be2|bre] <id> <param> <value>")
    param = rest[1]
    value = parse_bool(rest[2]) if param in ("rx", "tx") else _integer(rest[2])
    return _ack(_engine(device, name).cp_set_bpt(_integer(rest[0]), param, value))


def _bct(args, device):
    _need(args, 3, "bct add|mod|del <field> <value> [<buffer_id> [prio=N]]")
    op = _op(args[0])
    buffer_id, priority = 0, 0
    if op != TableOp.DELETE:
        _need(args, 4, "bct add|mod <field> <value> <buffer_id> [prio=N]")
        buffer_id = _integer(args[3])
        if len(args) > 4:
            priority = _integer(args[4].removeprefix("prio="))
    rule = BufferRule(args[1], _integer(args[2]), buffer_id, priority)
    return _ack(_engine(device, "be2").cp_update_bct(rule, op))


def _mgt(args, device):
    _need(args, 2, "mgt set <group> <port,port,...> | mgt del <group>")
    if args[0] not in ("set", "del"):
        raise ParseError(f"unknown mgt operation '{args[0]}'")
    group_id = _integer(args[1])
    ports = [_integer(p) for token in args[2:] for p in token.split(",") if p]
    return _ack(device.bre.cp_set_mgt(group_id, ports, args[0]))


def _sched(args, device):
    _need(args, 3, "sched set <key> <value>")
    if args[0] != "set":
        raise ParseError(f"unknown sched operation '{args[0]}'")
    return _ack(device.sched.cp_set_sched(args[1], args[2]))


def _deparse_node(index: int, token: str) -> DeparseNode:
    if token.startswith("const="):
        value, _, bits = token[6:].partition("/")
        if not bits:
            raise ParseError(f"constant '{token}' needs a width, e.g. const=0x8100/16")
        return DeparseNode(f"const{index}", BitBuffer(_integer(value), _integer(bits)))
    if token.endswith("!"):
        return DeparseNode(f"n{index}", token[:-1], emit_if_valid=False)
    return DeparseNode(f"n{index}", token)


def _deparse(args, device):
    _need(args, 2, "deparse set ingress|egress <node> ...")
    if args[0] != "set" or args[1] not in ("ingress", "egress"):
        raise ParseError("usage: deparse set ingress|egress <node> ...")
    graph = device.dpp.deparse_ingress if args[1] == "ingress" else device.dpp.deparse_egress
    nodes = [_deparse_node(i, token) for i, token in enumerate(args[2:])]
    return _ack(cp_set_deparse(graph, nodes, device.dpp.catalog))


def _parse(args, device):
    _need(args, 4, "parse add|mod|del ingress|egress <node> <value|*> [<next>]")
    op = _op(args[0])
    if args[1] not in ("ingress", "egress"):
        raise ParseError(f"unknown parser stage '{args[1]}'")
    graph = device.dpp.parse_ingress if args[1] == "ingress" else device.dpp.parse_egress
    value = None if args[3] == "*" else _integer(args[3])
    if op != TableOp.DELETE:
        _need(args, 5, "parse add|mod ingress|egress <node> <value|*> <next>")
    next_node = args[4] if len(args) > 4 else ""
    return _ack(cp_update_parse_table(graph, args[2], ParseTransition(value, next_node), op,
                                      device.dpp.catalog))


def _read(args, device):
    _need(args, 1, "read counter|register|meter|sds ...")
    if args[0] == "sds":
        snapshot = sds_inspect(device.sched)
        return {"occupancy": {str(p): n for p, n in snapshot.occupancy.items()},
                "algorithm": snapshot.algorithm, "capacity": snapshot.capacity}
    _need(args, 2, "read counter <name> | read register|meter <name> <index>")
    index = _integer(args[2]) if len(args) > 2 else None
    if index is None and args[0] in ("register", "meter"):
        raise ParseError(f"read {args[0]} needs an index")
    return device.dpp.store.cp_state_access("read", args[0], args[1], index)


def _write(args, device):
    _need(args, 4, "write register <name> <index> <value> | write meter <name> <index> <cir> <cbs> <pir> <pbs>")
    kind, name, index = args[0], args[1], _integer(args[2])
    if kind == "meter":
        _need(args, 7, "write meter <name> <index> <cir> <cbs> <pir> <pbs>")
        value: Any = tuple(_integer(v) for v in args[3:7])
    else:
        value = _integer(args[3])
    try:
        return device.dpp.store.cp_state_access("write", kind, name, index, value)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def _reset(args, device):
    _need(args, 2, "reset counter|register|meter <name>")
    return device.dpp.store.cp_state_access("reset", args[0], args[1])


def _ack(_result) -> str:
    return "ack"


_HANDLERS = {
    "table": _table,
    "bpt": _bpt,
    "bct": _bct,
    "mgt": _mgt,
    "sched": _sched,
    "deparse": _deparse,
    "parse": _parse,
    "read": _read,
    "write": _write,
    "reset": _reset,
}


def poll_notifications(device) -> List[Notification]:
    """Drain and return the device's pending notifications."""
    pending = list(device.notifications)
    device.notifications.clear()
    return pending


def format_notification(note: Notification) -> str:
    payload = " ".join(f"{k}={v}" for k, v in sorted(note.payload.items()))
    return f"{note.at} {note.kind} {payload}".rstrip()


def describe_error(cmd: Optional[CpCommand], exc: Exception) -> str:
    where = f"line {cmd.line_no}: " if cmd is not None and cmd.line_no else ""
    return f"{type(exc).__name__}: {where}{exc}"
