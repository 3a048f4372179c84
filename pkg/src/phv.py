"""Packet header vector (PHV) core.

Bit buffers, header and metadata field definitions, the PHV container that
flows through every pipeline component, and the comparator that turns any
set of PHVs into a totally ordered set.
"""

import enum
import ipaddress
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from config import config

logger = logging.getLogger(__name__)

# Length sentinel for header fields whose width is resolved while parsing.
VARIABLE = "variable"


class AVSError(Exception):
    """Base exception for all simulator errors."""

    drop_reason: str = "error"


class InvalidFieldRead(AVSError):
    """Raised when a field is read while it is not valid in the PHV."""

    drop_reason = "invalid_field_read"


class UnknownField(AVSError):
    """Raised when a field id is not declared in the loaded program."""

    drop_reason = "unknown_field"


class OutOfBounds(AVSError):
    """Raised when a bit range falls outside a buffer."""

    drop_reason = "out_of_bounds"


class PacketTooLong(AVSError):
    """Raised when a packet exceeds the configured maximum length."""

    drop_reason = "packet_too_long"


class EgressPortWriteInEgressStage(AVSError):
    """Raised when egress_port is written after the PHV entered the egress stage."""

    drop_reason = "egress_port_locked"


class DuplicateSequence(AVSError):
    """Raised when two distinct PHVs carry the same sequence number."""


class NoSuchEntry(AVSError):
    """Raised when a table entry to modify or delete does not exist."""


class DuplicateEntry(AVSError):
    """Raised when adding an entry whose key already exists."""


class UnresolvedReference(AVSError):
    """Raised when an entry names a buffer, field or object that does not exist."""


class TableOp(str, enum.Enum):
    """Control-plane table mutation kinds."""

    ADD = "add"
    MODIFY = "modify"
    DELETE = "delete"

    @classmethod
    def parse(cls, text: str) -> "TableOp":
        aliases = {"mod": cls.MODIFY, "del": cls.DELETE}
        return aliases.get(text) or cls(text)


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding. Validators return lists of these."""

    code: str
    message: str
    where: str = ""

    def __str__(self) -> str:
        location = f" [{self.where}]" if self.where else ""
        return f"{self.code}: {self.message}{location}"


@dataclass(frozen=True)
class BitBuffer:
    """Immutable big-endian bit string.

    ``value`` holds the bits as an integer whose most significant bit is
    bit 0 of the buffer; ``length`` is the number of bits.
    """

    value: int = 0
    length: int = 0

    def __post_init__(self):
        if self.length < 0:
            raise OutOfBounds(f"negative buffer length {self.length}")
        if self.value < 0 or self.value >> self.length:
            raise OutOfBounds(
                f"value does not fit in {self.length} bits")

    def __len__(self) -> int:
        return self.length

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitBuffer":
        return cls(int.from_bytes(data, "big"), len(data) * 8)

    @classmethod
    def from_hex(cls, text: str) -> "BitBuffer":
        return cls.from_bytes(bytes.fromhex(text))

    @classmethod
    def concat(cls, parts: Iterable["BitBuffer"]) -> "BitBuffer":
        value, length = 0, 0
        for part in parts:
            value = (value << part.length) | part.value
            length += part.length
        return cls(value, length)

    @property
    def is_byte_aligned(self) -> bool:
        return self.length % 8 == 0

    def to_bytes(self) -> bytes:
        """Serialize to bytes, padding trailing zero bits up to a byte boundary."""
        pad = (-self.length) % 8
        return (self.value << pad).to_bytes((self.length + pad) // 8, "big")

    def hex(self) -> str:
        return self.to_bytes().hex()

    def slice(self, start_bit: int, len_bits: int) -> "BitBuffer":
        if len_bits == 0 and 0 <= start_bit <= self.length:
            return BitBuffer(0, 0)
        return BitBuffer(slice_bits(self, start_bit, len_bits), len_bits)

    def tail(self, start_bit: int) -> "BitBuffer":
        """Bits from ``start_bit`` to the end of the buffer."""
        return self.slice(start_bit, self.length - start_bit)


def parse_value(text) -> int:
    """Parse a field value literal.

    Accepts ints, decimal/0x/0b strings, dotted-quad IPv4 addresses and
    colon-separated MAC addresses.
    """
    if isinstance(text, bool):
        raise ValueError(f"not a field value: {text!r}")
    if isinstance(text, int):
        return text
    text = str(text).strip().replace("_", "")
    if "." in text:
        return int(ipaddress.IPv4Address(text))
    if ":" in text:
        return int(text.replace(":", ""), 16)
    return int(text, 0)


def slice_bits(buf: BitBuffer, start_bit: int, len_bits: int) -> int:
    """Read ``len_bits`` bits starting at ``start_bit``, most significant first.

    Raises:
        OutOfBounds: If the range is empty, negative or extends past the buffer.
    """
    if len_bits < 1:
        raise OutOfBounds(f"slice of {len_bits} bits; at least one bit is needed")
    if start_bit < 0 or start_bit + len_bits > buf.length:
        raise OutOfBounds(
            f"bits [{start_bit}, {start_bit + len_bits}) outside "
            f"{buf.length}-bit buffer")
    shift = buf.length - start_bit - len_bits
    return (buf.value >> shift) & ((1 << len_bits) - 1)


@dataclass(frozen=True)
class HeaderFieldDef:
    """A header field: unique id, nominal start offset and length in bits.

    Variable-length fields use ``length_bits=VARIABLE`` and take their
    length from the value of a previously parsed field ``length_from``,
    multiplied by ``length_scale`` bits.
    """

    id: str
    start_bit: int
    length_bits: Union[int, str]
    length_from: Optional[str] = None
    length_scale: int = 8

    @property
    def is_variable(self) -> bool:
        return self.length_bits == VARIABLE


class MetaType(str, enum.Enum):
    UINT = "unsigned-int"
    TIMESTAMP = "timestamp-ns"
    PORT = "port-id"
    ENUM = "enum"


@dataclass(frozen=True)
class MetadataFieldDef:
    """A metadata field: unique id and semantic type."""

    id: str
    kind: MetaType
    width: Optional[int] = None
    variants: Tuple[str, ...] = ()

    @property
    def bit_width(self) -> int:
        if self.kind == MetaType.TIMESTAMP:
            return 64
        if self.kind == MetaType.PORT:
            return 16
        if self.kind == MetaType.ENUM:
            return max(1, (len(self.variants) - 1).bit_length())
        return self.width or 32


STANDARD_METADATA: Tuple[MetadataFieldDef, ...] = (
    MetadataFieldDef("ingress_port", MetaType.PORT),
    MetadataFieldDef("arrival_time", MetaType.TIMESTAMP),
    MetadataFieldDef("egress_port", MetaType.PORT),
    MetadataFieldDef("unicast_flag", MetaType.UINT, width=1),
    MetadataFieldDef("mcast_group", MetaType.UINT, width=16),
    MetadataFieldDef("scheduling_order", MetaType.UINT, width=32),
    MetadataFieldDef("payload_offset", MetaType.UINT, width=32),
    MetadataFieldDef("copy_index", MetaType.UINT, width=16),
)


class FieldCatalog:
    """The header definition plus metadata definitions of a loaded program."""

    def __init__(
        self,
        headers: Sequence[HeaderFieldDef] = (),
        metadata: Sequence[MetadataFieldDef] = (),
    ):
        self.header_list = list(headers)
        self.metadata_list = list(STANDARD_METADATA) + list(metadata)
        self.header: Dict[str, HeaderFieldDef] = {
            h.id: h for h in self.header_list}
        self.metadata: Dict[str, MetadataFieldDef] = {
            m.id: m for m in self.metadata_list}

    def diagnostics(self) -> List[Diagnostic]:
        """Uniqueness and header/metadata disjointness checks."""
        found = []
        seen = set()
        for h in self.header_list:
            if h.id in seen:
                found.append(Diagnostic(
                    "DuplicateField", f"header field '{h.id}' declared twice", "header_definition"))
            seen.add(h.id)
            if h.is_variable:
                if h.length_from is None:
                    found.append(Diagnostic(
                        "MalformedField", f"variable field '{h.id}' has no length_from", "header_definition"))
                elif h.length_from not in self.header:
                    found.append(Diagnostic(
                        "UnresolvedReference", f"'{h.id}' takes its length from unknown field '{h.length_from}'",
                        "header_definition"))
            elif not isinstance(h.length_bits, int) or h.length_bits <= 0:
                found.append(Diagnostic(
                    "MalformedField", f"field '{h.id}' has non-positive length", "header_definition"))
            if h.start_bit < 0:
                found.append(Diagnostic(
                    "MalformedField", f"field '{h.id}' has negative start_bit", "header_definition"))
        meta_seen = set()
        for m in self.metadata_list:
            if m.id in meta_seen:
                found.append(Diagnostic(
                    "DuplicateField", f"metadata field '{m.id}' declared twice", "metadata_extension"))
            meta_seen.add(m.id)
        for overlap in sorted(seen & meta_seen):
            found.append(Diagnostic(
                "DuplicateField", f"'{overlap}' is both a header and a metadata field", "metadata_extension"))
        return found

    def knows(self, field_id: str) -> bool:
        return field_id in self.header or field_id in self.metadata

    def is_header(self, field_id: str) -> bool:
        return field_id in self.header

    def static_width(self, field_id: str) -> Optional[int]:
        """Declared width, or None for variable-length header fields."""
        if field_id in self.header:
            h = self.header[field_id]
            return None if h.is_variable else h.length_bits
        if field_id in self.metadata:
            return self.metadata[field_id].bit_width
        raise UnknownField(f"unknown field '{field_id}'")


DEFAULT_CATALOG = FieldCatalog()


@dataclass
class PHV:
    """Packet header vector: parsed header fields, metadata and raw bits."""

    header_fields: Dict[str, int]
    header_widths: Dict[str, int]
    metadata: Dict[str, int]
    data_buffer: BitBuffer
    validity: Dict[str, bool]
    seq: int
    catalog: FieldCatalog = field(default=DEFAULT_CATALOG, repr=False, compare=False)
    drop_reason: Optional[str] = None
    egress_locked: bool = False
    # component name -> [entry_ts, exit_ts]
    timestamps: Dict[str, List[Optional[int]]] = field(default_factory=dict)

    @property
    def dropped(self) -> bool:
        return self.drop_reason is not None

    def is_valid(self, field_id: str) -> bool:
        if field_id in self.catalog.header:
            return self.validity.get(field_id, False)
        return field_id in self.metadata

    def read(self, field_id: str) -> int:
        """Read a field value.

        Raises:
            UnknownField: If the field is not declared.
            InvalidFieldRead: If the field is not valid in this PHV.
        """
        if not self.catalog.knows(field_id):
            raise UnknownField(f"unknown field '{field_id}'")
        if not self.is_valid(field_id):
            raise InvalidFieldRead(f"field '{field_id}' read while invalid")
        if field_id in self.catalog.header:
            return self.header_fields[field_id]
        return self.metadata[field_id]

    def get(self, field_id: str) -> Optional[int]:
        """Like read, but None when the field is invalid or unset."""
        if not self.catalog.knows(field_id) or not self.is_valid(field_id):
            return None
        return self.read(field_id)

    def width(self, field_id: str) -> int:
        if field_id in self.header_widths:
            return self.header_widths[field_id]
        width = self.catalog.static_width(field_id)
        if width is None:
            raise InvalidFieldRead(
                f"variable-length field '{field_id}' has no resolved width")
        return width

    def set_header(self, field_id: str, value: int, width: int):
        """Store a parsed header field with its resolved width."""
        self.header_fields[field_id] = value
        self.header_widths[field_id] = width
        self.validity[field_id] = True

    def write(self, field_id: str, value: int):
        """Write a field, wrapping the value modulo the field width.

        Writing a header field marks it valid.
        """
        if not self.catalog.knows(field_id):
            raise UnknownField(f"unknown field '{field_id}'")
        if field_id == "egress_port" and self.egress_locked:
            raise EgressPortWriteInEgressStage(
                f"egress_port is locked for PHV seq={self.seq}")
        value &= (1 << self.width(field_id)) - 1
        if field_id in self.catalog.header:
            self.set_header(field_id, value, self.width(field_id))
        else:
            self.metadata[field_id] = value

    def invalidate(self, field_id: str):
        if field_id in self.catalog.header:
            self.validity[field_id] = False
        else:
            self.metadata.pop(field_id, None)

    def clone(self) -> "PHV":
        return PHV(
            header_fields=dict(self.header_fields),
            header_widths=dict(self.header_widths),
            metadata=dict(self.metadata),
            data_buffer=self.data_buffer,
            validity=dict(self.validity),
            seq=self.seq,
            catalog=self.catalog,
            drop_reason=self.drop_reason,
            egress_locked=self.egress_locked,
            timestamps={k: list(v) for k, v in self.timestamps.items()},
        )

    def stamp_entry(self, component: str, t: int):
        self.timestamps[component] = [t, None]

    def stamp_exit(self, component: str, t: int):
        self.timestamps[component][1] = t


def make_phv(
    pkt: BitBuffer,
    port: int,
    t: int,
    seq: int,
    catalog: Optional[FieldCatalog] = None,
    max_packet_length_bits: Optional[int] = None,
) -> PHV:
    """Create the PHV for a packet received on ``port`` at time ``t``.

    Raises:
        PacketTooLong: If the packet exceeds the maximum length.
    """
    catalog = catalog or DEFAULT_CATALOG
    limit = max_packet_length_bits or config.MAX_PACKET_LENGTH_BITS
    if pkt.length > limit:
        raise PacketTooLong(f"{pkt.length}-bit packet exceeds {limit} bits")
    return PHV(
        header_fields={},
        header_widths={},
        metadata={"ingress_port": port, "arrival_time": t},
        data_buffer=pkt,
        validity={h: False for h in catalog.header},
        seq=seq,
        catalog=catalog,
    )


class Direction(str, enum.Enum):
    ASC = "asc"
    DESC = "desc"


class Ordering(enum.IntEnum):
    LESS = -1
    GREATER = 1


@dataclass(frozen=True)
class PhvOrderKey:
    """Lexicographic field chain with a final (arrival_time, ingress_port, seq) tiebreak."""

    fields: Tuple[Tuple[str, Direction], ...] = ()

    @classmethod
    def parse(cls, items: Sequence[str]) -> "PhvOrderKey":
        """Build from strings like ``"prio"`` or ``"prio:desc"``."""
        chain = []
        for item in items:
            name, _, direction = item.partition(":")
            chain.append((name, Direction(direction or "asc")))
        return cls(tuple(chain))

    def field_values(self, phv: PHV) -> tuple:
        """The field chain alone, DESC fields negated so smaller sorts first."""
        parts = []
        for field_id, direction in self.fields:
            value = phv.read(field_id)
            parts.append(-value if direction == Direction.DESC else value)
        return tuple(parts)

    @staticmethod
    def tiebreak(phv: PHV) -> tuple:
        return (phv.read("arrival_time"), phv.read("ingress_port"), phv.seq)

    def sort_key(self, phv: PHV) -> tuple:
        return self.field_values(phv) + self.tiebreak(phv)


def compare(a: PHV, b: PHV, key: PhvOrderKey) -> Ordering:
    """Strict total order of two PHVs under ``key``.

    Raises:
        InvalidFieldRead: If a key field is invalid in either PHV.
        DuplicateSequence: If both PHVs carry the same seq and tie on every field.
    """
    ka, kb = key.sort_key(a), key.sort_key(b)
    if ka < kb:
        return Ordering.LESS
    if ka > kb:
        return Ordering.GREATER
    raise DuplicateSequence(f"two PHVs share seq={a.seq}")


def sort_phvs(phvs: Iterable[PHV], key: PhvOrderKey) -> List[PHV]:
    return sorted(phvs, key=key.sort_key)
