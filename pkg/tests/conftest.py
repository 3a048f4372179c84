"""Shared fixtures for the simulator tests."""

import copy
import json
from pathlib import Path

import pytest

from dpp_io import load_dpp, parse_dpp
from phv import FieldCatalog, HeaderFieldDef, MetadataFieldDef, MetaType, BitBuffer, make_phv

ROOT = Path(__file__).resolve().parent.parent
PROGRAMS = ROOT / "programs"
FEATURES = ROOT / "features"

CANONICAL_HEADERS = (
    HeaderFieldDef("eth_dst", 0, 48),
    HeaderFieldDef("eth_src", 48, 48),
    HeaderFieldDef("vlan_tag", 96, 24),
    HeaderFieldDef("proto_type", 120, 8),
)


@pytest.fixture
def catalog():
    return FieldCatalog(CANONICAL_HEADERS, [MetadataFieldDef("prio", MetaType.UINT, width=8)])


@pytest.fixture
def canonical_raw():
    """The canonical program as a fresh dict, safe to mutate."""
    return json.loads((PROGRAMS / "canonical.json").read_text())


@pytest.fixture
def canonical():
    return load_dpp(PROGRAMS / "canonical.json")


@pytest.fixture
def passthrough_raw():
    return json.loads((PROGRAMS / "passthrough.json").read_text())


@pytest.fixture
def build():
    """Build a program from a raw dict, leaving the caller's dict untouched."""
    def _build(raw):
        return parse_dpp(copy.deepcopy(raw))
    return _build


@pytest.fixture
def packet():
    """Canonical-layout packet bytes."""
    def _packet(vlan=0x001525, proto=4, payload=b"\xca\xfe\xba\xbe",
                dst=0xFFFFFFFFFFFF, src=0x001122334455):
        header = (dst << 80) | (src << 32) | (vlan << 8) | proto
        return header.to_bytes(16, "big") + payload
    return _packet


@pytest.fixture
def phv_for(catalog):
    """PHV for raw bytes on a port, with a caller-chosen seq."""
    def _phv(data: bytes, port=0, t=0, seq=0):
        return make_phv(BitBuffer.from_bytes(data), port, t, seq, catalog)
    return _phv
