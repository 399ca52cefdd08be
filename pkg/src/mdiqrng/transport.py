"""Device-to-server block streaming over UDP.

Frame layout (big-endian, bit-exact; normative for golden files):

    offset  size  field
    0       4     magic 0x51 0x52 0x4E 0x47 ("QRNG")
    4       1     version = 1
    5       8     block id, unsigned
    13      1     state label: 0 = TestH, 1 = TestV, 2 = Generate
    14      4     payload length in bits (<= 65536)
    18      ...   payload, ceil(bits / 8) bytes, MSB first
    last 4        CRC-32 (polynomial 0x04C11DB7, reflected) over header+payload

`Frame` owns the wire encoding for arbitrary payloads; the block mapping on
top of it packs a generation block's raw bits, or a test block's tally as a
fixed 32-byte record (outcome-0, outcome-1, no-click, double-click counts as
four u64). One frame is sent per datagram, fire and forget: lost datagrams
become gaps in the server's block-id ledger, duplicates are ignored, frames
failing any structural or CRC check are counted and dropped. The server
appends payloads to one of three per-state files so that security analysis
and randomness extraction each see only their own stream.
"""

from __future__ import annotations

import json
import os
import socket
import struct
import time
import zlib
from dataclasses import dataclass, field

from .bitops import pack_bits, unpack_bits
from .protocol import BLOCK_BITS, BitBlock, BlockKind, TestTally

MAGIC = b"QRNG"
VERSION = 1
HEADER_LEN = 18
CRC_LEN = 4
MIN_FRAME_LEN = HEADER_LEN + CRC_LEN
MAX_FRAME_LEN = MIN_FRAME_LEN + BLOCK_BITS // 8
TALLY_BITS = 256

STATE_FILES = {0: "test_h.log", 1: "test_v.log", 2: "generate.bits"}


class FrameError(ValueError):
    """Base class for frame decode rejections."""


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class BadCrc(FrameError):
    pass


class Truncated(FrameError):
    pass


class BadLabel(FrameError):
    pass


class TransportError(RuntimeError):
    def __init__(self, message, block_id=None):
        super().__init__(message)
        self.block_id = block_id


@dataclass(frozen=True)
class Frame:
    """One wire frame: identity, state label and an opaque bit payload."""

    block_id: int
    label: int
    payload: bytes
    bit_len: int

    def __post_init__(self):
        if self.label not in STATE_FILES:
            raise BadLabel(f"unknown state label {self.label}")
        if self.bit_len > BLOCK_BITS:
            raise ValueError(f"payload exceeds {BLOCK_BITS} bits")
        if len(self.payload) != (self.bit_len + 7) // 8:
            raise ValueError("payload byte length disagrees with bit length")

    def encode(self) -> bytes:
        header = MAGIC + struct.pack(">BQBI", VERSION, self.block_id,
                                     self.label, self.bit_len)
        body = header + self.payload
        return body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    @classmethod
    def decode(cls, data: bytes) -> "Frame":
        """Parse and validate; raises a typed FrameError on any defect."""
        if len(data) < MIN_FRAME_LEN:
            raise Truncated(
                f"frame of {len(data)} bytes is shorter than {MIN_FRAME_LEN}")
        if data[:4] != MAGIC:
            raise BadMagic(f"bad magic {data[:4]!r}")
        version, block_id, label, bit_len = struct.unpack(">BQBI",
                                                          data[4:HEADER_LEN])
        if version != VERSION:
            raise BadVersion(f"unsupported version {version}")
        if label not in STATE_FILES:
            raise BadLabel(f"unknown state label {label}")
        if bit_len > BLOCK_BITS:
            raise Truncated(f"declared payload of {bit_len} bits exceeds {BLOCK_BITS}")
        payload_len = (bit_len + 7) // 8
        expected = HEADER_LEN + payload_len + CRC_LEN
        if len(data) != expected:
            raise Truncated(f"frame is {len(data)} bytes, expected {expected}")
        (crc,) = struct.unpack(">I", data[-CRC_LEN:])
        if crc != (zlib.crc32(data[:-CRC_LEN]) & 0xFFFFFFFF):
            raise BadCrc("crc mismatch")
        return cls(block_id=block_id, label=label,
                   payload=data[HEADER_LEN:HEADER_LEN + payload_len],
                   bit_len=bit_len)


def frame_from_block(block: BitBlock) -> Frame:
    if block.kind is BlockKind.GENERATE:
        bit_len = block.bit_count
        payload = pack_bits(block.bits) if bit_len else b""
    else:
        t = block.tally
        payload = struct.pack(">QQQQ", t.outcome_0, t.outcome_1,
                              t.no_click, t.double_click)
        bit_len = TALLY_BITS
    return Frame(block_id=block.block_id, label=block.kind.value,
                 payload=payload, bit_len=bit_len)


def block_from_frame(frame: Frame) -> BitBlock:
    kind = BlockKind(frame.label)
    if kind is BlockKind.GENERATE:
        return BitBlock(frame.block_id, kind,
                        bits=unpack_bits(frame.payload, frame.bit_len))
    if frame.bit_len != TALLY_BITS:
        raise Truncated(
            f"test frame payload must be {TALLY_BITS} bits, got {frame.bit_len}")
    o0, o1, nc, dc = struct.unpack(">QQQQ", frame.payload)
    tally = TestTally(state=frame.label, outcome_0=o0, outcome_1=o1,
                      no_click=nc, double_click=dc)
    return BitBlock(frame.block_id, kind, tally=tally)


def encode_frame(block: BitBlock) -> bytes:
    """Serialize one block to its wire frame."""
    return frame_from_block(block).encode()


def decode_frame(data: bytes) -> BitBlock:
    """Decode and validate a frame back into a block."""
    return block_from_frame(Frame.decode(data))


def parse_endpoint(endpoint) -> tuple[str, int]:
    if isinstance(endpoint, (tuple, list)) and len(endpoint) == 2:
        return str(endpoint[0]), int(endpoint[1])
    host, sep, port = str(endpoint).rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


@dataclass
class SendStats:
    sent: int = 0
    bytes: int = 0

    def to_dict(self):
        return {"sent": self.sent, "bytes": self.bytes}


def stream_device(blocks, endpoint, *, pace_every: int = 64,
                  pause_s: float = 0.002, sock: socket.socket | None = None
                  ) -> SendStats:
    """Send one datagram per block, in order.

    `blocks` yields BitBlock objects or pre-encoded frame bytes. Light
    pacing (a short pause every `pace_every` datagrams) keeps a loopback
    receiver from overrunning its socket buffer.
    """
    host, port = parse_endpoint(endpoint)
    own_sock = sock is None
    stats = SendStats()
    if own_sock:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        try:
            addr = (socket.gethostbyname(host), port)
        except OSError as exc:
            raise TransportError(f"cannot resolve endpoint {host}:{port}: {exc}",
                                 block_id=None) from exc
        for item in blocks:
            if isinstance(item, (bytes, bytearray, memoryview)):
                frame, block_id = bytes(item), None
            else:
                frame, block_id = encode_frame(item), item.block_id
            try:
                sock.sendto(frame, addr)
            except OSError as exc:
                raise TransportError(f"send failed at block {block_id}: {exc}",
                                     block_id=block_id) from exc
            stats.sent += 1
            stats.bytes += len(frame)
            if pace_every and stats.sent % pace_every == 0 and pause_s > 0:
                time.sleep(pause_s)
    finally:
        if own_sock:
            sock.close()
    return stats


@dataclass
class IngestStats:
    received: int = 0
    valid: int = 0
    invalid: int = 0
    duplicates: int = 0
    per_state_frames: dict = field(default_factory=lambda: {0: 0, 1: 0, 2: 0})
    per_state_payload_bits: dict = field(default_factory=lambda: {0: 0, 1: 0, 2: 0})
    errors_by_type: dict = field(default_factory=dict)
    gap_ids: list = field(default_factory=list)
    max_block_id: int = -1

    def to_dict(self):
        return {
            "received": self.received,
            "valid": self.valid,
            "invalid": self.invalid,
            "duplicates": self.duplicates,
            "per_state_frames": {str(k): v for k, v in self.per_state_frames.items()},
            "per_state_payload_bits": {str(k): v
                                       for k, v in self.per_state_payload_bits.items()},
            "errors_by_type": dict(self.errors_by_type),
            "gaps": len(self.gap_ids),
            "gap_ids": list(self.gap_ids[:1000]),
            "max_block_id": self.max_block_id,
        }


def serve_collect(endpoint, storage_dir, *, stop_after: int | None = None,
                  idle_timeout: float | None = None, status_every: int = 100,
                  sock: socket.socket | None = None, ready=None) -> IngestStats:
    """Receive frames and store payloads per preparation state.

    Valid frames append their payload to exactly one of generate.bits,
    test_h.log or test_v.log under storage_dir; a status.json snapshot is
    refreshed every `status_every` datagrams. Returns after `stop_after`
    datagrams, or after `idle_timeout` seconds of silence, whichever first.
    """
    os.makedirs(storage_dir, exist_ok=True)
    own_sock = sock is None
    if own_sock:
        host, port = parse_endpoint(endpoint)
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
        except OSError:
            pass
        sock.bind((host, port))
    sock.settimeout(0.2)
    if ready is not None:
        ready.set()

    stats = IngestStats()
    seen: set[int] = set()
    files = {}
    try:
        for label, name in STATE_FILES.items():
            files[label] = open(os.path.join(storage_dir, name), "ab")
        last_rx = time.monotonic()
        while True:
            if stop_after is not None and stats.received >= stop_after:
                break
            try:
                data, _addr = sock.recvfrom(65535)
            except socket.timeout:
                if idle_timeout is not None and \
                        time.monotonic() - last_rx >= idle_timeout:
                    break
                continue
            last_rx = time.monotonic()
            stats.received += 1
            try:
                frame = Frame.decode(data)
            except FrameError as exc:
                stats.invalid += 1
                key = type(exc).__name__
                stats.errors_by_type[key] = stats.errors_by_type.get(key, 0) + 1
            else:
                if frame.block_id in seen:
                    stats.duplicates += 1
                else:
                    seen.add(frame.block_id)
                    files[frame.label].write(frame.payload)
                    stats.valid += 1
                    stats.per_state_frames[frame.label] += 1
                    stats.per_state_payload_bits[frame.label] += frame.bit_len
                    stats.max_block_id = max(stats.max_block_id, frame.block_id)
            if status_every and stats.received % status_every == 0:
                _finalize_gaps(stats, seen)
                _write_status(storage_dir, stats)
    except OSError as exc:
        raise TransportError(f"ingest storage failure: {exc}") from exc
    finally:
        for fh in files.values():
            fh.close()
        if own_sock:
            sock.close()
    _finalize_gaps(stats, seen)
    _write_status(storage_dir, stats)
    return stats


def _finalize_gaps(stats: IngestStats, seen: set):
    if stats.max_block_id < 0:
        stats.gap_ids = []
        return
    stats.gap_ids = sorted(set(range(stats.max_block_id + 1)) - seen)


def _write_status(storage_dir, stats: IngestStats):
    path = os.path.join(storage_dir, "status.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(stats.to_dict(), fh, indent=1)
    os.replace(tmp, path)


def write_block_log(blocks, path, append: bool = False) -> int:
    """Write encoded frames back to back into an append-only log file."""
    mode = "ab" if append else "wb"
    count = 0
    with open(path, mode) as fh:
        for block in blocks:
            fh.write(encode_frame(block))
            count += 1
    return count


def read_block_log(path):
    """Iterate the BitBlocks stored in a frame log (frames are self-delimiting)."""
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0
    while offset < len(data):
        if len(data) - offset < HEADER_LEN:
            raise Truncated("trailing bytes too short for a frame header")
        bit_len = struct.unpack(">I", data[offset + 14:offset + 18])[0]
        frame_len = HEADER_LEN + (bit_len + 7) // 8 + CRC_LEN
        yield decode_frame(data[offset:offset + frame_len])
        offset += frame_len
