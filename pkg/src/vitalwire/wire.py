"""Alive Heart Monitor packet codec and resynchronizing stream parser.

Frame layout (all offsets 0-based, multi-byte fields little-endian)::

    0   0x00                     sync
    1   0xFE                     sync
    2   battery                  0..200, 200 = 100 %
    3-4 seq/status word          bits 0-11 sequence, bit 12 event, 13-15 reserved
    5   number of data blocks
    6   0xAA                     ECG block id
    7-8 ECG length               5 + m
    9   ECG data format          0x01 (150 Hz) or 0x02 (300 Hz)
    10  reserved
    11  m ECG samples
    ..  0x56                     3-axis ACC block id
    ..  ACC length               5 + n
    ..  ACC data format          0x00 (75 Hz, interleaved X,Y,Z)
    ..  reserved
    ..  n ACC samples
    -1  checksum                 sum of all preceding bytes mod 256

Total length is ``17 + m + n``.
"""

from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass, field

from .errors import BadFormatCode, BadSync, Overflow, Truncated, UnknownBlockId

logger = logging.getLogger(__name__)

SYNC = b"\x00\xfe"
HEADER_LEN = 6
BLOCK_HEADER_LEN = 5
FRAME_OVERHEAD = HEADER_LEN + 2 * BLOCK_HEADER_LEN + 1  # 17

ECG_BLOCK_ID = 0xAA
ACC_BLOCK_ID = 0x56
DATA_BLOCKS = 2

SEQUENCE_MODULUS = 4096
MAX_BATTERY = 200


class EcgFormat(enum.IntEnum):
    F150 = 0x01
    F300 = 0x02

    @property
    def sample_rate_hz(self) -> int:
        return 150 if self is EcgFormat.F150 else 300


class AccFormat(enum.IntEnum):
    F75 = 0x00

    @property
    def sample_rate_hz(self) -> int:
        return 75


@dataclass(frozen=True)
class PacketHeader:
    battery_raw: int = MAX_BATTERY
    sequence: int = 0
    event_flag: bool = False
    reserved_bits: int = 0  # status bits 13-15, kept verbatim
    num_blocks: int = DATA_BLOCKS

    def __post_init__(self):
        if not 0 <= self.battery_raw <= MAX_BATTERY:
            raise ValueError(f"battery_raw {self.battery_raw} outside 0..{MAX_BATTERY}")
        if not 0 <= self.sequence < SEQUENCE_MODULUS:
            raise ValueError(f"sequence {self.sequence} is not a 12-bit value")
        if not 0 <= self.reserved_bits < 8:
            raise ValueError("reserved_bits must fit in 3 bits")
        if not 0 <= self.num_blocks <= 0xFF:
            raise ValueError("num_blocks must fit in one byte")

    @property
    def battery_percent(self) -> float:
        return self.battery_raw / 2.0


@dataclass(frozen=True)
class EcgBlock:
    data_format: EcgFormat = EcgFormat.F300
    samples: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "data_format", EcgFormat(self.data_format))
        object.__setattr__(self, "samples", tuple(self.samples))


@dataclass(frozen=True)
class AccBlock:
    data_format: AccFormat = AccFormat.F75
    samples: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "data_format", AccFormat(self.data_format))
        object.__setattr__(self, "samples", tuple(self.samples))
        if len(self.samples) % 3:
            raise ValueError("ACC samples must be whole X,Y,Z triplets")

    @property
    def triplets(self) -> list[tuple[int, int, int]]:
        s = self.samples
        return [(s[k], s[k + 1], s[k + 2]) for k in range(0, len(s), 3)]


@dataclass(frozen=True)
class AlivePacket:
    header: PacketHeader = field(default_factory=PacketHeader)
    ecg: EcgBlock = field(default_factory=EcgBlock)
    acc: AccBlock = field(default_factory=AccBlock)
    checksum_ok: bool = True

    @property
    def encoded_length(self) -> int:
        return FRAME_OVERHEAD + len(self.ecg.samples) + len(self.acc.samples)


def checksum(data: bytes) -> int:
    return sum(data) & 0xFF


def verify_checksum(frame: bytes) -> bool:
    """True iff the last byte equals the sum of all preceding bytes mod 256."""
    if len(frame) < 1:
        raise Truncated("empty frame has no checksum byte")
    return checksum(frame[:-1]) == frame[-1]


def _block_header(block_id: int, n_samples: int, fmt: int) -> bytes:
    length = BLOCK_HEADER_LEN + n_samples
    if length > 0xFFFF:
        raise Overflow(f"block of {n_samples} samples overflows the 16-bit length field")
    return struct.pack("<BHBB", block_id, length, fmt, 0)


def encode_packet(packet: AlivePacket) -> bytes:
    h = packet.header
    word = h.sequence | (int(h.event_flag) << 12) | (h.reserved_bits << 13)
    body = bytearray(SYNC)
    body += struct.pack("<BHB", h.battery_raw, word, h.num_blocks)
    body += _block_header(ECG_BLOCK_ID, len(packet.ecg.samples), packet.ecg.data_format)
    body += bytes(packet.ecg.samples)
    body += _block_header(ACC_BLOCK_ID, len(packet.acc.samples), packet.acc.data_format)
    body += bytes(packet.acc.samples)
    body.append(checksum(body))
    return bytes(body)


def frame_length(data: bytes) -> int | None:
    """Length of the frame starting at ``data[0]``, or None if more bytes are needed.

    Validates sync, block ids and format codes as far as the available bytes allow.
    """
    if len(data) >= 2 and data[:2] != SYNC or len(data) == 1 and data[0] != 0:
        raise BadSync(f"frame starts with {data[:2].hex()}, expected 00fe")
    if len(data) >= HEADER_LEN and data[5] != DATA_BLOCKS:
        raise UnknownBlockId(f"frame declares {data[5]} data blocks, only ECG+ACC layout is known")
    ecg_at = HEADER_LEN
    if len(data) < ecg_at + BLOCK_HEADER_LEN:
        return None
    block_id, ecg_len, fmt = struct.unpack_from("<BHB", data, ecg_at)
    if block_id != ECG_BLOCK_ID:
        raise UnknownBlockId(f"expected ECG block id 0xAA, got {block_id:#04x}")
    if fmt not in EcgFormat._value2member_map_:
        raise BadFormatCode(f"unknown ECG data format {fmt:#04x}")
    if ecg_len < BLOCK_HEADER_LEN:
        raise Truncated(f"ECG length field {ecg_len} is shorter than its own header")
    acc_at = ecg_at + ecg_len
    if len(data) < acc_at + BLOCK_HEADER_LEN:
        return None
    block_id, acc_len, fmt = struct.unpack_from("<BHB", data, acc_at)
    if block_id != ACC_BLOCK_ID:
        raise UnknownBlockId(f"expected ACC block id 0x56, got {block_id:#04x}")
    if fmt not in AccFormat._value2member_map_:
        raise BadFormatCode(f"unknown ACC data format {fmt:#04x}")
    if acc_len < BLOCK_HEADER_LEN or (acc_len - BLOCK_HEADER_LEN) % 3:
        raise BadFormatCode(f"ACC length field {acc_len} does not hold whole triplets")
    return acc_at + acc_len + 1


def decode_packet(data: bytes) -> AlivePacket:
    """Decode the frame at the start of ``data``. Trailing bytes are ignored."""
    data = bytes(data)
    if len(data) < 2:
        raise Truncated("fewer than 2 bytes, no sync marker")
    n = frame_length(data)
    if n is None:
        raise Truncated(f"only {len(data)} bytes, packet headers incomplete")
    if len(data) < n:
        raise Truncated(f"frame declares {n} bytes, have {len(data)}")

    battery, word, num_blocks = struct.unpack_from("<BHB", data, 2)
    if battery > MAX_BATTERY:
        raise BadFormatCode(f"battery level {battery} exceeds {MAX_BATTERY}")
    header = PacketHeader(
        battery_raw=battery,
        sequence=word & 0x0FFF,
        event_flag=bool(word >> 12 & 1),
        reserved_bits=word >> 13,
        num_blocks=num_blocks,
    )
    _, ecg_len, ecg_fmt = struct.unpack_from("<BHB", data, HEADER_LEN)
    ecg_start = HEADER_LEN + BLOCK_HEADER_LEN
    ecg = EcgBlock(ecg_fmt, data[ecg_start:ecg_start + ecg_len - BLOCK_HEADER_LEN])
    acc_at = HEADER_LEN + ecg_len
    _, acc_len, acc_fmt = struct.unpack_from("<BHB", data, acc_at)
    acc_start = acc_at + BLOCK_HEADER_LEN
    acc = AccBlock(acc_fmt, data[acc_start:acc_start + acc_len - BLOCK_HEADER_LEN])
    return AlivePacket(header, ecg, acc, checksum_ok=verify_checksum(data[:n]))


@dataclass
class ParserStats:
    packets_ok: int = 0
    checksum_failures: int = 0
    resyncs: int = 0
    sequence_gaps: int = 0
    bytes_discarded: int = 0


class StreamParser:
    """Incremental packet framer for an arbitrary byte stream.

    Bytes that cannot start a valid frame are discarded up to the next
    ``00 FE`` pair; each contiguous run of discarded bytes counts as one
    resync, independent of how the stream was chunked. With
    ``verify=True`` (the default) frames failing the checksum are treated as
    garbage; with ``verify=False`` they are emitted with ``checksum_ok``
    False. ``max_samples`` caps the per-block length a candidate frame may
    declare, so a false sync inside junk cannot stall the stream for long.
    """

    def __init__(self, verify: bool = True, max_samples: int = 4096):
        self.verify = verify
        self.max_samples = max_samples
        self.buffer = bytearray()
        self.stats = ParserStats()
        self.last_sequence: int | None = None
        self._resyncing = False

    def _discard(self, n: int):
        if n <= 0:
            return
        del self.buffer[:n]
        self.stats.bytes_discarded += n
        if not self._resyncing:
            self._resyncing = True
            self.stats.resyncs += 1

    def _candidate(self, start: int) -> int | None:
        """Frame length at ``start``; None when incomplete; -1 when invalid."""
        view = bytes(self.buffer[start:start + HEADER_LEN + 2 * BLOCK_HEADER_LEN + self.max_samples * 2 + 16])
        try:
            n = frame_length(view)
        except (BadSync, UnknownBlockId, BadFormatCode, Truncated):
            return -1
        if n is not None and n - FRAME_OVERHEAD > 2 * self.max_samples:
            return -1
        if n is None:
            if len(view) >= HEADER_LEN + BLOCK_HEADER_LEN:
                ecg_len = struct.unpack_from("<H", view, HEADER_LEN + 1)[0]
                if ecg_len - BLOCK_HEADER_LEN > self.max_samples:
                    return -1
            return None
        if self.buffer[start + 2] > MAX_BATTERY:
            return -1
        return n

    def _complete_valid(self, start: int) -> int | None:
        n = self._candidate(start)
        if n is None or n < 0 or len(self.buffer) - start < n:
            return None
        if self.verify and not verify_checksum(bytes(self.buffer[start:start + n])):
            return None
        return n

    def _emit(self, n: int, out: list):
        frame = bytes(self.buffer[:n])
        del self.buffer[:n]
        packet = decode_packet(frame)
        if not packet.checksum_ok:
            self.stats.checksum_failures += 1
        else:
            self.stats.packets_ok += 1
        seq = packet.header.sequence
        if self.last_sequence is not None and (seq - self.last_sequence) % SEQUENCE_MODULUS != 1:
            self.stats.sequence_gaps += 1
            logger.debug("sequence gap %d -> %d", self.last_sequence, seq)
        self.last_sequence = seq
        self._resyncing = False
        out.append(packet)

    def feed(self, chunk: bytes) -> list[AlivePacket]:
        self.buffer += chunk
        out: list[AlivePacket] = []
        while self.buffer:
            at = self.buffer.find(SYNC)
            if at < 0:
                # keep a trailing 0x00, it may be the first half of a sync pair
                keep = 1 if self.buffer[-1] == 0 else 0
                self._discard(len(self.buffer) - keep)
                break
            self._discard(at)
            n = self._candidate(0)
            if n is None:
                # Incomplete candidate: a complete, checksum-valid frame further
                # on means the candidate was junk.
                ahead = self.buffer.find(SYNC, 1)
                while ahead > 0:
                    if self._complete_valid(ahead) is not None:
                        self._discard(ahead)
                        break
                    ahead = self.buffer.find(SYNC, ahead + 1)
                else:
                    break
                continue
            if n < 0 or len(self.buffer) < n:
                if n < 0:
                    self._discard(1)
                    continue
                break
            if verify_checksum(bytes(self.buffer[:n])) or not self.verify:
                self._emit(n, out)
            else:
                self.stats.checksum_failures += 1
                self._discard(1)
        return out


def feed(parser: StreamParser, chunk: bytes) -> list[AlivePacket]:
    return parser.feed(chunk)
