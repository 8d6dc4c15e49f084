"""Reader and writer for ATS recording files.

An ATS file is a 128-byte main header, one 32-byte description per channel,
then a sequence of data blocks. Every block holds one data packet per
channel, in channel order, so its size is the sum of the channels' packet
lengths. Multi-byte integers are little-endian.

Main header layout (0-based offsets)::

    0-4    b"ATSF\\0"
    5-6    header length (>= 128; channel descriptions start here)
    7      number of channels
    8-11   number of data blocks, 0 when unknown (read until EOF)
    12-13  bytes per data block
    14-15  year
    16-17  month, day
    18-20  hour, minute, second
    21-127 reserved, written as zero
"""

from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass, field
from typing import Iterator

from .errors import (
    BadChannelIndex,
    BadChannelType,
    BadHeader,
    BadMagic,
    BlockSizeMismatch,
    InvalidDate,
    TruncatedBlock,
)

logger = logging.getLogger(__name__)

MAGIC = b"ATSF\x00"
MAIN_HEADER_LEN = 128
CHANNEL_DESC_LEN = 32
_MAIN = struct.Struct("<5sHBIHHBBBBB")
_DESC = struct.Struct("<BBH")


class DataType(enum.IntEnum):
    STATUS = 0x11
    ECG = 0xAA
    ACC2 = 0x55
    ACC3 = 0x56


# (data type, data format) -> (sample rate in Hz, samples per frame)
CHANNEL_FORMATS = {
    (DataType.STATUS, 0x00): (None, 2),
    (DataType.ECG, 0x01): (150, 1),
    (DataType.ECG, 0x02): (300, 1),
    (DataType.ACC2, 0x00): (75, 2),
    (DataType.ACC3, 0x00): (75, 3),
}


@dataclass(frozen=True)
class AtsMainHeader:
    channels: int
    block_len: int
    date: tuple[int, int, int] = (2005, 1, 1)
    time: tuple[int, int, int] = (0, 0, 0)
    num_data_blocks: int = 0
    header_len: int = MAIN_HEADER_LEN


@dataclass(frozen=True)
class ChannelDescription:
    data_type: DataType
    data_format: int
    packet_len: int

    @property
    def sample_rate_hz(self) -> int | None:
        return CHANNEL_FORMATS[(self.data_type, self.data_format)][0]

    @property
    def frame_width(self) -> int:
        """Bytes per sample frame: 3 for XYZ, 2 for XY or status, else 1."""
        return CHANNEL_FORMATS[(self.data_type, self.data_format)][1]


@dataclass
class AtsFile:
    header: AtsMainHeader
    channel_descs: list[ChannelDescription]
    blocks: list[list[bytes]] = field(default_factory=list)
    trailing: bytes = b""  # partial block left at EOF


def _check_date(date, time, exc):
    year, month, day = date
    hour, minute, second = time
    if not 0 <= year <= 0xFFFF:
        raise exc(f"year {year} does not fit in 16 bits")
    if not 1 <= month <= 12:
        raise exc(f"month {month} outside 1-12")
    if not 1 <= day <= 31:
        raise exc(f"day {day} outside 1-31")
    if not (0 <= hour <= 23 and 0 <= minute <= 59 and 0 <= second <= 59):
        raise exc(f"time {hour:02d}:{minute:02d}:{second:02d} out of range")


def _check_channel(desc: ChannelDescription):
    try:
        key = (DataType(desc.data_type), desc.data_format)
    except ValueError:
        raise BadChannelType(f"unknown channel data type {desc.data_type:#04x}") from None
    if key not in CHANNEL_FORMATS:
        raise BadChannelType(f"data format {desc.data_format:#04x} invalid for {key[0].name}")
    if key[0] is DataType.STATUS and desc.packet_len != 2:
        raise BadChannelType(f"status packets are 2 bytes, description says {desc.packet_len}")


def encode_ats(f: AtsFile) -> bytes:
    h = f.header
    _check_date(h.date, h.time, InvalidDate)
    if h.channels != len(f.channel_descs) or not 1 <= h.channels <= 0xFF:
        raise BlockSizeMismatch(f"header declares {h.channels} channels, {len(f.channel_descs)} described")
    if h.header_len < MAIN_HEADER_LEN:
        raise BlockSizeMismatch(f"header length {h.header_len} below {MAIN_HEADER_LEN}")
    for desc in f.channel_descs:
        _check_channel(desc)
    if sum(d.packet_len for d in f.channel_descs) != h.block_len:
        raise BlockSizeMismatch("block length differs from the sum of channel packet lengths")
    if h.num_data_blocks not in (0, len(f.blocks)):
        raise BlockSizeMismatch(f"header declares {h.num_data_blocks} blocks, file has {len(f.blocks)}")

    out = bytearray(_MAIN.pack(MAGIC, h.header_len, h.channels, h.num_data_blocks, h.block_len,
                               h.date[0], h.date[1], h.date[2], *h.time))
    out += bytes(h.header_len - len(out))
    for desc in f.channel_descs:
        out += _DESC.pack(desc.data_type, desc.data_format, desc.packet_len).ljust(CHANNEL_DESC_LEN, b"\0")
    for i, block in enumerate(f.blocks):
        if len(block) != h.channels:
            raise BlockSizeMismatch(f"block {i} has {len(block)} packets for {h.channels} channels")
        for desc, packet in zip(f.channel_descs, block):
            if len(packet) != desc.packet_len:
                raise BlockSizeMismatch(f"block {i}: packet of {len(packet)} bytes, channel expects {desc.packet_len}")
            out += packet
    out += f.trailing
    return bytes(out)


def decode_ats(data: bytes) -> AtsFile:
    data = bytes(data)
    if len(data) < MAIN_HEADER_LEN:
        raise BadHeader(f"file is {len(data)} bytes, shorter than the {MAIN_HEADER_LEN}-byte main header")
    magic, header_len, channels, n_blocks, block_len, year, month, day, hour, minute, second = \
        _MAIN.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if header_len < MAIN_HEADER_LEN:
        raise BadHeader(f"header length {header_len} below {MAIN_HEADER_LEN}")
    if channels < 1:
        raise BadHeader("file declares no channels")
    _check_date((year, month, day), (hour, minute, second), BadHeader)

    descs_end = header_len + channels * CHANNEL_DESC_LEN
    if len(data) < descs_end:
        raise BadHeader("channel descriptions truncated")
    descs = []
    for k in range(channels):
        dtype, dfmt, plen = _DESC.unpack_from(data, header_len + k * CHANNEL_DESC_LEN)
        desc = ChannelDescription(dtype, dfmt, plen)
        _check_channel(desc)
        descs.append(ChannelDescription(DataType(dtype), dfmt, plen))
    if sum(d.packet_len for d in descs) != block_len:
        raise BadHeader(f"block length {block_len} differs from the sum of channel packet lengths")

    header = AtsMainHeader(channels=channels, block_len=block_len, date=(year, month, day),
                           time=(hour, minute, second), num_data_blocks=n_blocks, header_len=header_len)
    body = memoryview(data)[descs_end:]
    available = len(body) // block_len if block_len else 0
    if n_blocks:
        if available < n_blocks:
            raise TruncatedBlock(f"header declares {n_blocks} blocks, only {available} complete")
        count = n_blocks
    else:
        count = available
    blocks = []
    for b in range(count):
        pos = b * block_len
        packets = []
        for desc in descs:
            packets.append(bytes(body[pos:pos + desc.packet_len]))
            pos += desc.packet_len
        blocks.append(packets)
    trailing = bytes(body[count * block_len:])
    if trailing:
        logger.warning("%d trailing bytes after %d complete blocks", len(trailing), count)
    return AtsFile(header, descs, blocks, trailing)


def samples(f: AtsFile, channel: int) -> Iterator:
    """Yield one channel's samples across all blocks, in block order.

    Single-byte channels (ECG) yield ints; 3-axis channels yield (x, y, z)
    tuples; 2-axis channels yield (x, y); status channels yield
    (status_bits, battery).
    """
    if not 0 <= channel < len(f.channel_descs):
        raise BadChannelIndex(f"channel {channel} not in 0..{len(f.channel_descs) - 1}")
    width = f.channel_descs[channel].frame_width
    stream = b"".join(block[channel] for block in f.blocks)
    if width == 1:
        yield from stream
        return
    if len(stream) % width:
        logger.warning("channel %d: %d bytes do not form whole frames", channel, len(stream) % width)
    for k in range(0, len(stream) - width + 1, width):
        yield tuple(stream[k:k + width])
