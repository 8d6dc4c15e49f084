"""RFID badge bit formats and reader configuration.

A format is a pattern over ``P`` (parity), ``F`` (facility code) and ``I``
(card id), optionally surrounded by ``leading_parity`` / ``trailing_parity``
extra bits that are stripped without interpretation. Bit 1 of a card is the
most significant bit of its integer word.

When a pattern has exactly one ``P`` at each end and none inside (the
classic Wiegand envelope, e.g. the 26-bit ``PFFFFFFFFIIIIIIIIIIIIIIIIP``),
the first ``P`` gives even parity over the first half of the inner bits and
the last ``P`` odd parity over the second half. For an odd inner length the
halves share the middle bit, which yields the usual 37-bit layout. Built-in
formats always verify parity; custom formats only when they have that
envelope shape.

Encoding and decoding work on Python ints and on numpy ``uint64`` arrays
alike.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import FieldOverflow, InvalidFormat, LengthMismatch, ParityError

_PATTERN = re.compile(r"[PFI]+")
_ENVELOPE = re.compile(r"P[FI]+P")


@dataclass(frozen=True)
class BadgeFormat:
    pattern: str
    leading_parity: int = 0
    trailing_parity: int = 0
    name: str = "custom"
    builtin: bool = field(default=False, compare=False)

    @property
    def bit_length(self) -> int:
        return self.leading_parity + len(self.pattern) + self.trailing_parity

    @property
    def facility_bits(self) -> int:
        return self.pattern.count("F")

    @property
    def id_bits(self) -> int:
        return self.pattern.count("I")

    @property
    def parity_bits(self) -> int:
        return self.pattern.count("P") + self.leading_parity + self.trailing_parity

    @cached_property
    def _runs(self) -> dict[str, list[tuple[int, int]]]:
        """Contiguous (start, length) runs per role, absolute MSB-first positions."""
        runs: dict[str, list[tuple[int, int]]] = {"F": [], "I": []}
        for m in re.finditer(r"F+|I+", self.pattern):
            runs[m.group()[0]].append((self.leading_parity + m.start(), m.end() - m.start()))
        return runs

    @cached_property
    def parity_rule(self) -> tuple[int, int, int, int] | None:
        """(even bit, even data mask, odd bit, odd data mask) as word masks, or None."""
        if not _ENVELOPE.fullmatch(self.pattern):
            return None
        n_total = self.bit_length
        first = self.leading_parity
        last = first + len(self.pattern) - 1
        inner = list(range(first + 1, last))
        half_up = (len(inner) + 1) // 2
        bit = lambda pos: 1 << (n_total - 1 - pos)
        even_mask = sum(bit(p) for p in inner[:half_up])
        odd_mask = sum(bit(p) for p in inner[len(inner) // 2:])
        return bit(first), even_mask, bit(last), odd_mask


def parse_format(pattern: str, leading_parity: int = 0, trailing_parity: int = 0,
                 name: str = "custom") -> BadgeFormat:
    if not _PATTERN.fullmatch(pattern or ""):
        bad = sorted(set(pattern or "") - set("PFI"))
        raise InvalidFormat(f"format {pattern!r} is invalid" + (f": letters {bad} not in P/F/I" if bad else ""))
    if "I" not in pattern:
        raise InvalidFormat(f"format {pattern!r} has no ID bits")
    if leading_parity < 0 or trailing_parity < 0:
        raise InvalidFormat("parity bit counts cannot be negative")
    return BadgeFormat(pattern, leading_parity, trailing_parity, name)


STANDARD_26 = BadgeFormat("P" + "F" * 8 + "I" * 16 + "P", name="std26", builtin=True)
UNIQUE_37 = BadgeFormat("P" + "I" * 35 + "P", name="unique37", builtin=True)
BUILTIN_FORMATS = {f.name: f for f in (STANDARD_26, UNIQUE_37)}


def _popcount(v):
    return np.bitwise_count(v) if isinstance(v, np.ndarray) else v.bit_count()


def _as_word(v):
    return v.astype(np.uint64) if isinstance(v, np.ndarray) else int(v)


def _gather(word, runs, n_total):
    value = 0 if not isinstance(word, np.ndarray) else np.zeros_like(word)
    for start, length in runs:
        value = (value << length) | ((word >> (n_total - start - length)) & ((1 << length) - 1))
    return value


def _scatter(value, runs, n_total):
    remaining = sum(length for _, length in runs)
    word = 0 if not isinstance(value, np.ndarray) else np.zeros_like(value)
    for start, length in runs:
        remaining -= length
        word = word | (((value >> remaining) & ((1 << length) - 1)) << (n_total - start - length))
    return word


def _check_field(value, width, what):
    limit = 1 << width
    if isinstance(value, np.ndarray):
        bad = bool(((value < 0) | (value >= limit)).any())
    else:
        bad = not 0 <= value < limit
    if bad:
        raise FieldOverflow(f"{what} does not fit in {width} bits")


def encode_word(facility, card_id, fmt: BadgeFormat):
    """Pack facility/id (ints or arrays) into card words, computing parity."""
    facility, card_id = _as_word(facility), _as_word(card_id)
    _check_field(facility, fmt.facility_bits, "facility code")
    _check_field(card_id, fmt.id_bits, "card id")
    n = fmt.bit_length
    word = _scatter(facility, fmt._runs["F"], n) | _scatter(card_id, fmt._runs["I"], n)
    rule = fmt.parity_rule
    if rule is not None:
        even_bit, even_mask, odd_bit, odd_mask = rule
        # note: callers passing arrays get uint64 arithmetic throughout
        even = _popcount(word & even_mask) & 1
        odd = 1 - (_popcount(word & odd_mask) & 1)
        if isinstance(word, np.ndarray):
            even, odd = even.astype(np.uint64), odd.astype(np.uint64)
        word = word | even * even_bit | odd * odd_bit
    return word


def parity_ok(word, fmt: BadgeFormat):
    """Parity check result (bool or bool array); True when the format has no rule."""
    rule = fmt.parity_rule
    if rule is None:
        return True if not isinstance(word, np.ndarray) else np.ones(word.shape, bool)
    even_bit, even_mask, odd_bit, odd_mask = rule
    even = _popcount(word & (even_mask | even_bit)) % 2 == 0
    odd = _popcount(word & (odd_mask | odd_bit)) % 2 == 1
    return even & odd


def decode_word(word, fmt: BadgeFormat, check_parity: bool = True):
    """(facility, card_id) from card words. Raises ParityError on any bad word."""
    word = _as_word(word)
    n = fmt.bit_length
    if isinstance(word, np.ndarray):
        if n < 64 and bool((word >> n).any()):
            raise LengthMismatch(f"words wider than {n} bits")
    elif word >> n:
        raise LengthMismatch(f"word {word:#x} wider than {n} bits")
    if check_parity:
        ok = parity_ok(word, fmt)
        if not (ok.all() if isinstance(ok, np.ndarray) else ok):
            raise ParityError(f"parity check failed for {fmt.name}")
    return _gather(word, fmt._runs["F"], n), _gather(word, fmt._runs["I"], n)


@dataclass(frozen=True)
class Credential:
    facility_code: int
    card_id: int
    bit_count: int
    raw_bits: tuple[int, ...]


def bits_from_int(word: int, n: int) -> tuple[int, ...]:
    return tuple((word >> (n - 1 - k)) & 1 for k in range(n))


def bits_to_int(bits) -> int:
    word = 0
    for b in bits:
        if b not in (0, 1):
            raise LengthMismatch(f"bit value {b!r} is not 0 or 1")
        word = word << 1 | b
    return word


def _normalize_bits(bits) -> tuple[int, ...]:
    if isinstance(bits, str):
        if set(bits) - {"0", "1"}:
            raise LengthMismatch(f"bit string {bits!r} has characters other than 0/1")
        return tuple(int(c) for c in bits)
    return tuple(int(b) for b in bits)


def decode_bits(bits, fmt: BadgeFormat) -> Credential:
    bits = _normalize_bits(bits)
    if len(bits) != fmt.bit_length:
        raise LengthMismatch(f"{len(bits)} bits for a {fmt.bit_length}-bit format")
    word = bits_to_int(bits)
    facility, card_id = decode_word(word, fmt, check_parity=fmt.parity_rule is not None)
    return Credential(facility, card_id, len(bits), bits)


def encode_bits(facility: int, card_id: int, fmt: BadgeFormat = STANDARD_26) -> tuple[int, ...]:
    """Bit vector for a credential; parity bits computed, stripped extras zero."""
    return bits_from_int(encode_word(facility, card_id, fmt), fmt.bit_length)


# Reader configuration

class Led(enum.Enum):
    DEFAULT = "Default"
    RED = "Red"
    GREEN = "Green"
    BOTH_COLORS = "BothColors"


class Accept(enum.Enum):
    ANY = "Any"
    STANDARD_26 = "Standard26"
    UNIQUE_37 = "Unique37"


MIN_VALID_DATA_TIME_MS = 900
MAX_AFFIX_CHARS = 3


@dataclass(frozen=True)
class ReaderConfig:
    """Reader behaviour. Values are normalized on construction: the data
    hold time snaps up to 900 ms, and lead/trail characters are cut to three
    in total with lead characters taking priority."""
    beep: bool = True
    led: Led = Led.DEFAULT
    accept: Accept = Accept.ANY
    valid_data_time_ms: int = 1000
    leading_parity: int = 0
    trailing_parity: int = 0
    lead_chars: str = ""
    trail_chars: str = ""
    hide_id: bool = False
    facility_delimiter: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "valid_data_time_ms", max(int(self.valid_data_time_ms), MIN_VALID_DATA_TIME_MS))
        lead = self.lead_chars[:MAX_AFFIX_CHARS]
        object.__setattr__(self, "lead_chars", lead)
        object.__setattr__(self, "trail_chars", self.trail_chars[:MAX_AFFIX_CHARS - len(lead)])
        if self.leading_parity < 0 or self.trailing_parity < 0:
            raise ValueError("parity bit counts cannot be negative")


def set_valid_data_time(config: ReaderConfig, ms: int) -> ReaderConfig:
    return replace(config, valid_data_time_ms=ms)


def add_lead_chars(config: ReaderConfig, chars: str) -> ReaderConfig:
    return replace(config, lead_chars=chars)


def strip_lead_chars(config: ReaderConfig) -> ReaderConfig:
    return replace(config, lead_chars="")


def add_trail_chars(config: ReaderConfig, chars: str) -> ReaderConfig:
    return replace(config, trail_chars=chars)


def hide_id(config: ReaderConfig, hidden: bool = True) -> ReaderConfig:
    return replace(config, hide_id=hidden)


def render_output(cred: Credential, config: ReaderConfig = ReaderConfig()) -> str:
    if config.hide_id:
        body = ""
    elif config.facility_delimiter is not None:
        body = f"{cred.facility_code}{config.facility_delimiter}{cred.card_id}"
    else:
        body = str(cred.card_id)
    return f"{config.lead_chars}{body}{config.trail_chars}"


def load_formats(path) -> dict[str, BadgeFormat]:
    """Built-in formats plus those in a ``name pattern lead trail`` file."""
    formats = dict(BUILTIN_FORMATS)
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 4):
            raise InvalidFormat(f"{path}:{lineno}: expected 'name pattern [lead trail]'")
        name, pattern = parts[:2]
        try:
            lead, trail = (int(parts[2]), int(parts[3])) if len(parts) == 4 else (0, 0)
        except ValueError:
            raise InvalidFormat(f"{path}:{lineno}: parity counts must be integers") from None
        formats[name] = parse_format(pattern, lead, trail, name)
    return formats


def read_card(bits, config: ReaderConfig = ReaderConfig(), formats: dict[str, BadgeFormat] | None = None) -> Credential:
    """Decode a card read the way a configured reader would.

    ``accept`` restricts decoding to one built-in format. Custom formats
    without their own parity counts take the reader's leading/trailing
    parity settings.
    """
    bits = _normalize_bits(bits)
    if config.accept is Accept.STANDARD_26:
        candidates = [STANDARD_26]
    elif config.accept is Accept.UNIQUE_37:
        candidates = [UNIQUE_37]
    else:
        candidates = []
        for fmt in (formats or BUILTIN_FORMATS).values():
            if not fmt.builtin and fmt.leading_parity == fmt.trailing_parity == 0:
                fmt = replace(fmt, leading_parity=config.leading_parity, trailing_parity=config.trailing_parity)
            candidates.append(fmt)
    for fmt in candidates:
        if fmt.bit_length == len(bits):
            return decode_bits(bits, fmt)
    raise LengthMismatch(f"no accepted format has {len(bits)} bits")
