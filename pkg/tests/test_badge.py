import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import std26_parity_ok, std26_reference
from vitalwire.badge import (
    STANDARD_26,
    UNIQUE_37,
    Accept,
    Credential,
    ReaderConfig,
    add_lead_chars,
    bits_from_int,
    decode_bits,
    decode_word,
    encode_bits,
    encode_word,
    hide_id,
    load_formats,
    parity_ok,
    parse_format,
    read_card,
    render_output,
    set_valid_data_time,
    strip_lead_chars,
)
from vitalwire.errors import FieldOverflow, InvalidFormat, LengthMismatch, ParityError


def test_parse_standard_26_counts():
    fmt = parse_format("PFFFFFFFFIIIIIIIIIIIIIIIIP")
    assert fmt.bit_length == 26
    assert (fmt.parity_bits, fmt.facility_bits, fmt.id_bits) == (2, 8, 16)


def test_parse_rejects_v():
    with pytest.raises(InvalidFormat):
        parse_format("PPFVIIIIIIIIIIIIIIIIIIIIIP")


def test_parse_with_stripped_parity():
    fmt = parse_format("FFFFFIIIIIIIIIIIIIIIIIIII", leading_parity=2, trailing_parity=1)
    assert fmt.bit_length == 28 and fmt.parity_rule is None
    word = encode_word(17, 123456, fmt)
    assert word >> 26 == 0 and word & 1 == 0  # extra parity positions left zero
    assert decode_bits(bits_from_int(word, 28), fmt) == Credential(17, 123456, 28, bits_from_int(word, 28))


@pytest.mark.parametrize("pattern", ["", "PFP", "PPP", "pfiip", "PFI P", "PFIX"])
def test_parse_invalid(pattern):
    with pytest.raises(InvalidFormat):
        parse_format(pattern)


@settings(max_examples=300)
@given(st.text(alphabet="PFIVXpfi 01", max_size=12))
def test_parse_accepts_exactly_pfi_strings_with_an_id(pattern):
    valid = bool(pattern) and set(pattern) <= set("PFI") and "I" in pattern
    if valid:
        assert parse_format(pattern).pattern == pattern
    else:
        with pytest.raises(InvalidFormat):
            parse_format(pattern)


def test_known_word_decodes():
    assert decode_word(0x2020002, STANDARD_26) == (1, 1)
    cred = decode_bits(bits_from_int(0x2020002, 26), STANDARD_26)
    assert (cred.facility_code, cred.card_id, cred.bit_count) == (1, 1, 26)


def test_zero_word_fails_parity():
    with pytest.raises(ParityError):
        decode_bits([0] * 26, STANDARD_26)


def test_maximal_card_and_overflow():
    bits = encode_bits(255, 65535, STANDARD_26)
    assert decode_bits(bits, STANDARD_26).facility_code == 255
    assert bits_to_word(bits) == std26_reference(255, 65535)
    with pytest.raises(FieldOverflow):
        encode_bits(256, 1, STANDARD_26)
    with pytest.raises(FieldOverflow):
        encode_bits(1, 65536, STANDARD_26)
    with pytest.raises(FieldOverflow):
        encode_bits(-1, 1, STANDARD_26)


def bits_to_word(bits):
    return int("".join(map(str, bits)), 2)


def test_zero_card_encodes():
    word = encode_word(0, 0, STANDARD_26)
    assert word == std26_reference(0, 0) == 1  # only the odd parity bit set
    assert decode_word(word, STANDARD_26) == (0, 0)


@settings(max_examples=500)
@given(st.integers(0, 255), st.integers(0, 65535))
def test_encode_matches_reference(fac, card):
    word = encode_word(fac, card, STANDARD_26)
    assert word == std26_reference(fac, card)
    assert std26_parity_ok(word)
    assert decode_word(word, STANDARD_26) == (fac, card)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    fac = rng.integers(0, 256, 1000).astype(np.uint64)
    ids = rng.integers(0, 65536, 1000).astype(np.uint64)
    words = encode_word(fac, ids, STANDARD_26)
    assert [int(w) for w in words] == [std26_reference(int(f), int(i)) for f, i in zip(fac, ids)]
    f2, i2 = decode_word(words, STANDARD_26)
    assert np.array_equal(f2, fac) and np.array_equal(i2, ids)
    with pytest.raises(ParityError):
        decode_word(words ^ np.uint64(1 << 5), STANDARD_26)


def test_every_single_bit_flip_caught_by_exactly_one_check():
    rng = random.Random(1)
    even_bit, even_mask, odd_bit, odd_mask = STANDARD_26.parity_rule
    for _ in range(300):
        word = encode_word(rng.randrange(256), rng.randrange(65536), STANDARD_26)
        for k in range(26):
            bad = word ^ (1 << k)
            even_fail = bin(bad & (even_mask | even_bit)).count("1") % 2 != 0
            odd_fail = bin(bad & (odd_mask | odd_bit)).count("1") % 2 != 1
            assert even_fail != odd_fail
            assert not parity_ok(bad, STANDARD_26)
            with pytest.raises(ParityError):
                decode_word(bad, STANDARD_26)


def test_std26_parity_groups_follow_h10301():
    even_bit, even_mask, odd_bit, odd_mask = STANDARD_26.parity_rule
    assert even_bit == 1 << 25 and odd_bit == 1
    assert even_mask == sum(1 << (25 - p) for p in range(1, 13))
    assert odd_mask == sum(1 << (25 - p) for p in range(13, 25))


def test_unique37():
    assert UNIQUE_37.bit_length == 37 and UNIQUE_37.facility_bits == 0 and UNIQUE_37.id_bits == 35
    bits = encode_bits(0, 2**35 - 1, UNIQUE_37)
    assert decode_bits(bits, UNIQUE_37).card_id == 2**35 - 1
    even_bit, even_mask, odd_bit, odd_mask = UNIQUE_37.parity_rule
    assert bin(even_mask).count("1") == bin(odd_mask).count("1") == 18
    assert even_mask & odd_mask == 1 << (36 - 18)  # bit 19 shared
    with pytest.raises(FieldOverflow):
        encode_bits(1, 0, UNIQUE_37)
    flipped = list(bits)
    flipped[10] ^= 1
    with pytest.raises(ParityError):
        decode_bits(flipped, UNIQUE_37)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        decode_bits([0, 1] * 10, STANDARD_26)
    with pytest.raises(LengthMismatch):
        decode_bits("01x", STANDARD_26)
    with pytest.raises(LengthMismatch):
        decode_word(1 << 26, STANDARD_26)


def test_custom_formats_skip_parity_unless_envelope():
    split = parse_format("FFFFPIIIIIIIIP")
    assert split.parity_rule is None
    assert decode_bits("0" * 14, split) == Credential(0, 0, 14, (0,) * 14)
    envelope = parse_format("PFFFFIIIIIIIIP", name="wiegand14")
    assert envelope.parity_rule is not None
    with pytest.raises(ParityError):
        decode_bits("0" * 14, envelope)
    assert decode_word(encode_word(9, 200, envelope), envelope) == (9, 200)


@settings(max_examples=200)
@given(pattern=st.text(alphabet="PFI", min_size=1, max_size=40).filter(lambda p: "I" in p),
       lead=st.integers(0, 3), trail=st.integers(0, 3), data=st.data())
def test_custom_round_trip(pattern, lead, trail, data):
    fmt = parse_format(pattern, lead, trail)
    fac = data.draw(st.integers(0, 2**fmt.facility_bits - 1))
    card = data.draw(st.integers(0, 2**fmt.id_bits - 1))
    cred = decode_bits(encode_bits(fac, card, fmt), fmt)
    assert (cred.facility_code, cred.card_id, cred.bit_count) == (fac, card, fmt.bit_length)


# reader configuration

def test_render_output():
    cred = Credential(12, 1234, 26, ())
    assert render_output(cred, ReaderConfig(lead_chars="$%")) == "$%1234"
    assert render_output(Credential(0, 42, 26, ())) == "42"
    assert render_output(cred, ReaderConfig(lead_chars="<", trail_chars=">", hide_id=True)) == "<>"
    assert render_output(cred, ReaderConfig(facility_delimiter=":")) == "12:1234"


def test_valid_data_time_clamps():
    cfg = ReaderConfig()
    assert set_valid_data_time(cfg, 500).valid_data_time_ms == 900
    assert set_valid_data_time(cfg, 900).valid_data_time_ms == 900
    assert set_valid_data_time(cfg, 1500).valid_data_time_ms == 1500


def test_affix_limit_lead_priority():
    cfg = ReaderConfig(lead_chars="ABCD", trail_chars="XY")
    assert (cfg.lead_chars, cfg.trail_chars) == ("ABC", "")
    cfg = ReaderConfig(lead_chars="A", trail_chars="XYZ")
    assert (cfg.lead_chars, cfg.trail_chars) == ("A", "XY")
    assert strip_lead_chars(add_lead_chars(cfg, "QQ")).lead_chars == ""
    assert hide_id(cfg).hide_id


@given(st.text(max_size=6), st.text(max_size=6))
def test_affix_invariant(lead, trail):
    cfg = ReaderConfig(lead_chars=lead, trail_chars=trail)
    assert len(cfg.lead_chars) + len(cfg.trail_chars) <= 3
    assert cfg.lead_chars == lead[:3]


def test_read_card_accept_filter(tmp_path):
    bits26 = encode_bits(1, 1, STANDARD_26)
    bits37 = encode_bits(0, 77, UNIQUE_37)
    assert read_card(bits26).card_id == 1
    assert read_card(bits37).card_id == 77
    with pytest.raises(LengthMismatch):
        read_card(bits37, ReaderConfig(accept=Accept.STANDARD_26))
    with pytest.raises(LengthMismatch):
        read_card(bits26, ReaderConfig(accept=Accept.UNIQUE_37))


def test_format_registry(tmp_path):
    path = tmp_path / "formats.txt"
    path.write_text("# name pattern lead trail\nshort FFFFIIIIIIII 0 0\nstripped FFFFFIIIIIIIIIIIIIIIIIIII 2 1\n")
    formats = load_formats(path)
    assert {"std26", "unique37", "short", "stripped"} <= set(formats)
    assert formats["stripped"].bit_length == 28
    bits = encode_bits(3, 200, formats["short"])
    assert read_card(bits, formats=formats).card_id == 200
    # reader-level parity counts apply to custom formats without their own
    padded = (1,) + bits + (0, 1)
    cred = read_card(padded, ReaderConfig(leading_parity=1, trailing_parity=2), formats)
    assert (cred.facility_code, cred.card_id) == (3, 200)
    path.write_text("bad PFVIP 0 0\n")
    with pytest.raises(InvalidFormat):
        load_formats(path)
