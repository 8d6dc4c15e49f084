"""Command line entry point: ``vitalwire <command> ...``.

Exit status is 0 on success, 1 when the input data is rejected and 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import csv
import getpass
import logging
import os
import socket
import sys
from pathlib import Path

import numpy as np

from . import access, archive, ats, badge, ecg_id, gateway, telemetry, wire
from .errors import VitalwireError

logger = logging.getLogger("vitalwire")


# input helpers

def read_bytes(path, hex_text: bool | None = None) -> bytes:
    """Raw bytes, or whitespace-separated hex with ``#`` comments for .hex files."""
    path = Path(path)
    if hex_text is None:
        hex_text = path.suffix.lower() == ".hex"
    if not hex_text:
        return path.read_bytes()
    lines = (line.split("#", 1)[0] for line in path.read_text().splitlines())
    return bytes.fromhex(" ".join(lines))


def _numeric_rows(path) -> list[list[float]]:
    rows = []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            row = [c.strip() for c in row if c.strip()]
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if k == 0:
                    continue  # header line
                raise ValueError(f"{path}: line {k + 1} is not numeric: {row}") from None
    return rows


def read_ecg_csv(path, millivolts: bool = False) -> np.ndarray:
    """ECG samples from the last column of a CSV (raw 0..255 unless ``millivolts``)."""
    values = np.array([row[-1] for row in _numeric_rows(path)], dtype=float)
    return values if millivolts else telemetry.ecg_to_mv(values)


def read_acc_csv(path) -> list[tuple[int, int, int]]:
    """``sample_index,x,y,z`` rows (the index column is optional)."""
    out = []
    for row in _numeric_rows(path):
        if len(row) not in (3, 4):
            raise ValueError(f"{path}: expected x,y,z or index,x,y,z columns, got {len(row)}")
        out.append(tuple(int(v) for v in row[-3:]))
    return out


def _store_path(args) -> Path:
    path = args.store or os.environ.get("VITALWIRE_STORE")
    if not path:
        raise SystemExit(_usage_error(args, "no profile store: pass --store or set VITALWIRE_STORE"))
    return Path(path)


def _usage_error(args, message: str) -> int:
    args.parser.print_usage(sys.stderr)
    print(f"{args.parser.prog}: error: {message}", file=sys.stderr)
    return 2


def _describe(p: wire.AlivePacket) -> str:
    h = p.header
    return (f"seq={h.sequence} battery={h.battery_percent:.1f}% event={int(h.event_flag)} "
            f"ecg={len(p.ecg.samples)}@{p.ecg.data_format.sample_rate_hz}Hz "
            f"acc={len(p.acc.samples) // 3}@{p.acc.data_format.sample_rate_hz}Hz "
            f"len={p.encoded_length} checksum={'ok' if p.checksum_ok else 'BAD'}")


# commands

def cmd_wire_decode(args) -> int:
    packet = wire.decode_packet(read_bytes(args.file, args.hex))
    print(_describe(packet))
    if args.samples:
        print("ecg", " ".join(map(str, packet.ecg.samples)))
        print("acc", " ".join(f"{x},{y},{z}" for x, y, z in packet.acc.triplets))
    return 0 if packet.checksum_ok else 1


def cmd_wire_replay(args) -> int:
    data = read_bytes(args.file, args.hex)
    parser = wire.StreamParser(verify=not args.no_verify)
    for start in range(0, len(data), args.chunk):
        for packet in parser.feed(data[start:start + args.chunk]):
            print(_describe(packet))
    s = parser.stats
    print(f"packets={s.packets_ok} checksum_failures={s.checksum_failures} resyncs={s.resyncs} "
          f"sequence_gaps={s.sequence_gaps} discarded={s.bytes_discarded} pending={len(parser.buffer)}")
    return 0


def cmd_ats_dump(args) -> int:
    f = ats.decode_ats(Path(args.file).read_bytes())
    h = f.header
    print(f"date={h.date[0]:04d}-{h.date[1]:02d}-{h.date[2]:02d} time={h.time[0]:02d}:{h.time[1]:02d}:{h.time[2]:02d}")
    print(f"header_len={h.header_len} channels={h.channels} block_len={h.block_len} "
          f"blocks={len(f.blocks)} declared_blocks={h.num_data_blocks} trailing_bytes={len(f.trailing)}")
    for k, d in enumerate(f.channel_descs):
        rate = f"{d.sample_rate_hz}Hz" if d.sample_rate_hz else "-"
        print(f"channel {k}: type={d.data_type.name}(0x{d.data_type:02X}) format=0x{d.data_format:02X} "
              f"packet_len={d.packet_len} rate={rate}")
    return 0


def cmd_ats_extract(args) -> int:
    f = ats.decode_ats(Path(args.file).read_bytes())
    for s in ats.samples(f, args.channel):
        print(",".join(map(str, s)) if isinstance(s, tuple) else s)
    return 0


def cmd_detect_falls(args) -> int:
    config = telemetry.FallDetectorConfig(window=args.window, delta_threshold=args.threshold,
                                          hold_seconds=args.hold)
    events = telemetry.detect_falls(read_acc_csv(args.input), config)
    for e in events:
        print(f"fall index={e.sample_index} axis={e.trigger_axis.name} baseline={e.baseline_raw} "
              f"extremum={e.extremum_raw} mean={e.window_mean:.2f} "
              f"confirmed={'yes' if e.confirmed else 'no'}"
              + (f" confirm_index={e.confirm_index}" if e.confirmed else ""))
    print(f"events={len(events)} confirmed={sum(e.confirmed for e in events)}")
    return 0


def cmd_heart_rate(args) -> int:
    ecg = read_ecg_csv(args.input, args.mv)
    rates = telemetry.heart_rate(ecg, args.rate)
    for r in rates:
        print(f"{r:.1f}")
    if rates.size:
        print(f"mean_bpm={rates.mean():.1f} beats={rates.size + 1}")
    else:
        print("mean_bpm=nan beats<2")
    return 0


def _beats(args):
    return ecg_id.beats_from_ecg(read_ecg_csv(args.input, args.mv), args.rate)


def cmd_enroll(args) -> int:
    store = ecg_id.ProfileStore.load(_store_path(args))
    beats = _beats(args)
    profile = ecg_id.enroll(store, args.id, beats, replace=args.replace)
    print(f"enrolled {profile.person_id} from {profile.beat_count} beats into {store.path}")
    return 0


def cmd_identify(args) -> int:
    store = ecg_id.ProfileStore.load(_store_path(args))
    pid, dist = ecg_id.identify(store, _beats(args), mode=args.mode)
    print(f"{pid} distance={dist:.4f}")
    return 0


def cmd_verify(args) -> int:
    store = ecg_id.ProfileStore.load(_store_path(args))
    threshold = args.threshold if args.threshold is not None else ecg_id.chi2_threshold()
    beats = _beats(args)
    ok = ecg_id.verify(store, args.id, beats, threshold)
    dist = ecg_id.mahalanobis(np.mean(beats, axis=0), store[args.id])
    print(f"{'accept' if ok else 'reject'} {args.id} distance={dist:.4f} threshold={threshold:.4f}")
    return 0 if ok else 1


def _badge_format(args) -> badge.BadgeFormat:
    formats = badge.load_formats(args.formats) if args.formats else dict(badge.BUILTIN_FORMATS)
    try:
        return formats[args.format]
    except KeyError:
        raise badge.InvalidFormat(f"unknown format {args.format!r}; known: {', '.join(sorted(formats))}") from None


def cmd_badge_decode(args) -> int:
    fmt = _badge_format(args)
    text = args.bits.lower().removeprefix("0x")
    try:
        word = int(text, 16)
    except ValueError:
        raise badge.LengthMismatch(f"--bits {args.bits!r} is not hexadecimal") from None
    if word >> fmt.bit_length:
        raise badge.LengthMismatch(f"0x{text} is wider than the {fmt.bit_length}-bit {fmt.name} format")
    cred = badge.decode_bits(badge.bits_from_int(word, fmt.bit_length), fmt)
    config = badge.ReaderConfig(lead_chars=args.lead, trail_chars=args.trail, hide_id=args.hide_id,
                                facility_delimiter=args.delimiter)
    print(f"format={fmt.name} bits={fmt.bit_length} facility={cred.facility_code} id={cred.card_id}")
    print(f"output={badge.render_output(cred, config)}")
    return 0


def cmd_badge_encode(args) -> int:
    fmt = _badge_format(args)
    word = badge.encode_word(args.facility, args.id, fmt)
    width = (fmt.bit_length + 3) // 4
    print(f"hex=0x{word:0{width}X} bits={''.join(map(str, badge.bits_from_int(word, fmt.bit_length)))}")
    return 0


def _key(text: str | None) -> bytes | None:
    return None if text is None else text.encode("utf-8")


def cmd_crypt(args) -> int:
    arc = archive.crypt_data(args.root, _key(args.key), out=args.out, remove=args.remove)
    if args.structure_key is not None:
        archive.crypt_file_structure(_key(args.structure_key), args.out)
    files = sum(r.kind is archive.RecordKind.FILE for r in arc.records)
    print(f"wrote {args.out}: {len(arc.records)} records, {files} files, {arc.total_size} payload bytes")
    return 0


def cmd_restore(args) -> int:
    root = archive.restore_data(_key(args.key), args.out, dest=args.dest,
                                structure_key=_key(args.structure_key))
    print(f"restored {root}")
    return 0


def cmd_forward(args) -> int:
    if (args.listen is None) == (args.input is None):
        return _usage_error(args, "give exactly one of --listen or --input")
    if args.output is not None and args.downstream is not None:
        return _usage_error(args, "--output and --downstream are mutually exclusive")
    if args.chunk < 1:
        return _usage_error(args, "--chunk must be at least 1")
    downstream = gateway.parse_endpoint(args.downstream or "", gateway.DEFAULT_DOWNSTREAM_PORT)

    if args.listen is not None:
        if args.output is not None:
            return _usage_error(args, "--output needs --input; TCP mode forwards to --downstream")
        config = gateway.ForwarderConfig(gateway.parse_endpoint(args.listen), downstream, args.chunk)
        results = gateway.run_forwarder(config, connections=args.connections)
    else:
        with open(args.input, "rb") as src:
            read = lambda: src.read(args.read_size)
            if args.output is not None:
                with open(args.output, "wb") as dst:
                    results = [gateway.forward_stream(read, dst.write, args.chunk)]
            else:
                try:
                    sock = socket.create_connection((downstream.host, downstream.port))
                except OSError as exc:
                    raise gateway.DownstreamUnreachable(f"cannot reach {downstream}: {exc}") from exc
                with sock:
                    results = [gateway.forward_stream(read, sock.sendall, args.chunk)]
    for s in results:
        print(f"bytes={s.bytes_out} chunks={s.chunks} partial_chunks={s.partial_chunks}")
    return 0


def cmd_access_simulate(args) -> int:
    db = access.AccessDB.load(args.access_db, iterations=args.iterations) if args.access_db else access.AccessDB()
    session = access.AccessSession(db, valid_data_time_ms=args.valid_data_time)
    events = access.parse_script(Path(args.script).read_text())
    violations = 0
    for ev, result in access.run_script(session, events):
        who = ev.badge_id if ev.kind == "READ" else f"{ev.badge_id} ***"
        print(f"{ev.time_ms} {ev.kind} {who} -> {result}")
        violations += result == "OutOfOrder"
    print(f"final_state={session.state.value}")
    return 1 if violations else 0


def cmd_access_enroll(args) -> int:
    path = Path(args.access_db)
    db = access.AccessDB.load(path, iterations=args.iterations) if path.exists() else access.AccessDB(args.iterations)
    mode = access.Mode.STRONG if args.strong else access.Mode.SIMPLE
    password = args.password
    if mode is access.Mode.STRONG and password is None:
        password = getpass.getpass(f"password for {args.id}: ")
    db.enroll(args.id, mode, password)
    db.save(path)
    print(f"enrolled badge {args.id} ({mode.value}) in {path}")
    return 0


# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vitalwire", description="Wearable monitor data and access tooling.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", metavar="command")

    def add(parent, name, func, help_text):
        sp = parent.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=func, parser=sp)
        return sp

    def hex_flag(sp):
        sp.add_argument("--hex", action="store_true", default=None,
                        help="input is hex text (default for *.hex files)")

    w = sub.add_parser("wire", help="decode monitor packets").add_subparsers(dest="action", metavar="action", required=True)
    sp = add(w, "decode", cmd_wire_decode, "decode a single packet")
    sp.add_argument("file")
    hex_flag(sp)
    sp.add_argument("--samples", action="store_true", help="also print sample values")
    sp = add(w, "replay", cmd_wire_replay, "frame a recorded byte stream")
    sp.add_argument("file")
    hex_flag(sp)
    sp.add_argument("--chunk", type=int, default=4096, help="bytes fed per parser call")
    sp.add_argument("--no-verify", action="store_true", help="emit packets with bad checksums")

    a = sub.add_parser("ats", help="inspect ATS recordings").add_subparsers(dest="action", metavar="action", required=True)
    sp = add(a, "dump", cmd_ats_dump, "print header and channel table")
    sp.add_argument("file")
    sp = add(a, "extract", cmd_ats_extract, "print one channel's samples")
    sp.add_argument("file")
    sp.add_argument("--channel", type=int, required=True)

    sp = add(sub, "detect-falls", cmd_detect_falls, "run the fall detector on an accelerometer CSV")
    sp.add_argument("--input", required=True, help="CSV of sample_index,x,y,z raw counts")
    sp.add_argument("--threshold", type=int, default=30)
    sp.add_argument("--window", type=int, default=23)
    sp.add_argument("--hold", type=float, default=8.0, help="seconds flat to confirm")

    def ecg_input(sp, rate_default=300):
        sp.add_argument("--input", required=True, help="ECG CSV, value in the last column")
        sp.add_argument("--rate", type=int, default=rate_default, help="sample rate in Hz")
        sp.add_argument("--mv", action="store_true", help="values are millivolts, not raw counts")

    sp = add(sub, "heart-rate", cmd_heart_rate, "per-beat heart rate from an ECG CSV")
    ecg_input(sp)

    def store_flag(sp):
        sp.add_argument("--store", help="profile file (default: $VITALWIRE_STORE)")

    sp = add(sub, "enroll", cmd_enroll, "enroll an ECG profile")
    sp.add_argument("--id", required=True)
    ecg_input(sp)
    store_flag(sp)
    sp.add_argument("--replace", action="store_true", help="overwrite an existing profile")
    sp = add(sub, "identify", cmd_identify, "closest enrolled profile for an ECG")
    ecg_input(sp)
    store_flag(sp)
    sp.add_argument("--mode", choices=("average", "vote"), default="average")
    sp = add(sub, "verify", cmd_verify, "check an ECG against one profile")
    sp.add_argument("--id", required=True)
    ecg_input(sp)
    store_flag(sp)
    sp.add_argument("--threshold", type=float, help="distance limit (default: chi-square 99%% bound)")

    b = sub.add_parser("badge", help="badge bit formats").add_subparsers(dest="action", metavar="action", required=True)

    def fmt_flags(sp):
        sp.add_argument("--format", default="std26", help="format name (std26, unique37 or from --formats)")
        sp.add_argument("--formats", help="format registry file")

    sp = add(b, "decode", cmd_badge_decode, "decode a card word")
    sp.add_argument("--bits", required=True, help="card word in hex")
    fmt_flags(sp)
    sp.add_argument("--lead", default="", help="characters sent before the id")
    sp.add_argument("--trail", default="", help="characters sent after the id")
    sp.add_argument("--hide-id", action="store_true")
    sp.add_argument("--delimiter", help="print facility<delimiter>id")
    sp = add(b, "encode", cmd_badge_encode, "build a card word")
    sp.add_argument("--facility", type=int, default=0)
    sp.add_argument("--id", type=int, required=True)
    fmt_flags(sp)

    sp = add(sub, "crypt", cmd_crypt, "encrypt a directory tree into a Structure archive")
    sp.add_argument("--root", required=True)
    sp.add_argument("--key", required=True)
    sp.add_argument("--structure-key", help="second key for the whole archive file")
    sp.add_argument("--remove", action="store_true", help="delete the original tree afterwards")
    sp.add_argument("--out", default=archive.STRUCTURE_NAME, help="archive path (default: ./Structure)")
    sp = add(sub, "restore", cmd_restore, "restore a tree from a Structure archive")
    sp.add_argument("--key", required=True)
    sp.add_argument("--structure-key")
    sp.add_argument("--out", default=archive.STRUCTURE_NAME, help="archive path (default: ./Structure)")
    sp.add_argument("--dest", help="parent directory for the restored tree (default: archive's directory)")

    sp = add(sub, "forward", cmd_forward, "relay a byte stream in fixed-size chunks")
    sp.add_argument("--listen", help="HOST:PORT to accept the upstream connection on")
    sp.add_argument("--input", help="read the upstream stream from a file instead")
    sp.add_argument("--downstream", help=f"HOST[:PORT] (default 127.0.0.1:{gateway.DEFAULT_DOWNSTREAM_PORT})")
    sp.add_argument("--output", help="write the downstream stream to a file instead")
    sp.add_argument("--chunk", type=int, default=gateway.DEFAULT_CHUNK_SIZE)
    sp.add_argument("--connections", type=int, default=1, help="upstream clients to serve (TCP mode)")
    sp.add_argument("--read-size", type=int, default=4096, help=argparse.SUPPRESS)

    ac = sub.add_parser("access", help="badge lock/unlock session").add_subparsers(dest="action", metavar="action", required=True)
    sp = add(ac, "simulate", cmd_access_simulate, "run an event script through the session")
    sp.add_argument("--script", required=True)
    sp.add_argument("--access-db", help="enrollment file")
    sp.add_argument("--valid-data-time", type=int, default=badge.MIN_VALID_DATA_TIME_MS)
    sp.add_argument("--iterations", type=int, default=access.PBKDF2_ITERATIONS, help=argparse.SUPPRESS)
    sp = add(ac, "enroll", cmd_access_enroll, "add a badge to the enrollment file")
    sp.add_argument("--access-db", required=True)
    sp.add_argument("--id", required=True)
    sp.add_argument("--strong", action="store_true", help="require a password after the badge")
    sp.add_argument("--password", help="prompted for when omitted")
    sp.add_argument("--iterations", type=int, default=access.PBKDF2_ITERATIONS, help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (VitalwireError, OSError, ValueError) as exc:
        print(f"vitalwire: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
