"""Encrypted directory-tree archive (the ``Structure`` file).

File layout::

    b"SHSA"  version 0x01  record count (u32 LE)
    records, each: kind b"D"/b"F"  depth (u16 LE)  name length (u16 LE)
                   name (UTF-8)  [size (u64 LE), files only]
    payload: every file's bytes concatenated in record order and encrypted
             as one continuous RC4 stream

The first record is the archived root directory at depth 0. Records follow
a depth-first walk with entries sorted by name, directories and files
interleaved. Optionally the whole file is then encrypted again in place
with a second key.

There is no MAC. A wrong data key restores a tree of garbage bytes without
any error; a wrong structure key usually surfaces as ``CorruptHeader``.
"""

from __future__ import annotations

import enum
import logging
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

from filelock import FileLock

from .errors import ArchiveIOError, CorruptHeader, MissingStructureFile, SizeMismatch
from .rc4 import ksa

logger = logging.getLogger(__name__)

MAGIC = b"SHSA"
VERSION = 1
STRUCTURE_NAME = "Structure"
_HEAD = struct.Struct("<4sBI")
_REC = struct.Struct("<cHH")
_SIZE = struct.Struct("<Q")


class RecordKind(enum.Enum):
    DIRECTORY = b"D"
    FILE = b"F"


@dataclass(frozen=True)
class ArchiveRecord:
    kind: RecordKind
    depth: int
    name: str
    size: int = 0


@dataclass
class StructureArchive:
    records: list[ArchiveRecord]
    payload: bytes = b""

    @property
    def total_size(self) -> int:
        return sum(r.size for r in self.records if r.kind is RecordKind.FILE)


def _check_name(name: str):
    if not name or name in (".", "..") or "/" in name or "\\" in name or "\0" in name:
        raise CorruptHeader(f"unsafe entry name {name!r}")


def _validate(records: list[ArchiveRecord]):
    if not records:
        raise CorruptHeader("archive has no root record")
    first = records[0]
    if first.kind is not RecordKind.DIRECTORY or first.depth != 0:
        raise CorruptHeader("first record must be the root directory at depth 0")
    # names seen per open directory, indexed by depth of the directory
    open_dirs: list[set[str]] = []
    prev_kind, prev_depth = None, -1
    for k, rec in enumerate(records):
        _check_name(rec.name)
        if k and rec.depth == 0:
            raise CorruptHeader(f"record {k}: second root at depth 0")
        if rec.depth > prev_depth + 1:
            raise CorruptHeader(f"record {k}: depth {rec.depth} skips a level after {prev_depth}")
        if rec.depth == prev_depth + 1 and prev_kind is RecordKind.FILE:
            raise CorruptHeader(f"record {k}: {rec.name!r} nested under a file")
        if rec.kind is RecordKind.DIRECTORY and rec.size:
            raise CorruptHeader(f"record {k}: directory with a size")
        del open_dirs[rec.depth:]
        if rec.depth:
            siblings = open_dirs[rec.depth - 1]
            if rec.name in siblings:
                raise CorruptHeader(f"record {k}: duplicate entry {rec.name!r}")
            siblings.add(rec.name)
        if rec.kind is RecordKind.DIRECTORY:
            open_dirs.append(set())
        prev_kind, prev_depth = rec.kind, rec.depth


def encode_header(records: list[ArchiveRecord]) -> bytes:
    _validate(records)
    out = bytearray(_HEAD.pack(MAGIC, VERSION, len(records)))
    for rec in records:
        name = rec.name.encode("utf-8")
        if rec.depth > 0xFFFF or len(name) > 0xFFFF:
            raise CorruptHeader(f"{rec.name!r}: depth or name length exceeds 16 bits")
        out += _REC.pack(rec.kind.value, rec.depth, len(name)) + name
        if rec.kind is RecordKind.FILE:
            out += _SIZE.pack(rec.size)
    return bytes(out)


def encode_archive(archive: StructureArchive) -> bytes:
    if len(archive.payload) != archive.total_size:
        raise SizeMismatch(f"payload is {len(archive.payload)} bytes, records sum to {archive.total_size}")
    return encode_header(archive.records) + archive.payload


def _need(data: bytes, pos: int, n: int):
    # running off the end is truncation, not a grammar error
    if pos + n > len(data):
        raise SizeMismatch(f"archive ends at byte {len(data)} inside the header (need {pos + n})")


def decode_archive(data: bytes) -> StructureArchive:
    """Parse a decrypted Structure file. The payload stays encrypted."""
    data = bytes(data)
    _need(data, 0, _HEAD.size)
    magic, version, count = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CorruptHeader(f"bad magic {magic!r} (wrong structure key?)")
    if version != VERSION:
        raise CorruptHeader(f"unsupported archive version {version}")
    pos = _HEAD.size
    records = []
    for k in range(count):
        _need(data, pos, _REC.size)
        kind, depth, name_len = _REC.unpack_from(data, pos)
        pos += _REC.size
        try:
            kind = RecordKind(kind)
        except ValueError:
            raise CorruptHeader(f"record {k}: unknown kind {kind!r}") from None
        _need(data, pos, name_len)
        try:
            name = data[pos:pos + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptHeader(f"record {k}: name is not UTF-8") from None
        pos += name_len
        size = 0
        if kind is RecordKind.FILE:
            _need(data, pos, _SIZE.size)
            (size,) = _SIZE.unpack_from(data, pos)
            pos += _SIZE.size
        records.append(ArchiveRecord(kind, depth, name, size))
    _validate(records)
    archive = StructureArchive(records, data[pos:])
    if len(archive.payload) != archive.total_size:
        raise SizeMismatch(f"payload is {len(archive.payload)} bytes, records sum to {archive.total_size}")
    return archive


def walk_tree(root, exclude=()) -> list[tuple[ArchiveRecord, Path]]:
    """Depth-first (record, path) list for ``root``; symlinks and specials skipped."""
    root = Path(root)
    if not root.is_dir():
        raise ArchiveIOError(f"{root} is not a readable directory")
    excluded = {Path(p).resolve() for p in exclude}
    name = root.resolve().name or "root"
    out = [(ArchiveRecord(RecordKind.DIRECTORY, 0, name), root)]

    def visit(directory: Path, depth: int):
        try:
            entries = sorted(os.scandir(directory), key=lambda e: e.name)
        except OSError as exc:
            raise ArchiveIOError(f"cannot list {directory}: {exc}") from exc
        for entry in entries:
            path = Path(entry.path)
            if path.resolve() in excluded:
                continue
            if entry.is_symlink():
                logger.warning("skipping symlink %s", path)
            elif entry.is_dir():
                out.append((ArchiveRecord(RecordKind.DIRECTORY, depth, entry.name), path))
                visit(path, depth + 1)
            elif entry.is_file():
                out.append((ArchiveRecord(RecordKind.FILE, depth, entry.name, entry.stat().st_size), path))
            else:
                logger.warning("skipping special file %s", path)

    visit(root, 1)
    return out


def _lock(path: Path) -> FileLock:
    return FileLock(str(path) + ".lock")


def _write_atomic(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def build_archive(root, key, exclude=()) -> StructureArchive:
    """Walk ``root`` and encrypt its files into an in-memory archive."""
    state = ksa(key)
    entries = walk_tree(root, exclude)
    records, payload = [], bytearray()
    for rec, path in entries:
        if rec.kind is RecordKind.FILE:
            try:
                content = path.read_bytes()
            except OSError as exc:
                raise ArchiveIOError(f"cannot read {path}: {exc}") from exc
            rec = ArchiveRecord(rec.kind, rec.depth, rec.name, len(content))
            payload += state.apply(content)
        records.append(rec)
    return StructureArchive(records, bytes(payload))


def crypt_data(root, key, out=STRUCTURE_NAME, remove: bool = False) -> StructureArchive:
    """Archive ``root`` into ``out``; delete ``root`` only when ``remove`` is set."""
    out = Path(out)
    with _lock(out):
        archive = build_archive(root, key, exclude=(out, str(out) + ".lock"))
        try:
            _write_atomic(out, encode_archive(archive))
        except OSError as exc:
            raise ArchiveIOError(f"cannot write {out}: {exc}") from exc
    logger.info("archived %d records, %d payload bytes into %s", len(archive.records), archive.total_size, out)
    if remove:
        shutil.rmtree(root)
        logger.info("removed original tree %s", root)
    return archive


def crypt_file_structure(key2, path=STRUCTURE_NAME):
    """Encrypt (or decrypt) the whole Structure file in place with ``key2``."""
    path = Path(path)
    with _lock(path):
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise MissingStructureFile(f"{path} does not exist") from None
        except OSError as exc:
            raise ArchiveIOError(f"cannot read {path}: {exc}") from exc
        _write_atomic(path, ksa(key2).apply(data))


def extract_archive(archive: StructureArchive, key, dest) -> Path:
    """Recreate the archived tree under ``dest``; returns the root path."""
    dest = Path(dest)
    state = ksa(key)
    stack: list[Path] = []
    offset = 0
    for rec in archive.records:
        del stack[rec.depth:]
        path = (stack[-1] if stack else dest) / rec.name
        if rec.kind is RecordKind.DIRECTORY:
            try:
                path.mkdir(parents=rec.depth == 0, exist_ok=False)
            except FileExistsError:
                raise ArchiveIOError(f"{path} already exists, refusing to overwrite") from None
            stack.append(path)
        else:
            chunk = archive.payload[offset:offset + rec.size]
            offset += rec.size
            path.write_bytes(state.apply(chunk))
    return dest / archive.records[0].name


def restore_data(key, path=STRUCTURE_NAME, dest=None, structure_key=None) -> Path:
    """Restore the tree from a Structure file, then delete the file.

    ``structure_key`` first undoes the in-place whole-file encryption. The
    tree is recreated under ``dest`` (default: the archive's directory).
    """
    path = Path(path)
    dest = Path(dest) if dest is not None else path.parent
    with _lock(path):
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise MissingStructureFile(f"{path} does not exist") from None
        if structure_key is not None:
            data = ksa(structure_key).apply(data)
        archive = decode_archive(data)
        root = extract_archive(archive, key, dest)
        path.unlink()
    logger.info("restored %s from %s", root, path)
    return root
