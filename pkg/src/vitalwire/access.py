"""Badge-driven workstation lock/unlock session.

Simple enrollments unlock on the badge alone. Strong enrollments ask for a
password after the badge. While unlocked, presenting the same badge again
locks the session (there is no proximity sensor, so re-presentation stands
in for the user walking away). A badge read is ignored if the same badge
was accepted less than ``valid_data_time_ms`` earlier.

| state             | event                     | action         | next state        |
|-------------------|---------------------------|----------------|-------------------|
| Locked            | simple badge              | Unlock         | Unlocked          |
| Locked            | strong badge              | PromptPassword | AwaitingPassword  |
| Locked            | unknown badge             | Deny           | Locked            |
| AwaitingPassword  | any badge                 | as if Locked   |                   |
| AwaitingPassword  | right password, same id   | Unlock         | Unlocked          |
| AwaitingPassword  | wrong password, same id   | Deny           | Locked            |
| Unlocked          | current user's badge      | Lock           | Locked            |
| Unlocked          | any other badge           | Ignore         | Unlocked          |

A password with no matching prompt raises :class:`OutOfOrder`.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .badge import MIN_VALID_DATA_TIME_MS
from .errors import OutOfOrder

logger = logging.getLogger(__name__)

PBKDF2_ITERATIONS = 200_000
SALT_BYTES = 16


class State(enum.Enum):
    LOCKED = "Locked"
    AWAITING_PASSWORD = "AwaitingPassword"
    UNLOCKED = "Unlocked"


class Mode(enum.Enum):
    SIMPLE = "simple"
    STRONG = "strong"


class Action(enum.Enum):
    UNLOCK = "Unlock"
    PROMPT_PASSWORD = "PromptPassword"
    LOCK = "Lock"
    IGNORE = "Ignore"
    DENY = "Deny"


def hash_password(password: str, salt: bytes, iterations: int = PBKDF2_ITERATIONS) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations)


@dataclass(frozen=True)
class Enrollment:
    badge_id: str
    mode: Mode = Mode.SIMPLE
    salt: bytes = b""
    pw_hash: bytes = b""


class AccessDB:
    """Enrolled badges, stored as ``badge_id|salt|hash|mode`` lines (hex salt/hash)."""

    def __init__(self, iterations: int = PBKDF2_ITERATIONS):
        self.iterations = iterations
        self.entries: dict[str, Enrollment] = {}

    def enroll(self, badge_id: str, mode: Mode = Mode.SIMPLE, password: str | None = None) -> Enrollment:
        badge_id = str(badge_id)
        if not badge_id or "|" in badge_id or any(c.isspace() for c in badge_id):
            raise ValueError(f"badge id {badge_id!r} must be non-empty without '|' or spaces")
        if mode is Mode.STRONG:
            if not password:
                raise ValueError("strong enrollment needs a password")
            salt = os.urandom(SALT_BYTES)
            entry = Enrollment(badge_id, mode, salt, hash_password(password, salt, self.iterations))
        else:
            entry = Enrollment(badge_id, mode)
        self.entries[badge_id] = entry
        return entry

    def check_password(self, badge_id: str, password: str) -> bool:
        entry = self.entries.get(badge_id)
        if entry is None or entry.mode is not Mode.STRONG:
            return False
        return hmac.compare_digest(entry.pw_hash, hash_password(password, entry.salt, self.iterations))

    def __contains__(self, badge_id) -> bool:
        return badge_id in self.entries

    def get(self, badge_id) -> Enrollment | None:
        return self.entries.get(badge_id)

    @classmethod
    def load(cls, path, iterations: int = PBKDF2_ITERATIONS) -> "AccessDB":
        db = cls(iterations)
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.strip().split("|")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected badge_id|salt|hash|mode")
            badge_id, salt, pw_hash, mode = parts
            try:
                db.entries[badge_id] = Enrollment(badge_id, Mode(mode), bytes.fromhex(salt), bytes.fromhex(pw_hash))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
        return db

    def save(self, path):
        path = Path(path)
        lines = [f"{e.badge_id}|{e.salt.hex()}|{e.pw_hash.hex()}|{e.mode.value}\n" for e in self.entries.values()]
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
        with os.fdopen(fd, "w") as fh:
            fh.writelines(lines)
        os.replace(tmp, path)


@dataclass
class AccessSession:
    db: AccessDB
    valid_data_time_ms: int = MIN_VALID_DATA_TIME_MS
    state: State = State.LOCKED
    current_user: str | None = None
    pending: str | None = None
    last_read: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.valid_data_time_ms = max(int(self.valid_data_time_ms), MIN_VALID_DATA_TIME_MS)

    def handle_badge(self, badge_id: str, now_ms: int) -> Action:
        last = self.last_read.get(badge_id)
        if last is not None and now_ms - last < self.valid_data_time_ms:
            return Action.IGNORE
        self.last_read[badge_id] = now_ms

        if self.state is State.UNLOCKED:
            if badge_id == self.current_user:
                self.state, self.current_user = State.LOCKED, None
                return Action.LOCK
            return Action.IGNORE

        # Locked, or a new badge read replacing an outstanding prompt
        self.state, self.pending = State.LOCKED, None
        entry = self.db.get(badge_id)
        if entry is None:
            return Action.DENY
        if entry.mode is Mode.STRONG:
            self.state, self.pending = State.AWAITING_PASSWORD, badge_id
            return Action.PROMPT_PASSWORD
        self.state, self.current_user = State.UNLOCKED, badge_id
        return Action.UNLOCK

    def handle_password(self, badge_id: str, password: str) -> Action:
        if self.state is not State.AWAITING_PASSWORD or self.pending != badge_id:
            raise OutOfOrder(f"no password prompt pending for badge {badge_id!r}")
        self.pending = None
        if self.db.check_password(badge_id, password):
            self.state, self.current_user = State.UNLOCKED, badge_id
            return Action.UNLOCK
        self.state = State.LOCKED
        return Action.DENY


@dataclass(frozen=True)
class ScriptEvent:
    kind: str  # "READ" or "PASS"
    badge_id: str
    time_ms: int
    password: str | None = None


def parse_script(text: str) -> list[ScriptEvent]:
    """``READ <id> <t_ms>`` / ``PASS <id> <pw> <t_ms>`` lines; ``#`` starts a comment."""
    events = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "READ" and len(parts) == 3:
                events.append(ScriptEvent("READ", parts[1], int(parts[2])))
                continue
            if parts[0] == "PASS" and len(parts) == 4:
                events.append(ScriptEvent("PASS", parts[1], int(parts[3]), parts[2]))
                continue
        except ValueError:
            pass
        raise ValueError(f"line {lineno}: cannot parse {raw!r}")
    return events


def run_script(session: AccessSession, events) -> list[tuple[ScriptEvent, str]]:
    """Feed events through the session; protocol violations appear as ``OutOfOrder``."""
    trace = []
    for ev in events:
        if ev.kind == "READ":
            result = session.handle_badge(ev.badge_id, ev.time_ms).value
        else:
            try:
                result = session.handle_password(ev.badge_id, ev.password).value
            except OutOfOrder as exc:
                logger.warning("%s", exc)
                result = "OutOfOrder"
        trace.append((ev, result))
    return trace
