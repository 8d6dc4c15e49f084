"""Independent reference implementations and signal generators for tests.

Nothing here imports the code under test; each oracle is written directly
from the format or algorithm it checks.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np


# RC4, written straight from the KSA/PRGA pseudocode

def rc4_reference_keystream(key: bytes, n: int) -> bytes:
    S = list(range(256))
    j = 0
    for i in range(256):
        j = (j + S[i] + key[i % len(key)]) % 256
        S[i], S[j] = S[j], S[i]
    i = j = 0
    out = bytearray()
    for _ in range(n):
        i = (i + 1) % 256
        j = (j + S[i]) % 256
        S[i], S[j] = S[j], S[i]
        out.append(S[(S[i] + S[j]) % 256])
    return bytes(out)


# 26-bit badge word, H10301 layout, bit 1 = MSB

def std26_reference(facility: int, card: int) -> int:
    body = [(facility >> (7 - k)) & 1 for k in range(8)] + [(card >> (15 - k)) & 1 for k in range(16)]
    even = sum(body[:12]) % 2  # makes bits 1-13 even
    odd = 1 - sum(body[12:]) % 2  # makes bits 14-26 odd
    bits = [even] + body + [odd]
    word = 0
    for b in bits:
        word = word << 1 | b
    return word


def std26_parity_ok(word: int) -> bool:
    bits = [(word >> (25 - k)) & 1 for k in range(26)]
    return sum(bits[:13]) % 2 == 0 and sum(bits[13:]) % 2 == 1


# Synthetic PQRST beats with exact, sample-aligned landmarks

@dataclass
class BeatShape:
    """Wave timings in ms and amplitudes in mV for one synthetic beat."""
    rr_ms: float = 1000.0
    p_ms: float = 100.0
    pr_segment_ms: float = 60.0
    q_ms: float = 16.7  # QRS onset to Q trough
    qr_ms: float = 26.7  # Q trough to R peak
    rs_ms: float = 26.7  # R peak to S trough
    s_ms: float = 20.0  # S trough to QRS offset
    st_segment_ms: float = 100.0
    t_ms: float = 160.0
    p_amp: float = 0.15
    q_amp: float = -0.15
    r_amp: float = 1.2
    s_amp: float = -0.3
    t_amp: float = 0.35
    r_position: float = 0.5  # R peak as a fraction of the RR interval

    @property
    def qrs_ms(self) -> float:
        return self.q_ms + self.qr_ms + self.rs_ms + self.s_ms


def beat_landmarks(shape: BeatShape, fs: float) -> dict[str, int]:
    """Sample offsets of every landmark within one beat of ``rr`` samples."""
    n = lambda ms: int(round(ms * fs / 1000.0))
    r = n(shape.rr_ms * shape.r_position)
    q = r - n(shape.qr_ms)
    qrs_on = q - n(shape.q_ms)
    p_off = qrs_on - n(shape.pr_segment_ms)
    p_on = p_off - n(shape.p_ms)
    s = r + n(shape.rs_ms)
    qrs_off = s + n(shape.s_ms)
    t_on = qrs_off + n(shape.st_segment_ms)
    t_off = t_on + n(shape.t_ms)
    return dict(p_on=p_on, p_off=p_off, qrs_on=qrs_on, q=q, r=r, s=s, qrs_off=qrs_off,
                t_on=t_on, t_off=t_off, rr=n(shape.rr_ms))


def synth_beat(shape: BeatShape, fs: float) -> np.ndarray:
    L = beat_landmarks(shape, fs)
    y = np.zeros(L["rr"])
    t = np.arange(L["rr"])

    def bump(on, off, amp):
        k = np.arange(on, off + 1)
        y[k] += amp * np.sin(np.pi * (k - on) / (off - on))

    bump(L["p_on"], L["p_off"], shape.p_amp)
    bump(L["t_on"], L["t_off"], shape.t_amp)
    knots_t = [L["qrs_on"], L["q"], L["r"], L["s"], L["qrs_off"]]
    knots_v = [0.0, shape.q_amp, shape.r_amp, shape.s_amp, 0.0]
    k = (t >= L["qrs_on"]) & (t <= L["qrs_off"])
    y[k] += np.interp(t[k], knots_t, knots_v)
    return y


def synth_ecg(shape: BeatShape, fs: float, beats: int, baseline_mv: float = 0.0) -> np.ndarray:
    return np.tile(synth_beat(shape, fs), beats) + baseline_mv


def mv_to_raw(mv: np.ndarray) -> np.ndarray:
    return np.clip(np.round((np.asarray(mv) / 2.66 + 1) * 255 / 2), 0, 255).astype(int)


# Scripted accelerometer simulator (75 Hz, raw counts)

FS_ACC = 75
UP, DOWN, LEVEL = 175, 80, 127


def _clip(v):
    return int(min(255, max(0, round(v))))


def _noise(rng: random.Random, amp: float) -> float:
    return rng.uniform(-amp, amp)


def _hold(rng, sample, n, noise=1.5):
    return [tuple(_clip(c + _noise(rng, noise)) for c in sample) for _ in range(n)]


def _ramp(a, b, n):
    return [tuple(_clip(a[k] + (b[k] - a[k]) * (i + 1) / n) for k in range(3)) for i in range(n)]


def upright(rng: random.Random):
    axis = rng.choice((0, 1))
    value = rng.choice((UP, DOWN))
    s = [LEVEL, LEVEL, LEVEL]
    s[axis] = value
    return tuple(s), axis


def simulate_fall(rng: random.Random, threshold: int = 30, window: int = 23):
    """A labelled fall trace and the checks it was built to satisfy.

    Standing (or lying flat, then dropped), a drop of at most 10 samples with
    an optional impact spike, then at least 8 s flat on the ground.
    """
    if rng.random() < 0.75:
        start, axis = upright(rng)
    else:
        start, axis = (LEVEL, LEVEL, rng.choice((UP, DOWN))), 2
    end = (LEVEL, LEVEL, rng.choice((UP, DOWN)))
    if end == start:
        end = (LEVEL, LEVEL, UP if start[2] == DOWN else DOWN)
    pre = _hold(rng, start, rng.randint(40, 150))
    fall_len = rng.randint(3, 10)
    free_fall = [LEVEL, LEVEL, LEVEL]
    fall = _ramp(start, free_fall, fall_len // 2 + 1) + _ramp(free_fall, end, fall_len - fall_len // 2)
    impact = []
    if rng.random() < 0.5:
        spike = list(end)
        spike[2] += (25 if end[2] == UP else -25)
        impact = _hold(rng, tuple(spike), rng.randint(1, 3)) + _hold(rng, end, 2)
    post = _hold(rng, end, int(FS_ACC * 8) + rng.randint(20, 150))
    trace = pre + fall + impact + post

    # conditions the detector must be able to see
    baseline = start[axis]
    win = [s[axis] for s in (fall + impact + post)[:window]]
    extremum = min(win) if baseline > LEVEL else max(win)
    mean = sum(win) / len(win)
    assert abs(extremum - baseline) >= threshold
    assert (mean < baseline) if baseline > LEVEL else (mean > baseline)
    return trace


def simulate_non_fall(rng: random.Random, kind: str | None = None):
    """Walking noise, a bounce, a stumble, or a slow lie-down."""
    kind = kind or rng.choice(("walk", "bounce", "stumble", "lie_down"))
    start, axis = upright(rng)
    if kind == "walk":
        amp = rng.uniform(4, 11)
        period = rng.uniform(0.8, 1.3) * FS_ACC
        trace = []
        for i in range(rng.randint(600, 1200)):
            phase = 2 * math.pi * i / period
            s = list(start)
            s[axis] += amp * math.sin(phase) + _noise(rng, 2)
            s[(axis + 1) % 3] += 0.5 * amp * math.cos(phase) + _noise(rng, 2)
            s[2 if axis != 2 else 0] += _noise(rng, 2)
            trace.append(tuple(_clip(c) for c in s))
        return trace
    pre = _hold(rng, start, rng.randint(40, 150))
    if kind == "bounce":
        # dip and equal rebound: the window mean returns to baseline
        depth = rng.randint(35, 60)
        n = rng.randint(2, 4)
        sign = -1 if start[axis] > LEVEL else 1
        dip = list(start); dip[axis] += sign * depth
        reb = list(start); reb[axis] -= sign * depth
        return pre + _hold(rng, tuple(dip), n, 0) + _hold(rng, tuple(reb), n, 0) + _hold(rng, start, 900)
    if kind == "stumble":
        # sharp dip, then upright again
        depth = rng.randint(35, 60)
        sign = -1 if start[axis] > LEVEL else 1
        dip = list(start); dip[axis] += sign * depth
        return pre + _ramp(start, dip, 3) + _ramp(dip, start, 5) + _hold(rng, start, 900)
    # slow lie-down over 2-4 s, then flat
    end = (LEVEL, LEVEL, rng.choice((UP, DOWN)))
    n = rng.randint(2 * FS_ACC, 4 * FS_ACC)
    return pre + _ramp(start, end, n) + _hold(rng, end, 900)


# Random directory trees

def make_random_tree(root, rng: random.Random, max_depth: int = 6, max_files: int = 100,
                     max_size: int = 64 * 1024) -> dict:
    """Build a random tree under ``root``; returns {relative path: bytes or None for dirs}."""
    import os
    from pathlib import Path

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    dirs = [root]
    expected = {}
    for _ in range(rng.randint(0, 12)):
        parent = rng.choice(dirs)
        if len(parent.relative_to(root).parts) >= max_depth - 1:
            continue
        d = parent / f"d{rng.randrange(10**6)}"
        if d.exists():
            continue
        d.mkdir()
        dirs.append(d)
        expected[str(d.relative_to(root))] = None
    for _ in range(rng.randint(0, max_files)):
        parent = rng.choice(dirs)
        name = rng.choice(["f", "file", "é", "data.bin", "x y"]) + str(rng.randrange(10**6))
        path = parent / name
        if path.exists():
            continue
        size = rng.choice([0, 1, rng.randint(0, 300), rng.randint(0, max_size)])
        content = os.urandom(size)
        path.write_bytes(content)
        expected[str(path.relative_to(root))] = content
    return expected


def read_tree(root) -> dict:
    from pathlib import Path

    root = Path(root)
    out = {}
    for p in root.rglob("*"):
        out[str(p.relative_to(root))] = None if p.is_dir() else p.read_bytes()
    return out


# Access-control reference automaton, written straight from the transition table.
# A state is (phase, user, pending, last_reads) with last_reads a sorted tuple of (id, t).

DEBOUNCE_MS = 900


def reference_access_step(state, event, enrolled, passwords):
    """Return (action, next_state). ``event`` is ("READ", id, t) or ("PASS", id, pw)."""
    phase, user, pending, last = state
    last_map = dict(last)
    if event[0] == "PASS":
        _, bid, pw = event
        if phase != "AwaitingPassword" or pending != bid:
            return "OutOfOrder", state
        if passwords.get(bid) == pw:
            return "Unlock", ("Unlocked", bid, None, last)
        return "Deny", ("Locked", None, None, last)
    _, bid, t = event
    if bid in last_map and t - last_map[bid] < DEBOUNCE_MS:
        return "Ignore", state
    last_map[bid] = t
    last = tuple(sorted(last_map.items()))
    if phase == "Unlocked":
        if bid == user:
            return "Lock", ("Locked", None, None, last)
        return "Ignore", ("Unlocked", user, None, last)
    mode = enrolled.get(bid)
    if mode is None:
        return "Deny", ("Locked", None, None, last)
    if mode == "strong":
        return "PromptPassword", ("AwaitingPassword", None, bid, last)
    return "Unlock", ("Unlocked", bid, None, last)


REFERENCE_START = ("Locked", None, None, ())
