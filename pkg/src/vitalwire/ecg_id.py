"""ECG biometrics: beat delineation, interval features and Mahalanobis matching.

Each accepted beat yields a 24-component feature vector (see
``FEATURE_NAMES`` and docs/features.md). A person's profile stores the
per-feature mean and variance over their enrollment beats, i.e. a diagonal
covariance, so the Mahalanobis distance reduces to a variance-weighted
Euclidean distance.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import chi2

from .errors import (
    DimensionMismatch,
    DuplicateId,
    EcgIdError,
    EmptyStore,
    MissingFiducial,
    NoBeatsFound,
    TooFewBeats,
    TooShort,
    UnknownId,
)
from .telemetry import ECG_FULL_SCALE_MV, RAW_MAX, detect_r_peaks

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    # durations, ms
    "P", "PQ", "QRS", "QT", "PR_segment", "ST_segment", "T", "RR", "P_to_R", "R_to_T",
    # amplitudes relative to the isoelectric line, mV
    "P_amp", "Q_amp", "R_amp", "S_amp", "T_amp", "ST_level",
    # derived
    "P_R_ratio", "T_R_ratio", "QRS_QT_ratio", "QT_RR_ratio", "PQ_RR_ratio", "RS_amp",
    # QRS slopes, mV/ms
    "R_upslope", "R_downslope",
)
N_FEATURES = len(FEATURE_NAMES)
DURATION_FEATURES = FEATURE_NAMES[:10]
FEATURE_INDEX = {name: k for k, name in enumerate(FEATURE_NAMES)}

INTERVAL_PAIRS = ("P-QRS", "P-PQ", "P-QT", "QRS-PQ", "QRS-QT", "PQ-QT")

VARIANCE_FLOOR = 1e-6

# half an ADC step below full scale still counts as a rail sample
_RAIL_MV = ECG_FULL_SCALE_MV - 0.5 * (2 * ECG_FULL_SCALE_MV / RAW_MAX)


@dataclass(frozen=True)
class Fiducials:
    """Landmark sample indices, local to the segment."""
    p_on: int
    p_peak: int
    p_off: int
    qrs_on: int
    q: int
    r: int
    s: int
    qrs_off: int
    t_on: int
    t_peak: int
    t_off: int
    baseline: float


@dataclass
class BeatSegment:
    samples: np.ndarray  # mV
    sample_rate_hz: float
    start: int  # index of samples[0] in the source trace
    r: int
    rr_samples: int | None
    fiducials: Fiducials | None = None

    @property
    def rail_samples(self) -> int:
        return int(np.count_nonzero(np.abs(self.samples) >= _RAIL_MV))


# Delineation

def _walk(y: np.ndarray, k: int, step: int, inside) -> int | None:
    """Move from ``k`` while ``inside(y[k])``; None when the segment edge is hit first."""
    n = len(y)
    while inside(y[k]):
        k += step
        if not 0 <= k < n:
            return None
    return k


def delineate(samples: np.ndarray, r: int, sample_rate_hz: float) -> Fiducials | None:
    """Locate P, QRS and T landmarks around the R peak at index ``r``.

    Wave boundaries are where the signal returns within a small fraction of
    the wave's own peak amplitude (2 % of R for the QRS, 5 % of P or T for
    those waves), which makes every boundary independent of overall gain.
    Returns None when a wave is missing or runs off the segment.
    """
    y = np.asarray(samples, dtype=float)
    fs = sample_rate_hz
    baseline = float(np.median(y))
    y = y - baseline
    n = len(y)
    ms = fs / 1000.0
    if not 0 < r < n - 1:
        return None
    r_amp = y[r]
    if r_amp <= 0:
        return None
    eps = 0.02 * r_amp

    lo = max(0, r - int(round(60 * ms)))
    q = lo + int(np.argmin(y[lo:r + 1]))
    if y[q] < -eps:
        qrs_on = _walk(y, q, -1, lambda v: abs(v) > eps)
    else:
        qrs_on = _walk(y, r, -1, lambda v: v > eps)
        q = qrs_on
    hi = min(n, r + int(round(80 * ms)) + 1)
    s = r + int(np.argmin(y[r:hi]))
    if y[s] < -eps:
        qrs_off = _walk(y, s, 1, lambda v: abs(v) > eps)
    else:
        qrs_off = _walk(y, r, 1, lambda v: v > eps)
        s = qrs_off
    if qrs_on is None or qrs_off is None:
        return None

    p_lo = max(0, qrs_on - int(round(300 * ms)))
    if qrs_on - p_lo < 3:
        return None
    p_peak = p_lo + int(np.argmax(y[p_lo:qrs_on]))
    p_amp = y[p_peak]
    if p_amp < 0.03 * r_amp:
        return None
    p_on = _walk(y, p_peak, -1, lambda v: v > 0.05 * p_amp)
    p_off = _walk(y, p_peak, 1, lambda v: v > 0.05 * p_amp)
    if p_on is None or p_off is None or p_off > qrs_on:
        return None

    t_lo = qrs_off + 1
    if n - t_lo < 3:
        return None
    t_peak = t_lo + int(np.argmax(np.abs(y[t_lo:])))
    t_amp = y[t_peak]
    if abs(t_amp) < 0.03 * r_amp:
        return None
    sign = 1.0 if t_amp > 0 else -1.0
    t_on = _walk(y, t_peak, -1, lambda v: sign * v > 0.05 * abs(t_amp))
    t_off = _walk(y, t_peak, 1, lambda v: sign * v > 0.05 * abs(t_amp))
    if t_on is None or t_off is None:
        return None
    t_on = max(t_on, qrs_off)
    marks = (p_on, p_peak, p_off, qrs_on, q, r, s, qrs_off, t_on, t_peak, t_off)
    return Fiducials(*(int(m) for m in marks), baseline)


def segment_beats(ecg_mv, sample_rate_hz: float) -> list[BeatSegment]:
    """Cut an ECG trace (mV) into one segment per R peak and delineate each.

    A segment spans 45 % of the preceding RR interval before the R peak and
    65 % of the following one after it. Segments whose landmarks cannot be
    found keep ``fiducials=None``; :func:`reject_noisy` rejects them.
    """
    x = np.asarray(ecg_mv, dtype=float)
    if len(x) < 2 * sample_rate_hz:
        raise TooShort(f"{len(x)} samples is less than 2 s at {sample_rate_hz} Hz")
    peaks = detect_r_peaks(x, sample_rate_hz)
    if peaks.size == 0:
        raise NoBeatsFound("no R peaks detected")
    rr = np.diff(peaks)
    segments = []
    for k, r in enumerate(peaks):
        before = int(rr[k - 1]) if k > 0 else None
        after = int(rr[k]) if k < len(rr) else None
        rr_here = after if after is not None else before
        default = int(round(sample_rate_hz))
        start = max(0, r - int(0.45 * (before or rr_here or default)))
        stop = min(len(x), r + int(0.65 * (after or rr_here or default)) + 1)
        seg = BeatSegment(x[start:stop].copy(), sample_rate_hz, start, int(r - start), rr_here)
        seg.fiducials = delineate(seg.samples, seg.r, sample_rate_hz)
        segments.append(seg)
    return segments


def reject_noisy(segment: BeatSegment, slack: float = 0.5, *, p_max_ms: float = 120.0,
                 qrs_ms: tuple[float, float] = (70.0, 110.0), max_rail_samples: int = 10) -> bool:
    """True when the beat should be discarded.

    Rejects undelineated beats, beats clipped at the ADC rails for more than
    ``max_rail_samples`` samples, and beats whose P or QRS duration falls
    outside the physiological bounds widened by ``slack``.
    """
    f = segment.fiducials
    if f is None:
        return True
    if segment.rail_samples > max_rail_samples:
        return True
    to_ms = 1000.0 / segment.sample_rate_hz
    p = (f.p_off - f.p_on) * to_ms
    qrs = (f.qrs_off - f.qrs_on) * to_ms
    if not 0 < p <= p_max_ms * (1 + slack):
        return True
    if not qrs_ms[0] * (1 - slack) <= qrs <= qrs_ms[1] * (1 + slack):
        return True
    order = (f.p_on, f.p_off, f.qrs_on, f.qrs_off, f.t_on, f.t_off)
    return any(a > b for a, b in zip(order, order[1:]))


def extract_features(segment: BeatSegment) -> np.ndarray:
    f = segment.fiducials
    if f is None:
        raise MissingFiducial("segment has no located landmarks")
    if segment.rr_samples is None:
        raise MissingFiducial("segment has no neighbouring beat, RR interval unknown")
    to_ms = 1000.0 / segment.sample_rate_hz
    y = segment.samples - f.baseline

    p = (f.p_off - f.p_on) * to_ms
    pq = (f.qrs_on - f.p_on) * to_ms
    qrs = (f.qrs_off - f.qrs_on) * to_ms
    qt = (f.t_off - f.qrs_on) * to_ms
    pr_seg = (f.qrs_on - f.p_off) * to_ms
    st_seg = (f.t_on - f.qrs_off) * to_ms
    t = (f.t_off - f.t_on) * to_ms
    rr = segment.rr_samples * to_ms
    p_to_r = (f.r - f.p_peak) * to_ms
    r_to_t = (f.t_peak - f.r) * to_ms

    p_amp, q_amp, r_amp, s_amp, t_amp = (y[i] for i in (f.p_peak, f.q, f.r, f.s, f.t_peak))
    st_level = y[(f.qrs_off + f.t_on) // 2]
    up = (r_amp - q_amp) / max((f.r - f.q) * to_ms, to_ms)
    down = (r_amp - s_amp) / max((f.s - f.r) * to_ms, to_ms)

    return np.array([
        p, pq, qrs, qt, pr_seg, st_seg, t, rr, p_to_r, r_to_t,
        p_amp, q_amp, r_amp, s_amp, t_amp, st_level,
        p_amp / r_amp, t_amp / r_amp, qrs / qt if qt else 0.0, qt / rr, pq / rr, r_amp - s_amp,
        up, down,
    ], dtype=float)


def beats_from_ecg(ecg_mv, sample_rate_hz: float, slack: float = 0.5) -> list[np.ndarray]:
    """Segment, filter and featurize a trace; only accepted beats are returned."""
    out = []
    for seg in segment_beats(ecg_mv, sample_rate_hz):
        if reject_noisy(seg, slack) or seg.rr_samples is None:
            continue
        out.append(extract_features(seg))
    logger.debug("%d beats accepted", len(out))
    return out


def feature_pair_subsets(features) -> dict[str, tuple[float, float]]:
    """The six two-interval combinations of P, PQ, QRS and QT."""
    v = np.asarray(features, dtype=float)
    out = {}
    for pair in INTERVAL_PAIRS:
        a, b = pair.split("-")
        out[pair] = (float(v[FEATURE_INDEX[a]]), float(v[FEATURE_INDEX[b]]))
    return out


# Profiles and matching

@dataclass
class EcgProfile:
    person_id: str
    mean: np.ndarray
    variance: np.ndarray
    beat_count: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.variance = np.maximum(np.asarray(self.variance, dtype=float), VARIANCE_FLOOR)
        if self.mean.shape != self.variance.shape or self.mean.ndim != 1:
            raise DimensionMismatch("mean and variance must be vectors of equal length")

    def reduced(self, names: Sequence[str]) -> "EcgProfile":
        """Profile restricted to the named features (e.g. one interval pair)."""
        idx = [FEATURE_INDEX[n] for n in names]
        return EcgProfile(self.person_id, self.mean[idx], self.variance[idx], self.beat_count)


def _check_id(person_id: str):
    if not person_id or any(c in person_id for c in "|\r\n"):
        raise EcgIdError(f"invalid person id {person_id!r}")


@dataclass
class ProfileStore:
    """Person profiles keyed by id, optionally persisted to a record file.

    The file holds one ``v1|person_id|m1,...|s1,...|count`` line per
    profile. Writes replace the file atomically; callers must ensure a
    single writer at a time.
    """
    path: Path | None = None
    profiles: dict[str, EcgProfile] = field(default_factory=dict)

    def __len__(self):
        return len(self.profiles)

    def __contains__(self, person_id):
        return person_id in self.profiles

    def __getitem__(self, person_id) -> EcgProfile:
        try:
            return self.profiles[person_id]
        except KeyError:
            raise UnknownId(f"no profile for {person_id!r}") from None

    def add(self, profile: EcgProfile, replace: bool = False):
        _check_id(profile.person_id)
        if profile.person_id in self.profiles and not replace:
            raise DuplicateId(f"{profile.person_id!r} already enrolled")
        self.profiles[profile.person_id] = profile

    @classmethod
    def load(cls, path) -> "ProfileStore":
        path = Path(path)
        store = cls(path)
        if not path.exists():
            return store
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("|")
            if len(parts) != 5 or parts[0] != "v1":
                raise EcgIdError(f"{path}:{lineno}: not a v1 profile record")
            try:
                mean = [float(v) for v in parts[2].split(",")]
                var = [float(v) for v in parts[3].split(",")]
                count = int(parts[4])
            except ValueError as exc:
                raise EcgIdError(f"{path}:{lineno}: {exc}") from None
            store.add(EcgProfile(parts[1], mean, var, count))
        return store

    def save(self, path=None):
        path = Path(path or self.path)
        lines = []
        for pid in sorted(self.profiles):
            p = self.profiles[pid]
            lines.append("|".join([
                "v1", pid,
                ",".join(repr(float(v)) for v in p.mean),
                ",".join(repr(float(v)) for v in p.variance),
                str(p.beat_count),
            ]))
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
        os.replace(tmp, path)


def _matrix(beats) -> np.ndarray:
    m = np.asarray([np.asarray(b, dtype=float) for b in beats])
    if m.ndim != 2:
        raise DimensionMismatch("beats must share one feature dimension")
    return m


def enroll(store: ProfileStore, person_id: str, beats: Iterable, replace: bool = False) -> EcgProfile:
    beats = list(beats)
    if len(beats) < 2:
        raise TooFewBeats(f"need at least 2 beats to enroll, got {len(beats)}")
    m = _matrix(beats)
    profile = EcgProfile(person_id, m.mean(axis=0), m.var(axis=0, ddof=1), len(m))
    store.add(profile, replace=replace)
    if store.path is not None:
        store.save()
    return profile


def mahalanobis(x, profile: EcgProfile) -> float:
    """sqrt(sum_k (x_k - mean_k)^2 / var_k) under the profile's diagonal covariance."""
    x = np.asarray(x, dtype=float)
    if x.shape != profile.mean.shape:
        raise DimensionMismatch(f"vector of shape {x.shape} against profile of {profile.mean.shape}")
    d = x - profile.mean
    return float(np.sqrt(np.sum(d * d / profile.variance)))


def chi2_threshold(dof: int = N_FEATURES, quantile: float = 0.99) -> float:
    """Distance below which a fraction ``quantile`` of genuine single beats fall."""
    return float(np.sqrt(chi2.ppf(quantile, dof)))


def _nearest(store: ProfileStore, x) -> tuple[str, float]:
    scored = sorted((mahalanobis(x, p), pid) for pid, p in store.profiles.items())
    best_d = scored[0][0]
    return min(pid for d, pid in scored if d == best_d), best_d


def identify(store: ProfileStore, beats, mode: str = "average") -> tuple[str, float]:
    """Closest profile to the query beats, with its distance.

    ``average`` compares the mean beat vector against every profile.
    ``vote`` lets each beat pick its nearest profile and returns the
    majority (ties by id), with the distance of the mean beat vector to it.
    """
    if not store.profiles:
        raise EmptyStore("no profiles enrolled")
    beats = list(beats)
    if not beats:
        raise TooFewBeats("identify needs at least one beat")
    m = _matrix(beats)
    query = m.mean(axis=0)
    if mode == "average":
        return _nearest(store, query)
    if mode != "vote":
        raise ValueError(f"unknown identification mode {mode!r}")
    votes: dict[str, int] = {}
    for row in m:
        pid, _ = _nearest(store, row)
        votes[pid] = votes.get(pid, 0) + 1
    top = max(votes.values())
    winner = min(pid for pid, v in votes.items() if v == top)
    return winner, mahalanobis(query, store[winner])


def verify(store: ProfileStore, person_id: str, beats, threshold: float) -> bool:
    profile = store[person_id]
    beats = list(beats)
    if not beats:
        raise TooFewBeats("verify needs at least one beat")
    m = _matrix(beats)
    return mahalanobis(m.mean(axis=0), profile) <= threshold
