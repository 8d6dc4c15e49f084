"""Physical-unit scaling, heart rate extraction and fall detection."""

from __future__ import annotations

import enum
import logging
import math
import statistics
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
from scipy.ndimage import maximum_filter1d, median_filter
from scipy.signal import find_peaks

from .errors import BadSampleRate, IncompleteTriplet, OutOfRange

logger = logging.getLogger(__name__)

ECG_FULL_SCALE_MV = 2.66
ACC_FULL_SCALE_G = 2.7
RAW_MAX = 255
RAW_CENTER = 127

# raw accelerometer readings of +1 g and -1 g on an axis aligned with gravity
GRAVITY_UP = 175
GRAVITY_DOWN = 80


def _affine(raw, full_scale: float):
    if not 0 <= raw <= RAW_MAX:
        raise OutOfRange(f"raw sample {raw} outside 0..{RAW_MAX}")
    # (2r - 255) / 255 is exactly +-1 at the endpoints
    return full_scale * ((2 * raw - RAW_MAX) / RAW_MAX)


def raw_to_mv(raw) -> float:
    return _affine(raw, ECG_FULL_SCALE_MV)


def raw_to_g(raw) -> float:
    return _affine(raw, ACC_FULL_SCALE_G)


def ecg_to_mv(raw: Iterable[int]) -> np.ndarray:
    a = np.asarray(raw, dtype=float)
    if a.size and (a.min() < 0 or a.max() > RAW_MAX):
        raise OutOfRange(f"raw ECG samples must lie in 0..{RAW_MAX}")
    return ECG_FULL_SCALE_MV * ((2 * a - RAW_MAX) / RAW_MAX)


# R-peak detection

HEART_RATE_SAMPLE_RATES = (150, 300)


def detect_r_peaks(signal, sample_rate_hz: float, *, threshold_ratio: float = 0.6,
                   window_s: float = 2.0, refractory_s: float = 0.2) -> np.ndarray:
    """Indices of R peaks in an ECG trace of any unit.

    The trace is detrended with a 1 s running median. A local maximum is an R
    peak when it reaches ``threshold_ratio`` of the running maximum over a
    ``window_s`` window centred on it, and no taller peak lies within the
    refractory period.
    """
    x = np.asarray(signal, dtype=float)
    if x.size < 3:
        return np.array([], dtype=int)
    width = max(3, int(round(sample_rate_hz)) | 1)
    y = x - median_filter(x, size=width, mode="nearest")
    envelope = maximum_filter1d(y, size=max(1, int(round(window_s * sample_rate_hz))), mode="nearest")
    distance = max(1, int(round(refractory_s * sample_rate_hz)))
    peaks, _ = find_peaks(y, height=1e-12, distance=distance)
    if peaks.size == 0:
        return peaks
    keep = y[peaks] >= threshold_ratio * envelope[peaks]
    return peaks[keep]


def heart_rate(ecg, sample_rate_hz: float) -> np.ndarray:
    """Beats per minute for every pair of consecutive R peaks.

    Empty when fewer than two peaks are found.
    """
    if sample_rate_hz not in HEART_RATE_SAMPLE_RATES:
        raise BadSampleRate(f"ECG sample rate must be one of {HEART_RATE_SAMPLE_RATES}, got {sample_rate_hz}")
    peaks = detect_r_peaks(ecg, sample_rate_hz)
    if peaks.size < 2:
        return np.array([], dtype=float)
    return 60.0 * sample_rate_hz / np.diff(peaks)


# Fall detection

class Axis(enum.IntEnum):
    X = 0
    Y = 1
    Z = 2


@dataclass(frozen=True)
class FallDetectorConfig:
    window: int = 23
    delta_threshold: int = 30
    hold_seconds: float = 8.0
    sample_rate_hz: float = 75.0
    baseline_len: int = 8
    posture_tolerance: int = 16
    settle_seconds: float = 1.0
    ground_axis: Axis = Axis.Z

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1 sample")
        if self.delta_threshold <= 0:
            raise ValueError("delta_threshold must be positive")
        if self.hold_seconds <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("hold_seconds and sample_rate_hz must be positive")
        if self.baseline_len < 1:
            raise ValueError("baseline_len must be at least 1")
        if self.settle_seconds < 0:
            raise ValueError("settle_seconds must not be negative")

    @property
    def hold_samples(self) -> int:
        return math.ceil(self.hold_seconds * self.sample_rate_hz - 1e-9)

    @property
    def settle_samples(self) -> int:
        return math.ceil(self.settle_seconds * self.sample_rate_hz - 1e-9)


@dataclass
class FallEvent:
    trigger_axis: Axis
    baseline_raw: int
    extremum_raw: int
    window_mean: float
    sample_index: int
    confirmed: bool = False
    confirm_index: int | None = None


def gravity_distance(value: float) -> float:
    return min(abs(value - GRAVITY_UP), abs(value - GRAVITY_DOWN))


def most_perpendicular_axis(sample) -> Axis:
    """Axis whose reading is nearest +1 g or -1 g (ties go to the lower axis)."""
    return Axis(min(range(3), key=lambda k: gravity_distance(sample[k])))


def is_horizontal(sample, tolerance: int = 16, ground_axis: Axis = Axis.Z) -> bool:
    """Device lying flat: ``ground_axis`` reads about +-1 g, the others about 0 g."""
    return all(
        gravity_distance(sample[k]) < tolerance if k == ground_axis else abs(sample[k] - RAW_CENTER) < tolerance
        for k in range(3)
    )


class FallDetector:
    """Streaming fall detector, one instance per accelerometer stream.

    Idle: the tracked axis is the one nearest +-1 g over the last
    ``baseline_len`` samples and its baseline is their median. A sample that
    moves more than half the threshold away from baseline opens a window of
    ``window`` samples (trigger included). An axis reading above centre loses
    gravity during a fall, so its values descend and the window minimum is
    the extremum; below centre they rise and the maximum is used. A
    :class:`FallEvent` is produced when the extremum is at least
    ``delta_threshold`` from baseline and the window mean lies strictly on
    the extremum's side of baseline.

    The event is confirmed once the device lies flat (see
    :func:`is_horizontal`) for ``hold_seconds`` without interruption. The
    flat run may start inside the window and must start no later than
    ``settle_seconds`` after the window closes.
    """

    def __init__(self, config: FallDetectorConfig | None = None):
        self.config = config or FallDetectorConfig()
        self.index = -1
        self.events: list[FallEvent] = []
        self._history: deque = deque(maxlen=self.config.baseline_len)
        self._window: list[int] | None = None
        self._axis: Axis | None = None
        self._baseline: int | None = None
        self._trigger_index = 0
        self._pending: FallEvent | None = None
        self._window_end = 0
        self._seen_flat = False
        self._run_start: int | None = None

    def update(self, sample) -> list[FallEvent]:
        """Consume one (x, y, z) triplet; return events that became final."""
        if len(sample) != 3:
            raise IncompleteTriplet(f"expected an (x, y, z) triplet, got {sample!r}")
        cfg = self.config
        self.index += 1
        finished: list[FallEvent] = []

        if is_horizontal(sample, cfg.posture_tolerance, cfg.ground_axis):
            if self._run_start is None:
                self._run_start = self.index
        else:
            self._run_start = None

        if self._window is not None:
            self._window.append(sample[self._axis])
            if len(self._window) == cfg.window:
                self._close_window()
        elif self._pending is not None:
            finished += self._check_pending()
        elif len(self._history) == cfg.baseline_len:
            medians = [statistics.median_low(s[k] for s in self._history) for k in range(3)]
            axis = most_perpendicular_axis(medians)
            baseline = medians[axis]
            if abs(sample[axis] - baseline) > cfg.delta_threshold / 2:
                self._axis, self._baseline = axis, baseline
                self._trigger_index = self.index
                self._window = [sample[axis]]
                if cfg.window == 1:
                    self._close_window()

        self._history.append(tuple(sample))
        return finished

    def _check_pending(self) -> list[FallEvent]:
        cfg, event = self.config, self._pending
        start = self._run_start
        if start is None:
            if self._seen_flat or self.index - self._window_end > cfg.settle_samples:
                self._pending = None
                return [event]
            return []
        self._seen_flat = True
        if max(start, event.sample_index) + cfg.hold_samples - 1 <= self.index:
            event.confirmed = True
            event.confirm_index = self.index
            self._pending = None
            return [event]
        return []

    def _close_window(self):
        window, baseline = self._window, self._baseline
        self._window = None
        descending = baseline > RAW_CENTER
        extremum = min(window) if descending else max(window)
        mean = sum(window) / len(window)
        same_side = mean < baseline if descending else mean > baseline
        if abs(extremum - baseline) >= self.config.delta_threshold and same_side:
            event = FallEvent(self._axis, baseline, extremum, mean, self._trigger_index)
            self.events.append(event)
            self._pending = event
            self._window_end = self.index
            self._seen_flat = self._run_start is not None
            logger.debug("fall candidate at sample %d on axis %s", event.sample_index, event.trigger_axis.name)
        # restart the baseline from post-window samples
        self._history.clear()

    def finish(self) -> list[FallEvent]:
        """Flush at end of stream: a pending event stays unconfirmed."""
        self._window = None
        if self._pending is not None:
            event, self._pending = self._pending, None
            return [event]
        return []


def iter_triplets(acc) -> Iterator[tuple]:
    """Accept either (x, y, z) items or a flat interleaved sequence of ints."""
    acc = list(acc)
    if acc and isinstance(acc[0], (int, np.integer)):
        if len(acc) % 3:
            raise IncompleteTriplet(f"{len(acc)} interleaved samples is not a multiple of 3")
        for k in range(0, len(acc), 3):
            yield tuple(acc[k:k + 3])
        return
    for item in acc:
        if len(item) != 3:
            raise IncompleteTriplet(f"expected an (x, y, z) triplet, got {item!r}")
        yield tuple(item)


def detect_falls(acc, config: FallDetectorConfig | None = None) -> list[FallEvent]:
    detector = FallDetector(config)
    for sample in iter_triplets(acc):
        detector.update(sample)
    detector.finish()
    return detector.events
