"""Hand-movement features around tap events.

Per (sensor, channel, tap) five resistance and three stability features are
computed from four windows relative to the tap interval [t_start, t_end]:

  before    [t_start - 100 ms, t_start)
  during    [t_start, t_end]
  after100  (t_end, t_end + 100 ms]
  after200  (t_end, t_end + 200 ms]

Channels are the three axes plus the magnitude; sensors are accelerometer,
gyroscope, magnetometer. 5 * 3 * 4 + 3 * 3 * 4 = 96 features per tap.
"""

from __future__ import annotations

import numpy as np

from .corpus.types import CHANNELS, Sensor, SENSOR_ORDER, Session, slice_span
from .matrix import FeatureMatrix

BEFORE_MS = 100
AFTER_MS = 100
POST_MS = 200              # stability search window after tap end
CENTER_OFFSET_MS = 50      # window centers sit 50 ms outside the tap
BETWEEN_BLOCK_MS = 91      # pseudo-tap length between taps
BETWEEN_GUARD_MS = 300     # quiet margin after/before the surrounding taps

RESISTANCE_FAMILIES = tuple(f"res{i}" for i in range(1, 6))
STABILITY_FAMILIES = tuple(f"stab{i}" for i in range(1, 4))

FEATURE_NAMES: tuple[str, ...] = tuple(
    f"{sensor.value}_{channel}_{family}"
    for family in RESISTANCE_FAMILIES + STABILITY_FAMILIES
    for sensor in SENSOR_ORDER
    for channel in CHANNELS
)


def feature_names_for(sensors) -> tuple[str, ...]:
    """The canonical 96-name order restricted to the given sensors."""
    tags = {Sensor(s).value for s in sensors}
    return tuple(name for name in FEATURE_NAMES if name.split("_")[0] in tags)


def resistance_block(before: np.ndarray, during: np.ndarray,
                     after100: np.ndarray) -> np.ndarray:
    """Five resistance features; inputs are (k,) or (k, channels) value arrays.

    1 mean during the tap
    2 standard deviation during the tap (population form)
    3 avg100msAfter - avg100msBefore
    4 avgTap - avg100msBefore
    5 maxTap - avg100msBefore
    """
    avg_before = before.mean(axis=0)
    avg_after = after100.mean(axis=0)
    avg_tap = during.mean(axis=0)
    max_tap = during.max(axis=0)
    return np.stack([
        avg_tap,
        during.std(axis=0),
        avg_after - avg_before,
        avg_tap - avg_before,
        max_tap - avg_before,
    ])


def t_min_index(z_post: np.ndarray, avg_before) -> np.ndarray:
    """Index whose suffix mean of |z - avg100msBefore| is minimal.

    avgDiffs[i] = mean over j >= i of |z[j] - avg_before|; ties resolve to
    the earliest index.
    """
    diffs = np.abs(np.asarray(z_post, dtype=np.float64) - avg_before)
    suffix = np.cumsum(diffs[::-1], axis=0)[::-1]
    counts = np.arange(len(diffs), 0, -1, dtype=np.float64)
    counts = counts.reshape((-1,) + (1,) * (diffs.ndim - 1))
    return np.argmin(suffix / counts, axis=0)


def t_min(t_post: np.ndarray, z_post: np.ndarray, avg_before: float) -> int:
    """Timestamp at which the post-tap signal is deemed settled."""
    if len(t_post) == 0:
        raise ValueError("empty post-tap window")
    return int(t_post[t_min_index(z_post, avg_before)])


def stability_block(t_start: int, t_end: int, before: np.ndarray,
                    during: np.ndarray, t_during: np.ndarray,
                    after100: np.ndarray, t_post: np.ndarray,
                    z_post: np.ndarray) -> np.ndarray:
    """Three stability features; value arrays are (k,) or (k, channels).

    1 t_min - t_end over the 200 ms post-tap window
    2 (t_after_center - t_before_center) / (avg100msAfter - avg100msBefore)
    3 (t_after_center - t_max_in_tap) / (avg100msAfter - maxTap)

    Zero denominators yield NaN for that feature only.
    """
    avg_before = before.mean(axis=0)
    avg_after = after100.mean(axis=0)
    max_tap = during.max(axis=0)
    t_max_in_tap = t_during[np.argmax(during, axis=0)]
    t_before_center = t_start - CENTER_OFFSET_MS
    t_after_center = t_end + CENTER_OFFSET_MS
    settle = t_post[t_min_index(z_post, avg_before)] - t_end
    den2 = avg_after - avg_before
    den3 = avg_after - max_tap
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.where(den2 == 0, np.nan, (t_after_center - t_before_center) / den2)
        s3 = np.where(den3 == 0, np.nan, (t_after_center - t_max_in_tap) / den3)
    return np.stack([np.asarray(settle, dtype=np.float64), s2, s3])


def between_blocks(taps, duration_hint_ms: int = BETWEEN_BLOCK_MS) -> list[tuple[int, int]]:
    """Non-overlapping pseudo-tap intervals inside inter-tap gaps.

    Blocks start 300 ms after a tap ends and stop 300 ms before the next
    starts; floor(usable span / block length) blocks fit per gap.
    """
    blocks = []
    for prev, nxt in zip(taps, taps[1:]):
        lo = prev.t_end_ms + BETWEEN_GUARD_MS
        hi = nxt.t_start_ms - BETWEEN_GUARD_MS
        count = max(0, (hi - lo) // duration_hint_ms)
        for k in range(count):
            start = lo + k * duration_hint_ms
            blocks.append((start, start + duration_hint_ms))
    return blocks


def _event_row(t: np.ndarray, chans: np.ndarray, t_start: int, t_end: int):
    """32 features (8 families x 4 channels) for one sensor, or None if any
    required window is empty or the context leaves the recorded span."""
    if len(t) == 0 or t_start - BEFORE_MS < t[0] or t_end + POST_MS > t[-1]:
        return None
    sl_before = slice_span(t, t_start - BEFORE_MS, t_start, True, False)
    sl_during = slice_span(t, t_start, t_end, True, True)
    sl_after1 = slice_span(t, t_end, t_end + AFTER_MS, False, True)
    sl_after2 = slice_span(t, t_end, t_end + POST_MS, False, True)
    if min(sl_before.stop - sl_before.start, sl_during.stop - sl_during.start,
           sl_after1.stop - sl_after1.start, sl_after2.stop - sl_after2.start) == 0:
        return None
    before = chans[sl_before]
    during = chans[sl_during]
    after1 = chans[sl_after1]
    res = resistance_block(before, during, after1)
    stab = stability_block(t_start, t_end, before, during, t[sl_during],
                           after1, t[sl_after2], chans[sl_after2])
    return res, stab


def extract_hmog(session: Session, mode: str = "during") -> FeatureMatrix:
    """One 96-feature row per valid tap (or per between-tap block).

    A tap is skipped only when every sensor lacks usable context; a sensor
    without usable context contributes NaN cells. meta records counts of
    skipped events and of taps whose 300 ms contexts overlap a neighbour.
    """
    if mode == "during":
        events = [(tap.t_start_ms, tap.t_end_ms) for tap in session.taps]
    elif mode == "between":
        events = between_blocks(session.taps)
    else:
        raise ValueError(f"unknown extraction mode {mode!r}")

    per_sensor = {}
    for sensor in SENSOR_ORDER:
        stream = session.streams.get(sensor)
        if stream is not None and len(stream) > 0:
            per_sensor[sensor] = (stream.t_ms, stream.channel_matrix())

    n_channels = len(CHANNELS)
    rows, ts = [], []
    skipped = 0
    for t_start, t_end in events:
        row = np.full(len(FEATURE_NAMES), np.nan)
        any_valid = False
        for s_idx, sensor in enumerate(SENSOR_ORDER):
            if sensor not in per_sensor:
                continue
            t, chans = per_sensor[sensor]
            blocks = _event_row(t, chans, t_start, t_end)
            if blocks is None:
                continue
            any_valid = True
            res, stab = blocks
            for f_idx in range(5):
                base = f_idx * 12 + s_idx * n_channels
                row[base:base + n_channels] = res[f_idx]
            for f_idx in range(3):
                base = 60 + f_idx * 12 + s_idx * n_channels
                row[base:base + n_channels] = stab[f_idx]
        if any_valid:
            rows.append(row)
            ts.append(t_start)
        else:
            skipped += 1

    overlap = sum(1 for prev, nxt in zip(session.taps, session.taps[1:])
                  if nxt.t_start_ms - prev.t_end_ms < BETWEEN_GUARD_MS) if mode == "during" else 0

    n = len(rows)
    fm = FeatureMatrix(
        FEATURE_NAMES,
        np.array(rows) if rows else np.empty((0, len(FEATURE_NAMES))),
        np.full(n, session.user_id, dtype=object),
        np.full(n, session.session_id, dtype=object),
        np.array(ts, dtype=np.int64),
    )
    fm.meta = {"mode": mode, "n_events": len(events), "n_skipped": skipped,
               "n_context_overlap": overlap}
    return fm
