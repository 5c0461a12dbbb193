"""CSV ingestion and serialization for session recordings.

Canonical schemas (header row required):

  sensor.csv  session_id,sensor,t_ms,x,y,z          sensor in {acc,gyr,mag}
  touch.csv   session_id,tap_id,t_ms,x_px,y_px,contact_size
  taps.csv    session_id,tap_id,t_start_ms,t_end_ms  (optional; else min/max per tap_id)
  keys.csv    session_id,key_code,t_press_ms,t_release_ms

Foreign column names are adapted through a mapping config of
``canonical_column = source_column`` lines. Fractional timestamps are
floored to integer milliseconds at ingestion.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from .types import (
    Condition,
    CorpusError,
    KeyEvent,
    Sensor,
    SENSOR_ORDER,
    SensorStream,
    Session,
    TapEvent,
)

SENSOR_COLUMNS = ("session_id", "sensor", "t_ms", "x", "y", "z")
TOUCH_COLUMNS = ("session_id", "tap_id", "t_ms", "x_px", "y_px", "contact_size")
TAPS_COLUMNS = ("session_id", "tap_id", "t_start_ms", "t_end_ms")
KEY_COLUMNS = ("session_id", "key_code", "t_press_ms", "t_release_ms")

DEFAULT_RATE_HZ = 100.0


class ParseError(CorpusError):
    """Malformed input file; message carries file and line context."""


def parse_mapping(text: str) -> dict[str, str]:
    """Parse ``canonical = source`` lines; '#' starts a comment."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"mapping line {lineno}: expected 'canonical = source'")
        canonical, source = (part.strip() for part in line.split("=", 1))
        if not canonical or not source:
            raise ParseError(f"mapping line {lineno}: empty column name")
        mapping[canonical] = source
    return mapping


def load_mapping(path: str) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_mapping(fh.read())


def _floor_ms(value: str, where: str) -> int:
    try:
        return math.floor(float(value))
    except ValueError:
        raise ParseError(f"{where}: bad timestamp {value!r}") from None


def _float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ParseError(f"{where}: bad number {value!r}") from None


def _read_rows(path: str, canonical: tuple[str, ...],
               mapping: dict[str, str] | None):
    """Yield (lineno, dict keyed by canonical column names)."""
    mapping = mapping or {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        index: dict[str, int] = {}
        for name in canonical:
            # one mapping file serves every input; fall back to the
            # canonical name in files that never used the source name
            source = mapping.get(name, name)
            if source in header:
                index[name] = header.index(source)
            elif name in header:
                index[name] = header.index(name)
            else:
                raise ParseError(f"{path}: missing column {source!r}")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            yield lineno, {name: row[i] for name, i in index.items()}


def _parse_sensor_file(path: str, mapping: dict[str, str] | None,
                       nominal_rate_hz: float) -> dict[Sensor, SensorStream]:
    by_sensor: dict[Sensor, list[tuple[int, float, float, float]]] = {s: [] for s in SENSOR_ORDER}
    last_t: dict[Sensor, int] = {}
    for lineno, row in _read_rows(path, SENSOR_COLUMNS, mapping):
        where = f"{path}:{lineno}"
        tag = row["sensor"].strip()
        try:
            sensor = Sensor(tag)
        except ValueError:
            raise ParseError(f"{where}: unknown sensor tag {tag!r}") from None
        t = _floor_ms(row["t_ms"], where)
        if sensor in last_t and t <= last_t[sensor]:
            raise ParseError(f"{where}: non-monotone timestamp for {tag} ({t} after {last_t[sensor]})")
        last_t[sensor] = t
        by_sensor[sensor].append((t, _float(row["x"], where), _float(row["y"], where),
                                  _float(row["z"], where)))
    streams = {}
    for sensor, rows in by_sensor.items():
        if not rows:
            continue
        arr = np.array(rows, dtype=np.float64)
        streams[sensor] = SensorStream(
            sensor=sensor,
            nominal_rate_hz=nominal_rate_hz,
            t_ms=arr[:, 0].astype(np.int64),
            values=arr[:, 1:4],
        )
    return streams


def _parse_touch_file(path: str, mapping: dict[str, str] | None,
                      boundaries: dict[int, tuple[int, int]] | None) -> list[TapEvent]:
    samples: dict[int, list[tuple[int, float, float, float]]] = {}
    order: list[int] = []
    for lineno, row in _read_rows(path, TOUCH_COLUMNS, mapping):
        where = f"{path}:{lineno}"
        try:
            tap_id = int(row["tap_id"])
        except ValueError:
            raise ParseError(f"{where}: bad tap_id {row['tap_id']!r}") from None
        if tap_id not in samples:
            samples[tap_id] = []
            order.append(tap_id)
        samples[tap_id].append((
            _floor_ms(row["t_ms"], where),
            _float(row["x_px"], where),
            _float(row["y_px"], where),
            _float(row["contact_size"], where),
        ))
    if boundaries is not None:
        for tap_id in boundaries:
            if tap_id not in samples:
                raise ParseError(f"{path}: tap {tap_id} declared with zero touch samples")
    taps = []
    for tap_id in order:
        rows = samples[tap_id]
        t = np.array([r[0] for r in rows], dtype=np.int64)
        if boundaries is not None and tap_id in boundaries:
            t_start, t_end = boundaries[tap_id]
        else:
            t_start, t_end = int(t.min()), int(t.max())
        taps.append(TapEvent(
            tap_id=tap_id,
            t_start_ms=t_start,
            t_end_ms=t_end,
            t_samples=t,
            xy_px=np.array([(r[1], r[2]) for r in rows], dtype=np.float64),
            contact_size=np.array([r[3] for r in rows], dtype=np.float64),
        ))
    taps.sort(key=lambda tap: (tap.t_start_ms, tap.tap_id))
    return taps


def _parse_taps_file(path: str, mapping: dict[str, str] | None) -> dict[int, tuple[int, int]]:
    boundaries: dict[int, tuple[int, int]] = {}
    for lineno, row in _read_rows(path, TAPS_COLUMNS, mapping):
        where = f"{path}:{lineno}"
        try:
            tap_id = int(row["tap_id"])
        except ValueError:
            raise ParseError(f"{where}: bad tap_id {row['tap_id']!r}") from None
        if tap_id in boundaries:
            raise ParseError(f"{where}: duplicate tap_id {tap_id}")
        boundaries[tap_id] = (_floor_ms(row["t_start_ms"], where), _floor_ms(row["t_end_ms"], where))
    return boundaries


def _parse_key_file(path: str, mapping: dict[str, str] | None) -> list[KeyEvent]:
    events = []
    last_press = None
    for lineno, row in _read_rows(path, KEY_COLUMNS, mapping):
        where = f"{path}:{lineno}"
        press = _floor_ms(row["t_press_ms"], where)
        if last_press is not None and press < last_press:
            raise ParseError(f"{where}: non-monotone key press timestamps")
        last_press = press
        key = row["key_code"].strip()
        if not key:
            raise ParseError(f"{where}: empty key code")
        events.append(KeyEvent(key=key, t_press_ms=press,
                               t_release_ms=_floor_ms(row["t_release_ms"], where)))
    return events


def parse_session(sensor_path: str, touch_path: str, key_path: str, *,
                  user_id: str, session_id: str, condition: Condition | str,
                  taps_path: str | None = None,
                  mapping: dict[str, str] | None = None,
                  nominal_rate_hz: float = DEFAULT_RATE_HZ) -> Session:
    """Build a validated Session from CSV files."""
    boundaries = _parse_taps_file(taps_path, mapping) if taps_path else None
    session = Session(
        user_id=user_id,
        session_id=session_id,
        condition=Condition(condition),
        streams=_parse_sensor_file(sensor_path, mapping, nominal_rate_hz),
        taps=_parse_touch_file(touch_path, mapping, boundaries),
        keys=_parse_key_file(key_path, mapping),
    )
    return session.validate()


# ---------------------------------------------------------------------------
# canonical serialization (round-trips exactly through parse_session)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_session(session: Session, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "sensor.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(SENSOR_COLUMNS) + "\n")
        for sensor in SENSOR_ORDER:
            stream = session.streams.get(sensor)
            if stream is None:
                continue
            for i in range(len(stream)):
                x, y, z = stream.values[i]
                fh.write(f"{session.session_id},{sensor.value},{stream.t_ms[i]},"
                         f"{_fmt(x)},{_fmt(y)},{_fmt(z)}\n")
    with open(os.path.join(directory, "touch.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(TOUCH_COLUMNS) + "\n")
        for tap in session.taps:
            for i in range(len(tap.t_samples)):
                fh.write(f"{session.session_id},{tap.tap_id},{tap.t_samples[i]},"
                         f"{_fmt(tap.xy_px[i, 0])},{_fmt(tap.xy_px[i, 1])},"
                         f"{_fmt(tap.contact_size[i])}\n")
    with open(os.path.join(directory, "taps.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(TAPS_COLUMNS) + "\n")
        for tap in session.taps:
            fh.write(f"{session.session_id},{tap.tap_id},{tap.t_start_ms},{tap.t_end_ms}\n")
    with open(os.path.join(directory, "keys.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(KEY_COLUMNS) + "\n")
        for ev in session.keys:
            fh.write(f"{session.session_id},{ev.key},{ev.t_press_ms},{ev.t_release_ms}\n")
    rates = {sensor.value: session.streams[sensor].nominal_rate_hz
             for sensor in SENSOR_ORDER if sensor in session.streams}
    meta = {
        "user_id": session.user_id,
        "session_id": session.session_id,
        "condition": session.condition.value,
        "nominal_rate_hz": rates,
    }
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_session(directory: str) -> Session:
    with open(os.path.join(directory, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    rates = meta.get("nominal_rate_hz", {})
    rate = next(iter(rates.values()), DEFAULT_RATE_HZ)
    session = parse_session(
        os.path.join(directory, "sensor.csv"),
        os.path.join(directory, "touch.csv"),
        os.path.join(directory, "keys.csv"),
        taps_path=os.path.join(directory, "taps.csv"),
        user_id=meta["user_id"],
        session_id=meta["session_id"],
        condition=meta["condition"],
        nominal_rate_hz=rate,
    )
    # restore per-sensor rates (parse_session applies a single figure)
    for tag, value in rates.items():
        sensor = Sensor(tag)
        if sensor in session.streams:
            session.streams[sensor].nominal_rate_hz = value
    return session


def save_corpus(sessions: list[Session], root: str) -> None:
    os.makedirs(root, exist_ok=True)
    index = []
    for session in sorted(sessions, key=lambda s: (s.user_id, s.session_id)):
        rel = f"{session.user_id}_{session.session_id}"
        write_session(session, os.path.join(root, rel))
        index.append({
            "user_id": session.user_id,
            "session_id": session.session_id,
            "condition": session.condition.value,
            "path": rel,
        })
    with open(os.path.join(root, "index.json"), "w", encoding="utf-8") as fh:
        json.dump({"version": 1, "sessions": index}, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_corpus(root: str) -> list[Session]:
    index_path = os.path.join(root, "index.json")
    if not os.path.exists(index_path):
        raise ParseError(f"{root}: missing index.json")
    with open(index_path, "r", encoding="utf-8") as fh:
        index = json.load(fh)
    return [read_session(os.path.join(root, entry["path"])) for entry in index["sessions"]]
