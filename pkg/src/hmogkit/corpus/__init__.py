"""Canonical data model, CSV ingestion, and synthetic session generation."""

from .io import (
    DEFAULT_RATE_HZ,
    ParseError,
    load_corpus,
    load_mapping,
    parse_mapping,
    parse_session,
    read_session,
    save_corpus,
    write_session,
)
from .synth import KEY_ALPHABET, SynthProfile, make_corpus, make_profiles, synthesize_user
from .types import (
    CHANNELS,
    Condition,
    CorpusError,
    KeyEvent,
    Sensor,
    SENSOR_ORDER,
    SensorReading,
    SensorStream,
    Session,
    TapEvent,
    downsample,
    magnitude,
    slice_span,
    window,
)

__all__ = [
    "CHANNELS",
    "Condition",
    "CorpusError",
    "DEFAULT_RATE_HZ",
    "KEY_ALPHABET",
    "KeyEvent",
    "ParseError",
    "SENSOR_ORDER",
    "Sensor",
    "SensorReading",
    "SensorStream",
    "Session",
    "SynthProfile",
    "TapEvent",
    "downsample",
    "load_corpus",
    "load_mapping",
    "magnitude",
    "make_corpus",
    "make_profiles",
    "parse_mapping",
    "parse_session",
    "read_session",
    "save_corpus",
    "slice_span",
    "synthesize_user",
    "window",
    "write_session",
]
