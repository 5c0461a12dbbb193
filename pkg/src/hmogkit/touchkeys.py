"""Tap geometry features and keystroke timing features.

Tap features (11): duration, nine contact-size statistics, and the
point-to-point velocity between consecutive taps. Key features are sparse
event rows: one hold time per key press, one down-down latency per
consecutive key pair from the canonical 35-key alphabet (35 * 35 = 1225
possible digraphs).
"""

from __future__ import annotations

import numpy as np

from .corpus.synth import KEY_ALPHABET
from .corpus.types import Session
from .matrix import FeatureMatrix

TAP_FEATURE_NAMES: tuple[str, ...] = (
    "tap_duration",
    "contact_mean", "contact_median", "contact_std",
    "contact_q1", "contact_q2", "contact_q3",
    "contact_first", "contact_min", "contact_max",
    "tap_velocity",
)

# hold-time universe: the canonical alphabet plus an enumerated extension
# (digits and symbol keys), 89 keys in total by default
EXTENDED_KEYS: tuple[str, ...] = tuple(f"d{i}" for i in range(10)) + (
    "exclaim", "at", "hash", "dollar", "percent", "caret", "ampersand",
    "asterisk", "lparen", "rparen", "minus", "underscore", "plus", "equals",
    "lbracket", "rbracket", "lbrace", "rbrace", "semicolon", "colon",
    "quote", "backquote", "tilde", "less", "greater", "slash", "question",
    "backslash", "pipe", "euro", "pound", "yen", "degree", "bullet",
    "copyright", "registered", "trademark", "section", "paragraph",
    "ellipsis", "endash", "emdash", "currency", "micro",
)

HOLD_UNIVERSE: tuple[str, ...] = KEY_ALPHABET + EXTENDED_KEYS


def hold_feature_names(universe=HOLD_UNIVERSE) -> tuple[str, ...]:
    return tuple(f"hold_{key}" for key in universe)


def digraph_feature_names() -> tuple[str, ...]:
    return tuple(f"dig_{a}_{b}" for a in KEY_ALPHABET for b in KEY_ALPHABET)


def tap_features(session: Session) -> FeatureMatrix:
    """One row per tap. The first tap has no velocity (NaN)."""
    rows, ts = [], []
    prev_xy = None
    prev_t = None
    for tap in session.taps:
        size = tap.contact_size
        q1, q2, q3 = np.percentile(size, [25, 50, 75])
        if prev_xy is None:
            velocity = np.nan
        else:
            dt_s = (tap.t_start_ms - prev_t) / 1000.0
            velocity = float(np.hypot(*(tap.xy_px[0] - prev_xy)) / dt_s)
        rows.append([
            float(tap.duration_ms),
            float(size.mean()), float(np.median(size)), float(size.std()),
            float(q1), float(q2), float(q3),
            float(size[0]), float(size.min()), float(size.max()),
            velocity,
        ])
        ts.append(tap.t_start_ms)
        prev_xy = tap.xy_px[0]
        prev_t = tap.t_start_ms
    n = len(rows)
    return FeatureMatrix(
        TAP_FEATURE_NAMES,
        np.array(rows) if rows else np.empty((0, len(TAP_FEATURE_NAMES))),
        np.full(n, session.user_id, dtype=object),
        np.full(n, session.session_id, dtype=object),
        np.array(ts, dtype=np.int64),
    )


def _sparse_matrix(session: Session, columns: tuple[str, ...],
                   entries: list[tuple[int, int, float]]) -> FeatureMatrix:
    n = len(entries)
    values = np.full((n, len(columns)), np.nan)
    ts = np.empty(n, dtype=np.int64)
    for i, (t, col, value) in enumerate(entries):
        values[i, col] = value
        ts[i] = t
    return FeatureMatrix(
        columns, values,
        np.full(n, session.user_id, dtype=object),
        np.full(n, session.session_id, dtype=object),
        ts,
    )


def keystroke_features(session: Session,
                       hold_universe=HOLD_UNIVERSE) -> tuple[FeatureMatrix, FeatureMatrix]:
    """(hold matrix, digraph matrix); one sparse row per event.

    Keys outside the hold universe carry no hold feature; digraph pairs
    containing a key outside the canonical alphabet are skipped.
    """
    hold_cols = hold_feature_names(hold_universe)
    hold_index = {key: i for i, key in enumerate(hold_universe)}
    holds = [(ev.t_press_ms, hold_index[ev.key], float(ev.hold_ms))
             for ev in session.keys if ev.key in hold_index]

    dig_cols = digraph_feature_names()
    dig_index = {key: i for i, key in enumerate(KEY_ALPHABET)}
    k = len(KEY_ALPHABET)
    digraphs = []
    for first, second in zip(session.keys, session.keys[1:]):
        if first.key not in dig_index or second.key not in dig_index:
            continue
        col = dig_index[first.key] * k + dig_index[second.key]
        digraphs.append((first.t_press_ms, col,
                         float(second.t_press_ms - first.t_press_ms)))

    return (_sparse_matrix(session, hold_cols, holds),
            _sparse_matrix(session, dig_cols, digraphs))


def latency_outlier_filter(fm: FeatureMatrix, l_ms: float, m_min: int) -> FeatureMatrix:
    """Drop latencies above l_ms, then drop features seen fewer than m_min
    times, in that order. Rows left without finite cells are removed.
    Applying the filter twice equals applying it once."""
    values = fm.values.copy()
    with np.errstate(invalid="ignore"):
        values[values > l_ms] = np.nan
    counts = np.sum(np.isfinite(values), axis=0)
    keep_cols = np.flatnonzero(counts >= m_min) if m_min > 0 else np.arange(len(fm.columns))
    columns = tuple(fm.columns[i] for i in keep_cols)
    values = values[:, keep_cols]
    keep_rows = np.any(np.isfinite(values), axis=1)
    return FeatureMatrix(columns, values[keep_rows], fm.user_ids[keep_rows],
                         fm.session_ids[keep_rows], fm.t_ms[keep_rows])
