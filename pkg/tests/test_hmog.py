"""Tap-window features: resistance, stability, between-tap blocks."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hmogkit.corpus.types import CHANNELS, Condition, SENSOR_ORDER, Sensor, SensorStream, Session, TapEvent
from hmogkit.hmog import (
    BETWEEN_BLOCK_MS,
    FEATURE_NAMES,
    RESISTANCE_FAMILIES,
    STABILITY_FAMILIES,
    between_blocks,
    extract_hmog,
    feature_names_for,
    resistance_block,
    stability_block,
    t_min,
    t_min_index,
)
from oracles import t_min_oracle


def make_tap(tap_id, t_start, t_end):
    t = np.array([t_start, t_end], dtype=np.int64)
    return TapEvent(tap_id=tap_id, t_start_ms=t_start, t_end_ms=t_end,
                    t_samples=t, xy_px=np.zeros((2, 2)), contact_size=np.full(2, 0.1))


def grid_session(step_ms, total_ms, taps, seed=0, short_mag_ms=None):
    """All three sensors on one timestamp grid; mag optionally truncated."""
    rng = np.random.default_rng(seed)
    t = np.arange(0, total_ms + 1, step_ms, dtype=np.int64)
    rate = 1000.0 / step_ms
    streams = {}
    for sensor in SENSOR_ORDER:
        tt = t
        if sensor is Sensor.MAG and short_mag_ms is not None:
            tt = t[t <= short_mag_ms]
        streams[sensor] = SensorStream(sensor=sensor, nominal_rate_hz=rate, t_ms=tt,
                                       values=rng.normal(0, 1, (len(tt), 3)))
    return Session(user_id="u1", session_id="s01", condition=Condition.SITTING,
                   streams=streams, taps=taps, keys=[])


# ---------------------------------------------------------------- names

def test_feature_name_count_and_split():
    assert len(FEATURE_NAMES) == 96
    assert len(set(FEATURE_NAMES)) == 96
    assert sum(1 for n in FEATURE_NAMES if n.rsplit("_", 1)[1].startswith("res")) == 60
    assert sum(1 for n in FEATURE_NAMES if n.rsplit("_", 1)[1].startswith("stab")) == 36


def test_feature_name_order_family_major():
    # family blocks of 12, each sensor-major then channel
    assert FEATURE_NAMES[0] == "acc_x_res1"
    assert FEATURE_NAMES[3] == "acc_m_res1"
    assert FEATURE_NAMES[4] == "gyr_x_res1"
    assert FEATURE_NAMES[11] == "mag_m_res1"
    assert FEATURE_NAMES[12] == "acc_x_res2"
    assert FEATURE_NAMES[60] == "acc_x_stab1"
    assert FEATURE_NAMES[-1] == "mag_m_stab3"
    families = RESISTANCE_FAMILIES + STABILITY_FAMILIES
    idx = 0
    for family in families:
        for sensor in SENSOR_ORDER:
            for channel in CHANNELS:
                assert FEATURE_NAMES[idx] == f"{sensor.value}_{channel}_{family}"
                idx += 1


def test_feature_names_for_subset():
    acc_only = feature_names_for(["acc"])
    assert len(acc_only) == 32
    assert all(n.startswith("acc_") for n in acc_only)
    # order preserved relative to the full tuple
    pos = [FEATURE_NAMES.index(n) for n in acc_only]
    assert pos == sorted(pos)
    assert feature_names_for(SENSOR_ORDER) == FEATURE_NAMES
    assert feature_names_for([Sensor.GYR]) == feature_names_for(["gyr"])


# ---------------------------------------------------------------- resistance

def test_resistance_block_hand_values():
    before = np.array([1.0, 1.0])
    during = np.array([2.0, 4.0])
    after = np.array([3.0])
    out = resistance_block(before, during, after)
    # mean 3, population std 1, after-before 2, tap-before 2, max-before 3
    assert_allclose(out, [3.0, 1.0, 2.0, 2.0, 3.0])


def test_resistance_block_per_channel_columns():
    before = np.array([[1.0, 10.0], [1.0, 10.0]])
    during = np.array([[2.0, 20.0], [4.0, 40.0]])
    after = np.array([[3.0, 30.0]])
    out = resistance_block(before, during, after)
    assert out.shape == (5, 2)
    assert_allclose(out[:, 0], [3.0, 1.0, 2.0, 2.0, 3.0])
    assert_allclose(out[:, 1], [30.0, 10.0, 20.0, 20.0, 30.0])


def test_resistance_block_offset_invariance():
    rng = np.random.default_rng(3)
    before = rng.normal(0, 1, 7)
    during = rng.normal(0, 1, 9)
    after = rng.normal(0, 1, 5)
    base = resistance_block(before, during, after)
    shifted = resistance_block(before + 4.5, during + 4.5, after + 4.5)
    # only the raw mean moves with a constant offset
    assert_allclose(shifted[0], base[0] + 4.5, atol=1e-12)
    assert_allclose(shifted[1:], base[1:], atol=1e-12)


# ---------------------------------------------------------------- settle time

def test_t_min_index_hand_case():
    # suffix means 1.5, 1, 0.5, 0 -> last index
    assert t_min_index(np.array([4.0, 3.0, 2.0, 1.0]), 1.0) == 3


def test_t_min_index_tie_takes_earliest():
    # diffs 2,0,0: suffix means 2/3, 0, 0 -> tie between 1 and 2
    assert t_min_index(np.array([3.0, 1.0, 1.0]), 1.0) == 1
    assert t_min_index(np.array([5.0, 5.0]), 5.0) == 0


def test_t_min_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n = rng.integers(1, 40)
        t_post = np.cumsum(rng.integers(5, 30, n)).astype(np.int64)
        z = rng.normal(0, 1, n)
        avg = rng.normal(0, 1)
        assert t_min(t_post, z, avg) == t_min_oracle(t_post, z, avg)


def test_t_min_empty_window_raises():
    with pytest.raises(ValueError):
        t_min(np.array([], dtype=np.int64), np.array([]), 0.0)


def test_t_min_index_per_channel():
    z = np.array([[4.0, 1.0], [1.0, 4.0]])
    idx = t_min_index(z, np.array([1.0, 1.0]))
    assert list(idx) == [1, 0]


# ---------------------------------------------------------------- stability

def test_stability_block_hand_values():
    out = stability_block(
        t_start=1000, t_end=1130,
        before=np.array([1.0, 1.0]),
        during=np.array([2.0, 4.0]), t_during=np.array([1000, 1100]),
        after100=np.array([3.0]),
        t_post=np.array([1200, 1300]), z_post=np.array([3.0, 1.0]),
    )
    # settle: suffix means 1, 0 -> index 1 -> 1300 - 1130 = 170
    # centers 950 and 1180; dens 3-1=2 and 3-4=-1
    assert_allclose(out, [170.0, 115.0, -80.0])


def test_stability_block_zero_denominators_nan():
    out = stability_block(
        t_start=1000, t_end=1100,
        before=np.array([1.0, 1.0]),
        during=np.array([1.0, 1.0]), t_during=np.array([1000, 1100]),
        after100=np.array([1.0]),
        t_post=np.array([1150, 1250]), z_post=np.array([1.0, 1.0]),
    )
    assert out[0] == 50.0  # settle still defined: earliest index, t 1150
    assert np.isnan(out[1]) and np.isnan(out[2])


def test_stability_block_nan_isolated_per_channel():
    # channel 0 degenerate, channel 1 fine
    out = stability_block(
        t_start=1000, t_end=1100,
        before=np.array([[1.0, 1.0], [1.0, 1.0]]),
        during=np.array([[1.0, 2.0], [1.0, 4.0]]),
        t_during=np.array([1000, 1100]),
        after100=np.array([[1.0, 3.0]]),
        t_post=np.array([1150, 1250]),
        z_post=np.array([[1.0, 3.0], [1.0, 1.0]]),
    )
    assert np.isnan(out[1, 0]) and np.isnan(out[2, 0])
    assert np.isfinite(out[1, 1]) and np.isfinite(out[2, 1])
    assert_allclose(out[1, 1], 200.0 / 2.0)
    assert_allclose(out[2, 1], 50.0 / -1.0)


def test_stability_block_offset_invariance():
    rng = np.random.default_rng(5)
    before = rng.normal(0, 1, 7)
    during = rng.normal(0, 1, 9)
    t_during = np.arange(1000, 1090, 10)
    after100 = rng.normal(0, 1, 5)
    t_post = np.arange(1100, 1300, 10)
    z_post = rng.normal(0, 1, len(t_post))
    base = stability_block(1000, 1090, before, during, t_during, after100, t_post, z_post)
    off = stability_block(1000, 1090, before + 2.25, during + 2.25, t_during,
                          after100 + 2.25, t_post, z_post + 2.25)
    assert_allclose(off, base, atol=1e-9)


# ---------------------------------------------------------------- between blocks

def test_between_blocks_gap_1000():
    taps = [make_tap(0, 1000, 2000), make_tap(1, 3000, 3100)]
    blocks = between_blocks(taps)
    # usable span [2300, 2700): four 91 ms blocks
    assert blocks == [(2300, 2391), (2391, 2482), (2482, 2573), (2573, 2664)]
    assert all(hi <= 2700 for _, hi in blocks)


def test_between_blocks_gap_too_small():
    taps = [make_tap(0, 1000, 2000), make_tap(1, 2650, 2750)]
    assert between_blocks(taps) == []
    # negative usable span must not produce blocks either
    taps = [make_tap(0, 1000, 2000), make_tap(1, 2400, 2500)]
    assert between_blocks(taps) == []


def test_between_blocks_multiple_gaps_and_hint():
    taps = [make_tap(0, 0, 100), make_tap(1, 1091, 1191), make_tap(2, 2182, 2282)]
    blocks = between_blocks(taps)
    # each gap spans 391 ms usable -> 4 blocks apiece
    assert len(blocks) == 8
    assert blocks[0] == (400, 491)
    assert blocks[4] == (1491, 1582)
    wide = between_blocks(taps, duration_hint_ms=200)
    assert wide == [(400, 600), (1491, 1691)]
    assert between_blocks([make_tap(0, 0, 100)]) == []


# ---------------------------------------------------------------- extraction

def test_extract_valid_tap_matches_blocks():
    taps = [make_tap(0, 500, 630)]
    session = grid_session(10, 2000, taps, seed=7)
    fm = extract_hmog(session)
    assert fm.values.shape == (1, 96)
    assert fm.columns == FEATURE_NAMES
    assert list(fm.t_ms) == [500]
    assert fm.meta["n_events"] == 1 and fm.meta["n_skipped"] == 0

    # recompute the acc block straight from the stream
    stream = session.streams[Sensor.ACC]
    t, chans = stream.t_ms, stream.channel_matrix()
    before = chans[(t >= 400) & (t < 500)]
    during = chans[(t >= 500) & (t <= 630)]
    after1 = chans[(t > 630) & (t <= 730)]
    res = resistance_block(before, during, after1)
    row = fm.values[0]
    for f_idx, family in enumerate(RESISTANCE_FAMILIES):
        for c_idx, channel in enumerate(CHANNELS):
            assert row[fm.col_index(f"acc_{channel}_{family}")] == pytest.approx(res[f_idx, c_idx])

    post = (t > 630) & (t <= 830)
    stab = stability_block(500, 630, before, during, t[(t >= 500) & (t <= 630)],
                           after1, t[post], chans[post])
    for f_idx, family in enumerate(STABILITY_FAMILIES):
        for c_idx, channel in enumerate(CHANNELS):
            assert row[fm.col_index(f"acc_{channel}_{family}")] == pytest.approx(stab[f_idx, c_idx])


def test_extract_skips_taps_without_context():
    # too close to either edge of the recording
    taps = [make_tap(0, 50, 180), make_tap(1, 900, 1030), make_tap(2, 1850, 1950)]
    session = grid_session(10, 2000, taps)
    fm = extract_hmog(session)
    assert fm.values.shape == (1, 96)
    assert list(fm.t_ms) == [900]
    assert fm.meta["n_skipped"] == 2


def test_extract_sensor_without_context_gets_nan_cells():
    taps = [make_tap(0, 900, 1030)]
    session = grid_session(10, 2000, taps, short_mag_ms=400)
    fm = extract_hmog(session)
    assert fm.values.shape == (1, 96)
    row = fm.values[0]
    mag_cols = [i for i, n in enumerate(FEATURE_NAMES) if n.startswith("mag_")]
    other = [i for i in range(96) if i not in mag_cols]
    assert np.isnan(row[mag_cols]).all()
    assert np.isfinite(row[other]).all()


def test_extract_missing_sensor_stream():
    taps = [make_tap(0, 900, 1030)]
    session = grid_session(10, 2000, taps)
    del session.streams[Sensor.GYR]
    row = extract_hmog(session).values[0]
    gyr = [i for i, n in enumerate(FEATURE_NAMES) if n.startswith("gyr_")]
    assert np.isnan(row[gyr]).all()
    assert np.isfinite(np.delete(row, gyr)).all()


def test_extract_short_taps_impossible_at_5hz():
    # on a 200 ms grid a 130 ms tap never has all four windows populated,
    # whatever its phase
    for q in range(0, 200, 7):
        session = grid_session(200, 4000, [make_tap(0, 2000 + q, 2130 + q)])
        fm = extract_hmog(session)
        assert fm.values.shape[0] == 0
        assert fm.meta["n_skipped"] == 1
    # a 210 ms tap aligned like the synthesizer's output survives
    ok = extract_hmog(grid_session(200, 4000, [make_tap(0, 900, 1110)]))
    assert ok.values.shape[0] == 1


def test_extract_between_mode_rows_at_block_starts():
    taps = [make_tap(0, 1000, 1100), make_tap(1, 2091, 2191)]
    session = grid_session(10, 4000, taps)
    fm = extract_hmog(session, mode="between")
    assert fm.meta["mode"] == "between"
    assert fm.meta["n_events"] == 4
    assert fm.meta["n_context_overlap"] == 0
    assert list(fm.t_ms) == [1400, 1491, 1582, 1673]
    assert np.isfinite(fm.values[:, fm.col_index("acc_x_res1")]).all()


def test_extract_counts_context_overlap():
    taps = [make_tap(0, 1000, 1100), make_tap(1, 1350, 1450), make_tap(2, 2000, 2100)]
    session = grid_session(10, 4000, taps)
    fm = extract_hmog(session)
    # 250 ms gap < 300 ms guard; both taps still extracted
    assert fm.meta["n_context_overlap"] == 1
    assert fm.values.shape[0] == 3


def test_extract_unknown_mode():
    session = grid_session(10, 1000, [])
    with pytest.raises(ValueError, match="mode"):
        extract_hmog(session, mode="sideways")


def test_extract_no_taps_empty_matrix():
    fm = extract_hmog(grid_session(10, 1000, []))
    assert fm.values.shape == (0, 96)
    assert fm.meta["n_events"] == 0
