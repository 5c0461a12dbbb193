"""Deterministic synthetic session generator.

Each user is a SynthProfile: per-sensor baseline offsets, tap-impulse
amplitudes with exponential decay, optional periodic gait (walking), and
tap/key timing distributions. The same (profile, seed) pair always yields
byte-identical sessions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .types import Condition, CorpusError, KeyEvent, Sensor, SENSOR_ORDER, SensorStream, Session, TapEvent

# canonical 35-key alphabet: 26 letters, 5 layout/control keys, 4 specials
KEY_ALPHABET: tuple[str, ...] = tuple("abcdefghijklmnopqrstuvwxyz") + (
    "shift", "switch", "delete", "done", "return",
    "space", "dot", "comma", "apostrophe",
)

_IMPULSE_TAIL_MS = 400      # impulse support after tap start
_MIN_TAP_GAP_MS = 360       # floor between tap end and next tap start
_SESSION_LEAD_MS = 400      # quiet lead-in before the first tap


def _arr(shape, value):
    out = np.zeros(shape)
    out[...] = value
    return out


@dataclass(frozen=True)
class SynthProfile:
    """Generative parameters for one user.

    Array fields are indexed [sensor, axis] with sensors ordered acc, gyr,
    mag and axes x, y, z.
    """

    user_id: str
    condition: Condition = Condition.SITTING
    sessions: int = 4
    session_seconds: float = 300.0
    sample_rate_hz: float = 100.0
    base_offset: np.ndarray = field(default_factory=lambda: _arr((3, 3), 0.0))
    noise_sd: np.ndarray = field(default_factory=lambda: np.array([0.08, 0.02, 0.3]))
    impulse_amp: np.ndarray = field(default_factory=lambda: _arr((3, 3), 0.0))
    impulse_decay_ms: float = 40.0
    gait_amp: np.ndarray = field(default_factory=lambda: _arr((3, 3), 0.0))
    gait_freq_hz: float = 1.9
    tap_rate_hz: float = 1.5
    tap_duration_mean_ms: float = 95.0
    tap_duration_sd_ms: float = 12.0
    touch_sample_step_ms: int = 10
    contact_size_mean: float = 0.45
    contact_size_sd: float = 0.04
    tap_center_px: tuple[float, float] = (540.0, 960.0)
    tap_spread_px: float = 120.0
    key_rate_hz: float = 1.0
    key_hold_mean_ms: float = 90.0
    key_hold_sd_ms: float = 14.0
    key_style: float = 0.0

    def validate(self) -> "SynthProfile":
        if self.sessions < 1:
            raise CorpusError("sessions must be >= 1")
        if self.session_seconds <= 0 or self.sample_rate_hz <= 0:
            raise CorpusError("session length and sample rate must be positive")
        if self.impulse_decay_ms <= 0 or self.tap_duration_mean_ms <= 0:
            raise CorpusError("impulse decay and tap duration must be positive")
        if self.tap_rate_hz < 0 or self.key_rate_hz < 0:
            raise CorpusError("event rates must be nonnegative")
        if self.touch_sample_step_ms < 1:
            raise CorpusError("touch sample step must be >= 1 ms")
        return self


def _tap_times(profile: SynthProfile, duration_ms: int, rng: np.random.Generator):
    """Tap (start, end) pairs leaving room for the 100 ms / 200 ms context."""
    if profile.tap_rate_hz == 0:
        return []
    mean_cycle = 1000.0 / profile.tap_rate_hz
    taps = []
    t = _SESSION_LEAD_MS + int(rng.uniform(0, mean_cycle))
    while True:
        dur = int(np.clip(rng.normal(profile.tap_duration_mean_ms, profile.tap_duration_sd_ms),
                          30, 340))
        if t + dur + 300 >= duration_ms:
            break
        taps.append((t, t + dur))
        cycle = max(dur + _MIN_TAP_GAP_MS, rng.normal(mean_cycle, 0.25 * mean_cycle))
        t = t + int(cycle)
    return taps


def _make_taps(profile: SynthProfile, times, rng: np.random.Generator) -> list[TapEvent]:
    taps = []
    cx, cy = profile.tap_center_px
    for tap_id, (t_start, t_end) in enumerate(times):
        t = np.arange(t_start, t_end + 1, profile.touch_sample_step_ms, dtype=np.int64)
        k = len(t)
        x0 = cx + rng.normal(0, profile.tap_spread_px)
        y0 = cy + rng.normal(0, profile.tap_spread_px)
        xy = np.column_stack([x0 + np.cumsum(rng.normal(0, 0.7, k)),
                              y0 + np.cumsum(rng.normal(0, 0.7, k))])
        size = np.clip(rng.normal(profile.contact_size_mean, profile.contact_size_sd, k),
                       0.01, 2.0)
        taps.append(TapEvent(tap_id=tap_id, t_start_ms=t_start, t_end_ms=t_end,
                             t_samples=t, xy_px=xy, contact_size=size))
    return taps


def _key_hold_offset(profile: SynthProfile, key_index: int) -> float:
    # stable per-user per-key habit, no extra rng state needed
    return 18.0 * np.sin(profile.key_style + 0.9 * key_index)


def _make_keys(profile: SynthProfile, duration_ms: int, rng: np.random.Generator) -> list[KeyEvent]:
    if profile.key_rate_hz == 0:
        return []
    weights = np.exp(0.9 * np.sin(profile.key_style + 2.3 * np.arange(len(KEY_ALPHABET))))
    weights /= weights.sum()
    mean_gap = 1000.0 / profile.key_rate_hz
    events = []
    t = 200 + int(rng.uniform(0, mean_gap))
    while t < duration_ms - 500:
        idx = int(rng.choice(len(KEY_ALPHABET), p=weights))
        hold = np.clip(rng.normal(profile.key_hold_mean_ms + _key_hold_offset(profile, idx),
                                  profile.key_hold_sd_ms), 20, 400)
        events.append(KeyEvent(key=KEY_ALPHABET[idx], t_press_ms=t,
                               t_release_ms=t + int(hold)))
        t += max(120, int(rng.normal(mean_gap, 0.3 * mean_gap)))
    return events


def _make_streams(profile: SynthProfile, duration_ms: int, taps,
                  rng: np.random.Generator) -> dict[Sensor, SensorStream]:
    step = 1000.0 / profile.sample_rate_hz
    n = int(duration_ms / step)
    t = np.floor(np.arange(n) * step).astype(np.int64)
    streams = {}
    for s_idx, sensor in enumerate(SENSOR_ORDER):
        values = profile.base_offset[s_idx] + rng.normal(0, profile.noise_sd[s_idx], (n, 3))
        if profile.condition is Condition.WALKING:
            phase = rng.uniform(0, 2 * np.pi, 3)
            wave = np.sin(2 * np.pi * profile.gait_freq_hz * (t[:, None] / 1000.0) + phase)
            values = values + profile.gait_amp[s_idx] * wave
        for t_start, _ in taps:
            i0 = int(np.searchsorted(t, t_start, side="left"))
            i1 = int(np.searchsorted(t, t_start + _IMPULSE_TAIL_MS, side="right"))
            if i0 >= i1:
                continue
            dt = (t[i0:i1] - t_start) / profile.impulse_decay_ms
            jitter = 1.0 + rng.normal(0, 0.08)
            values[i0:i1] += jitter * np.exp(-dt)[:, None] * profile.impulse_amp[s_idx]
        streams[sensor] = SensorStream(sensor=sensor, nominal_rate_hz=profile.sample_rate_hz,
                                       t_ms=t, values=values)
    return streams


def synthesize_user(profile: SynthProfile,
                    seed: int | np.random.SeedSequence) -> list[Session]:
    """Generate profile.sessions sessions; deterministic in (profile, seed)."""
    profile.validate()
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sessions = []
    for s_idx, child in enumerate(ss.spawn(profile.sessions)):
        rng = np.random.default_rng(child)
        duration_ms = int(profile.session_seconds * 1000)
        times = _tap_times(profile, duration_ms, rng)
        taps = _make_taps(profile, times, rng)
        keys = _make_keys(profile, duration_ms, rng)
        streams = _make_streams(profile, duration_ms, times, rng)
        sessions.append(Session(
            user_id=profile.user_id,
            session_id=f"s{s_idx + 1:02d}",
            condition=profile.condition,
            streams=streams,
            taps=taps,
            keys=keys,
        ).validate())
    return sessions


def make_profiles(n_users: int, condition: Condition | str, seed: int, *,
                  separation: float = 1.0, **overrides) -> list[SynthProfile]:
    """Draw n distinct user profiles; deterministic in (n_users, condition, seed)."""
    condition = Condition(condition)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    profiles = []
    for u in range(n_users):
        tilt = rng.normal(0, 0.12 * separation, 3) + np.array([0.0, 0.0, 1.0])
        tilt /= np.linalg.norm(tilt)
        base = np.zeros((3, 3))
        base[0] = 9.81 * tilt                                  # acc: gravity through grip tilt
        base[1] = rng.normal(0, 0.02 * separation, 3)          # gyr: drift
        base[2] = np.array([20.0, 5.0, 40.0]) + rng.normal(0, 4.0 * separation, 3)
        amp = np.zeros((3, 3))
        amp[0] = rng.uniform(0.6, 2.4, 3) * rng.choice([-1, 1], 3) * separation
        amp[1] = rng.uniform(0.12, 0.5, 3) * rng.choice([-1, 1], 3) * separation
        amp[2] = rng.uniform(0.05, 0.2, 3) * rng.choice([-1, 1], 3) * separation
        gait = np.zeros((3, 3))
        gait[0] = rng.uniform(0.6, 1.8, 3) * separation
        gait[1] = rng.uniform(0.15, 0.7, 3) * separation
        gait[2] = rng.uniform(0.02, 0.1, 3)
        profile = SynthProfile(
            user_id=f"u{u + 1:02d}",
            condition=condition,
            base_offset=base,
            noise_sd=np.array([0.10, 0.025, 0.35]),
            impulse_amp=amp,
            impulse_decay_ms=float(rng.uniform(28, 60)),
            gait_amp=gait,
            gait_freq_hz=float(rng.uniform(1.6, 2.3)),
            tap_rate_hz=float(rng.uniform(1.4, 1.9)),
            tap_duration_mean_ms=float(rng.uniform(210, 250)),
            tap_duration_sd_ms=float(rng.uniform(18, 30)),
            contact_size_mean=float(rng.uniform(0.30, 0.62)),
            contact_size_sd=float(rng.uniform(0.02, 0.05)),
            tap_spread_px=float(rng.uniform(80, 160)),
            key_rate_hz=float(rng.uniform(0.8, 1.4)),
            key_hold_mean_ms=float(rng.uniform(70, 130)),
            key_hold_sd_ms=float(rng.uniform(8, 18)),
            key_style=float(rng.uniform(0, 2 * np.pi)),
        )
        profiles.append(replace(profile, **overrides) if overrides else profile)
    return profiles


def make_corpus(profiles: list[SynthProfile], seed: int) -> list[Session]:
    """Synthesize every profile; per-user streams are decoupled."""
    ss = np.random.SeedSequence(seed)
    sessions: list[Session] = []
    for child, profile in zip(ss.spawn(len(profiles)), profiles):
        sessions.extend(synthesize_user(profile, child))
    return sessions
