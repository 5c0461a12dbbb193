"""End-to-end experiment runners behind the command line.

Every runner is a pure function of (config, corpus): templates come from
each user's first two sessions, scores from the remaining ones, and all
randomness descends from the master seed, so reruns are byte-identical.
Output files carry the config hash and seed in comment lines.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import verify
from .bkg import (
    commit,
    fit_discretization,
    ds,
    grs_build,
    guessing_distance,
    open_commitment,
    OpenFailure,
)
from .corpus import (
    Condition,
    Sensor,
    Session,
    downsample,
    load_corpus,
    make_corpus,
    make_profiles,
)
from .hmog import extract_hmog, feature_names_for
from .matrix import FeatureMatrix
from .pipeline import (
    EnrollmentError,
    MIN_TEMPLATE_VECTORS,
    PipelineError,
    build_template,
    fisher_scores,
    fit_feature_prep,
    nanmean_columns,
    scan_aggregate,
)
from .touchkeys import keystroke_features, latency_outlier_filter, tap_features

OUT_DIR_ENV = "HMOGKIT_OUT"

CHANNELS = ("hmog", "tap", "keyhold", "digraph")

# keeps per-session scan windows distinct across sessions after aggregation
_SESSION_STRIDE_MS = 1 << 44


class ConfigError(ValueError):
    """The requested run is malformed before any data is touched."""


class InfeasibleError(RuntimeError):
    """The run is well-formed but the data cannot support it."""


@dataclass(frozen=True)
class ExperimentConfig:
    corpus_dir: str | None = None     # None synthesizes a corpus
    n_users: int = 8
    sessions: int = 4
    session_seconds: float = 300.0
    condition: str = "sitting"
    separation: float = 1.0
    tap_rate_hz: float | None = None  # None keeps per-user draws
    channels: tuple[str, ...] = CHANNELS
    sensors: tuple[str, ...] = ("acc", "gyr", "mag")
    mode: str = "during"
    metric: str = "sm"
    scan_seconds: tuple[float, ...] = (60.0,)
    selector: str | None = "fisher"
    selector_value: float = 0.95
    pca_fraction: float | None = None
    min_vectors: int = MIN_TEMPLATE_VECTORS
    latency_max_ms: float = 1500.0
    latency_min_count: int = 3
    fusion_step: float = 0.05
    fusion_weights: dict | None = None
    downsample_factors: tuple[int, ...] = (1, 2, 6, 20)
    bkg_n: int = 13
    bkg_l: int = 10
    bkg_p: int = 29
    bkg_scan_seconds: float = 60.0
    bkg_channels: tuple[str, ...] = ("hmog",)
    out_dir: str | None = None
    seed: int = 7
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        for name in self.channels:
            if name not in CHANNELS:
                raise ConfigError(f"unknown channel {name!r}")
        for name in self.bkg_channels:
            if name not in CHANNELS:
                raise ConfigError(f"unknown bkg channel {name!r}")
        if not self.channels:
            raise ConfigError("at least one channel is required")
        known_sensors = {s.value for s in Sensor}
        for name in self.sensors:
            if name not in known_sensors:
                raise ConfigError(f"unknown sensor {name!r}")
        if not self.sensors:
            raise ConfigError("at least one sensor is required")
        try:
            Condition(self.condition)
        except ValueError:
            raise ConfigError(f"unknown condition {self.condition!r}") from None
        if self.mode not in ("during", "between"):
            raise ConfigError(f"mode must be during or between, got {self.mode!r}")
        if self.metric not in ("sm", "se"):
            raise ConfigError(f"metric must be sm or se, got {self.metric!r}")
        if not self.scan_seconds or any(t <= 0 for t in self.scan_seconds):
            raise ConfigError("scan lengths must be positive")
        if self.selector not in (None, "fisher", "mrmr"):
            raise ConfigError(f"unknown selector {self.selector!r}")
        if self.n_users < 2:
            raise ConfigError("need at least two users")
        if self.sessions < 3 and self.corpus_dir is None:
            raise ConfigError("synthetic corpora need >= 3 sessions for a test split")
        if self.min_vectors < 1:
            raise ConfigError("min_vectors must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if any(int(f) != f or f < 1 for f in self.downsample_factors):
            raise ConfigError("downsample factors must be positive integers")
        if min(self.bkg_n, self.bkg_l, self.bkg_p) < 1:
            raise ConfigError("bkg parameters must be positive")
        if self.fusion_weights is not None:
            bad = set(self.fusion_weights) - set(self.channels)
            if bad:
                raise ConfigError(f"fusion weights name unknown channels {sorted(bad)}")
            if any(w < 0 for w in self.fusion_weights.values()):
                raise ConfigError("fusion weights must be nonnegative")
        return self

    def canonical(self) -> dict:
        blob = asdict(self)
        for key, value in blob.items():
            if isinstance(value, tuple):
                blob[key] = list(value)
        return blob

    def config_hash(self) -> str:
        # out_dir and workers never change results, so the hash that stamps
        # output files ignores them: reruns into another directory match.
        blob = self.canonical()
        del blob["out_dir"], blob["workers"]
        text = json.dumps(blob, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, item) for item in items]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# corpus plumbing
# ---------------------------------------------------------------------------

def build_sessions(config: ExperimentConfig) -> list[Session]:
    if config.corpus_dir is not None:
        sessions = load_corpus(config.corpus_dir)
    else:
        overrides = {"sessions": config.sessions,
                     "session_seconds": config.session_seconds}
        if config.tap_rate_hz is not None:
            overrides["tap_rate_hz"] = config.tap_rate_hz
        profiles = make_profiles(config.n_users, config.condition, config.seed,
                                 separation=config.separation, **overrides)
        sessions = make_corpus(profiles, config.seed)
    keep = [s for s in sessions if s.condition.value == config.condition]
    if not keep:
        raise InfeasibleError(f"no sessions recorded under condition {config.condition!r}")
    return keep


def training_sessions(sessions: list[Session]) -> list[Session]:
    """The first two sessions of every user, by session id."""
    by_user: dict[str, list[Session]] = {}
    for s in sessions:
        by_user.setdefault(s.user_id, []).append(s)
    train = []
    for user in sorted(by_user):
        ordered = sorted(by_user[user], key=lambda s: s.session_id)
        train.extend(ordered[:2])
    return train


def split_train_test(sessions: list[Session]) -> tuple[list[Session], list[Session]]:
    """First two sessions per user train, the rest test."""
    train = training_sessions(sessions)
    train_keys = {(s.user_id, s.session_id) for s in train}
    test = [s for s in sessions
            if (s.user_id, s.session_id) not in train_keys]
    if not test:
        raise InfeasibleError("no sessions left for testing after the training split")
    return train, test


def session_ordinals(sessions: list[Session]) -> dict[tuple[str, str], int]:
    keys = sorted({(s.user_id, s.session_id) for s in sessions})
    return {key: i for i, key in enumerate(keys)}


def extract_channel(sessions: list[Session], channel: str,
                    config: ExperimentConfig, mode: str | None = None) -> FeatureMatrix:
    parts = []
    for s in sorted(sessions, key=lambda s: (s.user_id, s.session_id)):
        if channel == "hmog":
            fm = extract_hmog(s, mode or config.mode)
            if tuple(config.sensors) != tuple(x.value for x in Sensor):
                fm = fm.select_columns(feature_names_for(config.sensors))
        elif channel == "tap":
            fm = tap_features(s)
        elif channel == "keyhold":
            fm = keystroke_features(s)[0]
        elif channel == "digraph":
            fm = keystroke_features(s)[1]
        else:
            raise ConfigError(f"unknown channel {channel!r}")
        parts.append(fm)
    if not parts:
        return FeatureMatrix.empty(())
    return FeatureMatrix.vstack(parts)


def _filter_digraphs(train: FeatureMatrix, test: FeatureMatrix,
                     config: ExperimentConfig) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Outlier-filter latencies; the column set is decided on training data
    only and then imposed on the test side."""
    ftrain = latency_outlier_filter(train, config.latency_max_ms,
                                    config.latency_min_count)
    ftest = latency_outlier_filter(test, config.latency_max_ms, 0)
    if ftrain.n_features == 0:
        return ftrain, ftest
    ftest = ftest.select_columns(ftrain.columns)
    return ftrain, ftest


# ---------------------------------------------------------------------------
# authentication runs
# ---------------------------------------------------------------------------

def aggregate_scans(fm: FeatureMatrix, scan_s: float,
                    ordinals: dict[tuple[str, str], int]) -> FeatureMatrix:
    """Per-session scan aggregation with window starts anchored at 0 so the
    same window lines up across channels; session ordinals shift timestamps
    apart so windows stay globally unique."""
    parts = []
    for (user, session), ordinal in sorted(ordinals.items()):
        mask = (fm.user_ids == user) & (fm.session_ids == session)
        if not mask.any():
            continue
        agg = scan_aggregate(fm.take(mask), scan_s, anchor_ms=0)
        if agg.n_rows == 0:
            continue
        parts.append(FeatureMatrix(agg.columns, agg.values, agg.user_ids,
                                   agg.session_ids,
                                   agg.t_ms + ordinal * _SESSION_STRIDE_MS))
    if not parts:
        return FeatureMatrix.empty(fm.columns)
    return FeatureMatrix.vstack(parts)


def _enroll_channel(channel: str, train_fm: FeatureMatrix,
                    config: ExperimentConfig):
    """Templates for every enrollable user plus per-user failure notes."""
    prep = None
    if channel == "hmog" and (config.selector is not None
                              or config.pca_fraction is not None):
        prep = fit_feature_prep(train_fm, selector=config.selector,
                                selector_value=config.selector_value,
                                pca_fraction=config.pca_fraction)
    templates, failures = {}, []
    for user in train_fm.users():
        try:
            templates[user] = build_template(user, train_fm.for_user(user), prep,
                                             min_vectors=config.min_vectors)
        except EnrollmentError as exc:
            failures.append({"channel": channel, "user_id": user,
                             "reason": str(exc)})
    return prep, templates, failures


def _channel_setup(config: ExperimentConfig, train_s: list[Session],
                   test_s: list[Session], channels, mode: str | None = None):
    """Extract, filter, and enroll every requested channel."""
    data, failures, notes = {}, [], []
    for channel in channels:
        train_fm = extract_channel(train_s, channel, config, mode)
        test_fm = extract_channel(test_s, channel, config, mode)
        if channel == "digraph":
            train_fm, test_fm = _filter_digraphs(train_fm, test_fm, config)
        if train_fm.n_rows == 0 or train_fm.n_features == 0:
            notes.append(f"{channel}: no usable training vectors")
            continue
        try:
            prep, templates, fails = _enroll_channel(channel, train_fm, config)
        except PipelineError as exc:
            notes.append(f"{channel}: {exc}")
            continue
        failures.extend(fails)
        if len(templates) < 2:
            notes.append(f"{channel}: fewer than two users enrolled")
            continue
        data[channel] = (templates, test_fm)
    return data, failures, notes


def _scan_eval(channel_data, ordinals, scan_s: float, config: ExperimentConfig):
    """Per-channel score sets for one scan length."""
    out = {}
    for channel, (templates, test_fm) in channel_data.items():
        agg = aggregate_scans(test_fm, scan_s, ordinals)
        if agg.n_rows == 0:
            continue
        scores = verify.gen_scores(templates, agg, config.metric)
        if scores.genuine and scores.impostor:
            out[channel] = scores
    return out


def _fuse(per_channel, config: ExperimentConfig):
    """(weights, fused ScoreSet, eer) for the live channels."""
    if config.fusion_weights is not None:
        weights = {c: float(config.fusion_weights.get(c, 0.0)) for c in per_channel}
        fused = verify.fuse_scoresets(per_channel, weights)
        if not fused.genuine or not fused.impostor:
            raise InfeasibleError("fixed fusion weights left no decisions")
        value = verify.eer(fused.genuine_scores(), fused.impostor_scores())
        return weights, fused, value
    return verify.search_fusion_weights(per_channel, config.fusion_step)


def _ensure_out(config: ExperimentConfig) -> Path | None:
    if config.out_dir is None:
        return None
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(config: ExperimentConfig) -> list[str]:
    return [f"config_hash={config.config_hash()}", f"seed={config.seed}"]


def _json_default(o):
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2,
                               default=_json_default) + "\n",
                    encoding="utf-8")


def _write_csv(path: Path, header: str, rows: list[str],
               comments: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def run_auth(config: ExperimentConfig,
             sessions: list[Session] | None = None) -> dict:
    """Verification experiment: per-channel and fused EER per scan length."""
    config.validate()
    if sessions is None:
        sessions = build_sessions(config)
    train_s, test_s = split_train_test(sessions)
    ordinals = session_ordinals(test_s)
    channel_data, failures, notes = _channel_setup(config, train_s, test_s,
                                                   config.channels)
    if not channel_data:
        raise InfeasibleError("; ".join(notes) or "no channel could enroll users")

    out = _ensure_out(config)
    comments = _stamp(config)
    scans: dict[str, dict] = {}
    eer_rows: list[str] = []

    def eval_scan(scan_s: float):
        return scan_s, _scan_eval(channel_data, ordinals, scan_s, config)

    for scan_s, per_channel in _map(eval_scan, config.scan_seconds, config.workers):
        if not per_channel:
            notes.append(f"{scan_s:g}s: no scored decisions")
            continue
        entry: dict = {"channels": {}, "fused": None}
        for channel, scores in per_channel.items():
            gen, imp = scores.genuine_scores(), scores.impostor_scores()
            value = verify.eer(gen, imp)
            entry["channels"][channel] = {
                "eer": value, "n_genuine": len(gen), "n_impostor": len(imp)}
            eer_rows.append(f"{scan_s:g},{channel},{value!r},{len(gen)},{len(imp)}")
            if out is not None:
                scores.write_csv(out / f"scores_{channel}_{scan_s:g}s.csv", comments)
                verify.write_det_csv(out / f"det_{channel}_{scan_s:g}s.csv",
                                     verify.det_curve(gen, imp), comments)
        if len(per_channel) >= 2:
            weights, fused, value = _fuse(per_channel, config)
        else:
            only = next(iter(per_channel))
            weights = {only: 1.0}
            fused = per_channel[only]
            value = entry["channels"][only]["eer"]
        entry["fused"] = {"eer": value, "weights": weights,
                          "n_genuine": len(fused.genuine),
                          "n_impostor": len(fused.impostor)}
        eer_rows.append(f"{scan_s:g},fused,{value!r},{len(fused.genuine)},"
                        f"{len(fused.impostor)}")
        if out is not None:
            fused.write_csv(out / f"scores_fused_{scan_s:g}s.csv", comments)
            verify.write_det_csv(
                out / f"det_fused_{scan_s:g}s.csv",
                verify.det_curve(fused.genuine_scores(), fused.impostor_scores()),
                comments)
        scans[f"{scan_s:g}"] = entry

    if not scans:
        raise InfeasibleError("no scan length produced scored decisions")
    bundle = {
        "config": config.canonical(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "scans": scans,
        "enrollment_failures": failures,
        "notes": notes,
    }
    if out is not None:
        _write_csv(out / "eer.csv", "scan_s,channel,eer,n_genuine,n_impostor",
                   eer_rows, comments)
        _write_csv(out / "enrollment.csv", "channel,user_id,reason",
                   [f"{f['channel']},{f['user_id']},{f['reason']}"
                    for f in failures], comments)
        _write_json(out / "summary.json", bundle)
    return bundle


def run_between(config: ExperimentConfig,
                sessions: list[Session] | None = None) -> dict:
    """During-tap vs between-tap comparison on the HMOG channel."""
    config.validate()
    if sessions is None:
        sessions = build_sessions(config)
    train_s, test_s = split_train_test(sessions)
    ordinals = session_ordinals(test_s)
    out = _ensure_out(config)
    comments = _stamp(config)
    modes: dict[str, dict] = {}
    rows: list[str] = []
    all_notes: list[str] = []
    for mode in ("during", "between"):
        channel_data, failures, notes = _channel_setup(
            config, train_s, test_s, ("hmog",), mode)
        all_notes.extend(f"{mode}: {n}" for n in notes)
        if not channel_data:
            modes[mode] = {"scans": {}, "enrollment_failures": failures}
            continue
        per_mode: dict[str, dict] = {}
        for scan_s in config.scan_seconds:
            per_channel = _scan_eval(channel_data, ordinals, scan_s, config)
            if "hmog" not in per_channel:
                all_notes.append(f"{mode}: {scan_s:g}s produced no decisions")
                continue
            scores = per_channel["hmog"]
            gen, imp = scores.genuine_scores(), scores.impostor_scores()
            value = verify.eer(gen, imp)
            per_mode[f"{scan_s:g}"] = {"eer": value, "n_genuine": len(gen),
                                       "n_impostor": len(imp)}
            rows.append(f"{mode},{scan_s:g},{value!r},{len(gen)},{len(imp)}")
            if out is not None:
                scores.write_csv(out / f"scores_{mode}_{scan_s:g}s.csv", comments)
        modes[mode] = {"scans": per_mode, "enrollment_failures": failures}
    if not any(modes[m]["scans"] for m in modes):
        raise InfeasibleError("; ".join(all_notes) or "neither mode produced decisions")
    bundle = {
        "config": config.canonical(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "modes": modes,
        "notes": all_notes,
    }
    if out is not None:
        _write_csv(out / "between.csv", "mode,scan_s,eer,n_genuine,n_impostor",
                   rows, comments)
        _write_json(out / "summary.json", bundle)
    return bundle


def _downsample_session(session: Session, factor: int) -> Session:
    if factor == 1:
        return session
    streams = {sensor: downsample(stream, factor)
               for sensor, stream in session.streams.items()}
    return Session(user_id=session.user_id, session_id=session.session_id,
                   condition=session.condition, streams=streams,
                   taps=session.taps, keys=session.keys)


def run_rate_sweep(config: ExperimentConfig,
                   sessions: list[Session] | None = None) -> dict:
    """HMOG-only EER after downsampling the sensor streams per factor."""
    config.validate()
    if sessions is None:
        sessions = build_sessions(config)

    def eval_factor(factor: int):
        reduced = [_downsample_session(s, factor) for s in sessions]
        train_s, test_s = split_train_test(reduced)
        ordinals = session_ordinals(test_s)
        channel_data, failures, notes = _channel_setup(config, train_s, test_s,
                                                       ("hmog",))
        rate_hz = next(iter(reduced[0].streams.values())).nominal_rate_hz
        per_factor: dict = {"rate_hz": rate_hz, "scans": {},
                            "enrollment_failures": failures, "notes": notes}
        if not channel_data:
            return factor, per_factor
        n_enrolled = len(channel_data["hmog"][0])
        for scan_s in config.scan_seconds:
            per_channel = _scan_eval(channel_data, ordinals, scan_s, config)
            if "hmog" not in per_channel:
                per_factor["notes"].append(f"{scan_s:g}s produced no decisions")
                continue
            scores = per_channel["hmog"]
            gen, imp = scores.genuine_scores(), scores.impostor_scores()
            per_factor["scans"][f"{scan_s:g}"] = {
                "eer": verify.eer(gen, imp), "n_genuine": len(gen),
                "n_impostor": len(imp), "n_enrolled": n_enrolled}
        return factor, per_factor

    factors = {}
    rows = []
    for factor, per_factor in _map(eval_factor,
                                   [int(f) for f in config.downsample_factors],
                                   config.workers):
        factors[str(factor)] = per_factor
        for scan_key, cell in per_factor["scans"].items():
            rows.append(f"{factor},{per_factor['rate_hz']!r},{scan_key},"
                        f"{cell['eer']!r},{cell['n_enrolled']},"
                        f"{cell['n_genuine']},{cell['n_impostor']}")
    if not any(per["scans"] for per in factors.values()):
        raise InfeasibleError("no downsample factor produced scored decisions")
    bundle = {
        "config": config.canonical(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "factors": factors,
    }
    out = _ensure_out(config)
    if out is not None:
        _write_csv(out / "sweep.csv",
                   "factor,rate_hz,scan_s,eer,n_enrolled,n_genuine,n_impostor",
                   rows, _stamp(config))
        _write_json(out / "summary.json", bundle)
    return bundle


# ---------------------------------------------------------------------------
# key generation
# ---------------------------------------------------------------------------

def _finite_or(values: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(values), values, fallback)


def _bkg_channel(channel: str, config: ExperimentConfig, params,
                 train_s, test_s, ordinals) -> dict:
    train_fm = extract_channel(train_s, channel, config)
    test_fm = extract_channel(test_s, channel, config)
    if channel == "digraph":
        train_fm, test_fm = _filter_digraphs(train_fm, test_fm, config)
    report: dict = {"channel": channel, "log2_keyspace": config.bkg_l * math.log2(config.bkg_p)}
    if train_fm.n_rows == 0 or train_fm.n_features < params.n:
        report["error"] = "not enough features for the code length"
        return report

    scores = fisher_scores(train_fm)
    order = np.argsort(-scores, kind="stable")[:params.n]
    selected = [train_fm.columns[i] for i in order]
    train_sel = train_fm.select_columns(selected)
    test_sel = test_fm.select_columns(selected)
    pooled = nanmean_columns(train_sel.values)
    pooled = np.where(np.isfinite(pooled), pooled, 0.0)
    spec = fit_discretization(train_sel.values, config.bkg_p)

    users = train_sel.users()
    root = np.random.SeedSequence([config.seed, 0xB46])
    commitments, passwords = {}, {}
    enroll_notes = []
    for user, child in zip(users, root.spawn(len(users))):
        user_rows = train_sel.for_user(user)
        if user_rows.n_rows == 0:
            enroll_notes.append(f"{user}: no training vectors")
            continue
        enrollment = _finite_or(nanmean_columns(user_rows.values), pooled)
        grid = ds(enrollment, spec)
        rng = np.random.default_rng(child)
        commitments[user], _ = commit(grid, user, params=params, rng=rng,
                                      spec=spec)
        passwords[user] = user
    if len(commitments) < 2:
        report["error"] = "fewer than two users could enroll"
        report["enroll_notes"] = enroll_notes
        return report

    agg = aggregate_scans(test_sel, config.bkg_scan_seconds, ordinals)
    probes: dict[str, list[np.ndarray]] = {u: [] for u in commitments}
    for i in range(agg.n_rows):
        user = str(agg.user_ids[i])
        if user in probes:
            probes[user].append(ds(_finite_or(agg.values[i], pooled), spec))
    if any(not rows for rows in probes.values()):
        missing = sorted(u for u, rows in probes.items() if not rows)
        enroll_notes.append(f"no probes for {', '.join(missing)}")
        for user in missing:
            del probes[user]
    if len(probes) < 2:
        report["error"] = "fewer than two users have probe vectors"
        report["enroll_notes"] = enroll_notes
        return report

    genuine_total = genuine_opens = 0
    impostor_total = impostor_opens = 0
    for claimant, rows in sorted(probes.items()):
        for target in sorted(commitments):
            for grid in rows:
                try:
                    open_commitment(commitments[target], grid, passwords[target],
                                    params=params)
                    opened = True
                except OpenFailure:
                    opened = False
                if claimant == target:
                    genuine_total += 1
                    genuine_opens += opened
                else:
                    impostor_total += 1
                    impostor_opens += opened
    far = impostor_opens / impostor_total if impostor_total else 0.0
    frr = 1.0 - genuine_opens / genuine_total if genuine_total else 1.0
    report.update({
        "far": far, "frr": frr, "eer": (far + frr) / 2,
        "n_genuine": genuine_total, "n_impostor": impostor_total,
        "key_generation_possible": genuine_opens > 0,
        "enroll_notes": enroll_notes,
    })
    gd_targets = {u: commitments[u] for u in probes}
    first_probe = {u: rows[0] for u, rows in probes.items()}
    gd = guessing_distance(gd_targets, first_probe,
                           {u: passwords[u] for u in probes}, params)
    report["mean_guessing_distance"] = gd.mean_distance
    report["non_guessed_pct"] = gd.not_guessed_pct
    report["guessing_distances"] = {u: v for u, v in sorted(gd.distances.items())}
    return report


def run_bkg(config: ExperimentConfig,
            sessions: list[Session] | None = None) -> dict:
    """Key-generation experiment: per-channel FAR/FRR at the binary open
    decision, guessing distance, and keyspace size."""
    config.validate()
    try:
        params = grs_build(config.bkg_n, config.bkg_l, config.bkg_p)
    except ValueError as exc:
        raise ConfigError(f"bkg code parameters rejected: {exc}") from None
    if sessions is None:
        sessions = build_sessions(config)
    train_s, test_s = split_train_test(sessions)
    ordinals = session_ordinals(test_s)
    reports = [_bkg_channel(channel, config, params, train_s, test_s, ordinals)
               for channel in config.bkg_channels]
    if all("error" in r for r in reports):
        raise InfeasibleError("; ".join(f"{r['channel']}: {r['error']}"
                                        for r in reports))
    bundle = {
        "config": config.canonical(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "code": {"n": params.n, "l": params.l, "p": params.p,
                 "radius": params.radius},
        "channels": {r["channel"]: {k: v for k, v in r.items() if k != "channel"}
                     for r in reports},
    }
    out = _ensure_out(config)
    if out is not None:
        rows = []
        for r in reports:
            if "error" in r:
                rows.append(f"{r['channel']},,,,,,{r['error']}")
                continue
            rows.append(
                f"{r['channel']},{r['eer']!r},{r['far']!r},{r['frr']!r},"
                f"{r['mean_guessing_distance']!r},{r['non_guessed_pct']!r},"
                f"{'yes' if r['key_generation_possible'] else 'no'}")
        _write_csv(out / "bkg.csv",
                   "channel,eer,far,frr,mean_gd,non_guessed_pct,key_generation",
                   rows, _stamp(config))
        _write_json(out / "summary.json", bundle)
    return bundle
