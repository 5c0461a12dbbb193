"""Command line entry points.

Every subcommand uses long-form flags only.  A JSON config file passed via
``--config`` holds experiment-field overrides that take precedence over
flags; flags in turn override built-in defaults.  Exit codes: 0 success,
2 configuration error, 3 data error, 4 infeasible experiment.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import verify
from .corpus.io import ParseError, load_mapping, parse_session, save_corpus
from .corpus.types import CorpusError
from .experiments import (
    OUT_DIR_ENV,
    ConfigError,
    ExperimentConfig,
    InfeasibleError,
    _enroll_channel,
    _stamp,
    _write_json,
    build_sessions,
    extract_channel,
    run_auth,
    run_between,
    run_bkg,
    run_rate_sweep,
    training_sessions,
)
from .pipeline import PipelineError, save_templates
from .touchkeys import latency_outlier_filter
from .verify import ScoreSet, VerifyError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INFEASIBLE = 4

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}
_TUPLE_FIELDS = {"channels", "sensors", "scan_seconds", "downsample_factors",
                 "bkg_channels"}


# ---------------------------------------------------------------------------
# flag parsing helpers
# ---------------------------------------------------------------------------

def _csv_str(text: str) -> tuple[str, ...]:
    items = tuple(part.strip() for part in text.split(",") if part.strip())
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def _csv_float(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in _csv_str(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _csv_int(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in _csv_str(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _weights(text: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for part in _csv_str(text):
        name, sep, value = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(
                f"expected name=value, got {part!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return out


def _add_corpus_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--corpus", dest="corpus_dir",
                    help="read sessions from this corpus directory")
    sp.add_argument("--users", dest="n_users", type=int,
                    help="number of synthetic users when no corpus is given")
    sp.add_argument("--sessions", dest="sessions", type=int,
                    help="synthetic sessions per user")
    sp.add_argument("--session-seconds", dest="session_seconds", type=float,
                    help="synthetic session length in seconds")
    sp.add_argument("--condition", dest="condition",
                    help="recording condition to keep (sitting or walking)")
    sp.add_argument("--separation", dest="separation", type=float,
                    help="between-user separation of the synthetic profiles")
    sp.add_argument("--tap-rate", dest="tap_rate_hz", type=float,
                    help="synthetic tap rate in Hz")


def _add_common_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", dest="config",
                    help="JSON file with config overrides (beats flags)")
    sp.add_argument("--out-dir", dest="out_dir",
                    help=f"output directory (default ${OUT_DIR_ENV})")
    sp.add_argument("--seed", dest="seed", type=int, help="master seed")
    sp.add_argument("--workers", dest="workers", type=int,
                    help="parallel workers; results stay in submission order")


def _add_feature_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--sensors", dest="sensors", type=_csv_str,
                    help="comma list of sensors (acc,gyr,mag)")
    sp.add_argument("--mode", dest="mode",
                    help="tap window mode: during or between")
    sp.add_argument("--latency-max", dest="latency_max_ms", type=float,
                    help="digraph latency outlier ceiling in ms")
    sp.add_argument("--latency-min-count", dest="latency_min_count", type=int,
                    help="minimum finite latencies to keep a digraph column")


def _add_eval_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--channels", dest="channels", type=_csv_str,
                    help="comma list of channels (hmog,tap,keyhold,digraph)")
    sp.add_argument("--metric", dest="metric",
                    help="distance metric: sm or se")
    sp.add_argument("--scans", dest="scan_seconds", type=_csv_float,
                    help="comma list of scan lengths in seconds")
    sp.add_argument("--selector", dest="selector",
                    help="feature selector: fisher, mrmr, or none")
    sp.add_argument("--selector-value", dest="selector_value", type=float,
                    help="score-mass fraction (fisher) or threshold (mrmr)")
    sp.add_argument("--pca-fraction", dest="pca_fraction", type=float,
                    help="variance fraction kept by the PCA stage")
    sp.add_argument("--min-vectors", dest="min_vectors", type=int,
                    help="enrollment floor in training vectors per user")
    sp.add_argument("--fusion-step", dest="fusion_step", type=float,
                    help="fusion weight grid step")
    sp.add_argument("--weights", dest="fusion_weights", type=_weights,
                    help="fixed fusion weights, e.g. hmog=0.6,tap=0.4")


def _add_bkg_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--code-length", dest="bkg_n", type=int,
                    help="code length n (number of committed features)")
    sp.add_argument("--message-length", dest="bkg_l", type=int,
                    help="message length l (key is l field symbols)")
    sp.add_argument("--field-prime", dest="bkg_p", type=int,
                    help="prime field size p")
    sp.add_argument("--bkg-scan", dest="bkg_scan_seconds", type=float,
                    help="probe scan length in seconds")
    sp.add_argument("--bkg-channels", dest="bkg_channels", type=_csv_str,
                    help="comma list of channels to commit")


def _load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _coerce_field(name: str, value):
    if name in _TUPLE_FIELDS and isinstance(value, list):
        return tuple(value)
    if name == "fusion_weights" and value is not None:
        if not isinstance(value, dict):
            raise ConfigError("fusion_weights must be an object")
        return {str(k): float(v) for k, v in value.items()}
    return value


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, overridden by flags, overridden by the --config file."""
    overrides = {k: v for k, v in vars(args).items()
                 if k in _CONFIG_FIELDS and v is not None}
    config_path = getattr(args, "config", None)
    if config_path:
        for key, value in _load_config_file(config_path).items():
            if key not in _CONFIG_FIELDS:
                raise ConfigError(f"unknown config field {key!r}")
            overrides[key] = _coerce_field(key, value)
    # "none" on the command line or in the file means no selector at all;
    # a bare None would be eaten by the flag filter above.
    if overrides.get("selector") == "none":
        overrides["selector"] = None
    if overrides.get("out_dir") is None:
        overrides["out_dir"] = os.environ.get(OUT_DIR_ENV) or None
    config = ExperimentConfig(**overrides)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace) -> int:
    spec = _load_config_file(args.manifest)
    entries = spec.get("sessions")
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{args.manifest}: expected a non-empty"
                          " \"sessions\" list")
    mapping = load_mapping(args.mapping) if args.mapping else None
    base = Path(args.manifest).parent
    sessions = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError(f"{args.manifest}: session {i} is not an object")
        try:
            sensor = entry["sensor_file"]
            touch = entry["touch_file"]
            keys = entry["key_file"]
            user_id = entry["user_id"]
            session_id = entry["session_id"]
            condition = entry["condition"]
        except KeyError as exc:
            raise ConfigError(
                f"{args.manifest}: session {i} is missing {exc}") from None
        taps = entry.get("taps_file")
        sessions.append(parse_session(
            str(base / sensor), str(base / touch), str(base / keys),
            user_id=str(user_id), session_id=str(session_id),
            condition=str(condition),
            taps_path=str(base / taps) if taps else None,
            mapping=mapping,
            nominal_rate_hz=float(entry.get("rate_hz", args.rate))))
    save_corpus(sessions, args.corpus_out)
    print(f"ingested {len(sessions)} sessions into {args.corpus_out}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    config = build_config(args)
    if config.corpus_dir is not None:
        raise ConfigError("synth generates a corpus; --corpus is not accepted")
    sessions = build_sessions(config)
    save_corpus(sessions, args.corpus_out)
    print(f"wrote {len(sessions)} sessions ({config.n_users} users)"
          f" to {args.corpus_out}  config_hash={config.config_hash()}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    config = build_config(args)
    if config.corpus_dir is None:
        raise ConfigError("extract needs --corpus")
    config = dataclasses.replace(config, channels=(args.channel,))
    config.validate()
    sessions = build_sessions(config)
    fm = extract_channel(sessions, args.channel, config)
    fm.write_csv(args.features_out, _stamp(config))
    print(f"{args.channel}: {fm.n_rows} rows x {fm.n_features} features"
          f" -> {args.features_out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = build_config(args)
    if config.corpus_dir is None:
        raise ConfigError("train needs --corpus")
    config = dataclasses.replace(config, channels=(args.channel,))
    config.validate()
    sessions = build_sessions(config)
    train_s = training_sessions(sessions)
    train_fm = extract_channel(train_s, args.channel, config)
    if args.channel == "digraph":
        train_fm = latency_outlier_filter(train_fm, config.latency_max_ms,
                                          config.latency_min_count)
    _, templates, failures = _enroll_channel(args.channel, train_fm, config)
    for failure in failures:
        print(f"skipped {failure['user_id']}: {failure['reason']}",
              file=sys.stderr)
    if not templates:
        raise InfeasibleError("no user met the enrollment floor")
    save_templates(args.templates_out, templates,
                   params_echo={"channel": args.channel,
                                "config_hash": config.config_hash(),
                                "seed": config.seed})
    print(f"enrolled {len(templates)} users -> {args.templates_out}")
    return EXIT_OK


def _print_auth(bundle: dict) -> None:
    for scan_key in sorted(bundle["scans"], key=float):
        entry = bundle["scans"][scan_key]
        for channel in sorted(entry["channels"]):
            cell = entry["channels"][channel]
            print(f"scan {scan_key}s  {channel:<8} eer={cell['eer']:.4f}"
                  f"  ({cell['n_genuine']} gen / {cell['n_impostor']} imp)")
        fused = entry["fused"]
        print(f"scan {scan_key}s  fused    eer={fused['eer']:.4f}"
              f"  weights={json.dumps(fused['weights'], sort_keys=True)}")


def cmd_eval(args: argparse.Namespace) -> int:
    bundle = run_auth(build_config(args))
    _print_auth(bundle)
    return EXIT_OK


def cmd_between(args: argparse.Namespace) -> int:
    bundle = run_between(build_config(args))
    for mode in ("during", "between"):
        scans = bundle["modes"][mode]["scans"]
        for scan_key in sorted(scans, key=float):
            cell = scans[scan_key]
            print(f"{mode:<8} scan {scan_key}s  eer={cell['eer']:.4f}"
                  f"  ({cell['n_genuine']} gen / {cell['n_impostor']} imp)")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    bundle = run_rate_sweep(build_config(args))
    for factor in sorted(bundle["factors"], key=int):
        per = bundle["factors"][factor]
        for scan_key in sorted(per["scans"], key=float):
            cell = per["scans"][scan_key]
            print(f"factor {factor:>3} ({per['rate_hz']:g} Hz)"
                  f"  scan {scan_key}s  eer={cell['eer']:.4f}"
                  f"  enrolled={cell['n_enrolled']}")
    return EXIT_OK


def cmd_bkg(args: argparse.Namespace) -> int:
    bundle = run_bkg(build_config(args))
    code = bundle["code"]
    print(f"code n={code['n']} l={code['l']} p={code['p']}"
          f" radius={code['radius']}")
    for channel in sorted(bundle["channels"]):
        report = bundle["channels"][channel]
        if "error" in report:
            print(f"{channel:<8} error: {report['error']}")
            continue
        gd = report["mean_guessing_distance"]
        print(f"{channel:<8} eer={report['eer']:.4f} far={report['far']:.4f}"
              f" frr={report['frr']:.4f} mean_gd={gd:.3f}"
              f" non_guessed={report['non_guessed_pct']:.1f}%"
              f" keys={'yes' if report['key_generation_possible'] else 'no'}")
    return EXIT_OK


def cmd_fuse(args: argparse.Namespace) -> int:
    # fuse weights name score files rather than experiment channels, so
    # they stay out of the config and its channel validation
    fixed = args.fusion_weights
    args.fusion_weights = None
    config = build_config(args)
    channels: dict[str, ScoreSet] = {}
    for item in args.scores or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"--scores expects name=path, got {item!r}")
        channels[name.strip()] = ScoreSet.read_csv(path)
    if len(channels) < 2:
        raise ConfigError("fuse needs at least two --scores channels")
    if fixed is not None:
        weights = {c: float(fixed.get(c, 0.0)) for c in channels}
        fused = verify.fuse_scoresets(channels, weights)
        if not fused.genuine or not fused.impostor:
            raise InfeasibleError("fixed fusion weights left no decisions")
        value = verify.eer(fused.genuine_scores(), fused.impostor_scores())
    else:
        weights, fused, value = verify.search_fusion_weights(
            channels, config.fusion_step)
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        comments = _stamp(config)
        fused.write_csv(out / "scores_fused.csv", comments)
        verify.write_det_csv(
            out / "det_fused.csv",
            verify.det_curve(fused.genuine_scores(), fused.impostor_scores()),
            comments)
        _write_json(out / "fusion.json", {
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "eer": value,
            "weights": weights,
            "n_genuine": len(fused.genuine),
            "n_impostor": len(fused.impostor),
        })
    print(f"fused eer={value:.4f}"
          f"  weights={json.dumps(weights, sort_keys=True)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmogkit",
        description="Movement-based verification and key generation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw recordings into a corpus")
    p.add_argument("--manifest", required=True,
                   help="JSON manifest with a \"sessions\" list")
    p.add_argument("--mapping", help="column mapping file (canonical = source)")
    p.add_argument("--rate", type=float, default=100.0,
                   help="nominal sensor rate in Hz (default 100)")
    p.add_argument("--corpus-out", required=True,
                   help="directory for the parsed corpus")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add_corpus_flags(p)
    _add_common_flags(p)
    p.add_argument("--corpus-out", required=True,
                   help="directory for the generated corpus")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("extract", help="write a feature matrix CSV")
    _add_corpus_flags(p)
    _add_feature_flags(p)
    _add_common_flags(p)
    p.add_argument("--channel", default="hmog",
                   choices=("hmog", "tap", "keyhold", "digraph"))
    p.add_argument("--features-out", required=True,
                   help="CSV path for the extracted features")
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("train", help="enroll templates from training sessions")
    _add_corpus_flags(p)
    _add_feature_flags(p)
    _add_eval_flags(p)
    _add_common_flags(p)
    p.add_argument("--channel", default="hmog",
                   choices=("hmog", "tap", "keyhold", "digraph"))
    p.add_argument("--templates-out", required=True,
                   help="JSON path for the enrolled templates")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="verification experiment with fusion")
    _add_corpus_flags(p)
    _add_feature_flags(p)
    _add_eval_flags(p)
    _add_common_flags(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("fuse", help="fuse score files from earlier runs")
    _add_common_flags(p)
    p.add_argument("--scores", action="append", metavar="NAME=PATH",
                   help="score CSV per channel; repeat per channel")
    p.add_argument("--fusion-step", dest="fusion_step", type=float,
                   help="fusion weight grid step")
    p.add_argument("--weights", dest="fusion_weights", type=_weights,
                   help="fixed fusion weights, e.g. hmog=0.6,tap=0.4")
    p.set_defaults(handler=cmd_fuse)

    p = sub.add_parser("bkg", help="key-generation experiment")
    _add_corpus_flags(p)
    _add_feature_flags(p)
    _add_eval_flags(p)
    _add_bkg_flags(p)
    _add_common_flags(p)
    p.set_defaults(handler=cmd_bkg)

    p = sub.add_parser("sweep", help="sample-rate sweep on the hmog channel")
    _add_corpus_flags(p)
    _add_feature_flags(p)
    _add_eval_flags(p)
    _add_common_flags(p)
    p.add_argument("--factors", dest="downsample_factors", type=_csv_int,
                   help="comma list of downsample factors, e.g. 1,2,6,20")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("between", help="during-tap vs between-tap comparison")
    _add_corpus_flags(p)
    _add_feature_flags(p)
    _add_eval_flags(p)
    _add_common_flags(p)
    p.set_defaults(handler=cmd_between)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, ParseError, PipelineError, VerifyError,
            FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
