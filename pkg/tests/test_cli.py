"""End-to-end command line coverage, including exit codes."""

import json

import pytest

from hmogkit.cli import main
from hmogkit.corpus.io import load_corpus
from hmogkit.experiments import OUT_DIR_ENV
from hmogkit.matrix import FeatureMatrix
from hmogkit.pipeline import load_templates
from hmogkit.verify import ScoreRecord, ScoreSet


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    code = main(["synth", "--users", "2", "--sessions", "3",
                 "--session-seconds", "60", "--seed", "5",
                 "--corpus-out", str(out)])
    assert code == 0
    return out


def eval_args(corpus, *extra):
    return ["eval", "--corpus", str(corpus), "--channels", "hmog,tap",
            "--scans", "20", "--min-vectors", "10", "--seed", "5", *extra]


# ---------------------------------------------------------------- exit codes

def test_bad_metric_is_a_config_error(capsys):
    assert main(["eval", "--metric", "cosine"]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_corpus_is_a_data_error(tmp_path, capsys):
    code = main(["extract", "--corpus", str(tmp_path / "nope"),
                 "--features-out", str(tmp_path / "f.csv")])
    assert code == 3
    assert "data error" in capsys.readouterr().err


def test_empty_condition_filter_is_infeasible(cli_corpus, capsys):
    code = main(eval_args(cli_corpus, "--condition", "walking"))
    assert code == 4
    assert "infeasible" in capsys.readouterr().err


def test_unknown_config_key_is_a_config_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"sead": 1}')
    assert main(["eval", "--config", str(cfg)]) == 2


# ---------------------------------------------------------------- pipeline

def test_synth_wrote_a_corpus(cli_corpus):
    assert (cli_corpus / "index.json").exists()
    assert len(load_corpus(str(cli_corpus))) == 6


def test_extract_writes_stamped_csv(cli_corpus, tmp_path):
    out = tmp_path / "tap.csv"
    code = main(["extract", "--corpus", str(cli_corpus), "--channel", "tap",
                 "--seed", "5", "--features-out", str(out)])
    assert code == 0
    text = out.read_text()
    assert text.startswith("# config_hash=")
    assert "# seed=5" in text.splitlines()[1]
    assert "np.float64" not in text
    fm = FeatureMatrix.read_csv(str(out))
    assert fm.n_features == 11
    assert fm.n_rows > 0


def test_config_file_beats_flags(cli_corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"seed": 99}')
    out = tmp_path / "tap.csv"
    code = main(["extract", "--corpus", str(cli_corpus), "--channel", "tap",
                 "--seed", "1", "--config", str(cfg),
                 "--features-out", str(out)])
    assert code == 0
    assert "# seed=99" in out.read_text().splitlines()[1]


def test_train_writes_loadable_templates(cli_corpus, tmp_path):
    out = tmp_path / "templates.json"
    code = main(["train", "--corpus", str(cli_corpus), "--channel", "hmog",
                 "--min-vectors", "10", "--templates-out", str(out)])
    assert code == 0
    templates = load_templates(str(out))
    assert set(templates) == {"u01", "u02"}
    assert json.loads(out.read_text())["params"]["channel"] == "hmog"


def test_eval_outputs_and_reruns_identically(cli_corpus, tmp_path, capsys):
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    assert main(eval_args(cli_corpus, "--out-dir", str(out1))) == 0
    stdout = capsys.readouterr().out
    assert "fused" in stdout and "hmog" in stdout
    for name in ("eer.csv", "enrollment.csv", "summary.json",
                 "scores_hmog_20s.csv", "scores_tap_20s.csv",
                 "scores_fused_20s.csv", "det_fused_20s.csv"):
        assert (out1 / name).exists(), name
    assert main(eval_args(cli_corpus, "--out-dir", str(out2))) == 0
    assert (out1 / "eer.csv").read_bytes() == (out2 / "eer.csv").read_bytes()
    assert (out1 / "scores_fused_20s.csv").read_bytes() == \
        (out2 / "scores_fused_20s.csv").read_bytes()
    a = json.loads((out1 / "summary.json").read_text())
    b = json.loads((out2 / "summary.json").read_text())
    # only the echoed output location may differ between reruns
    a["config"].pop("out_dir"), b["config"].pop("out_dir")
    assert a == b


def test_selector_none_round_trips(cli_corpus, tmp_path):
    out = tmp_path / "run"
    code = main(["eval", "--corpus", str(cli_corpus), "--channels", "hmog",
                 "--scans", "20", "--min-vectors", "10",
                 "--selector", "none", "--out-dir", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["selector"] is None


def test_out_dir_env_default(cli_corpus, tmp_path, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv(OUT_DIR_ENV, str(target))
    assert main(eval_args(cli_corpus)) == 0
    assert (target / "summary.json").exists()


# ---------------------------------------------------------------- fuse

def score_csv(path, genuine, impostor):
    records = ScoreSet(
        genuine=[ScoreRecord("A", "A", t, s) for t, s in enumerate(genuine)],
        impostor=[ScoreRecord("A", "B", t, s) for t, s in enumerate(impostor)])
    records.write_csv(str(path))


def test_fuse_searches_weights(tmp_path, capsys):
    score_csv(tmp_path / "good.csv", [1.0, 2.0], [10.0, 11.0])
    score_csv(tmp_path / "bad.csv", [10.0, 11.0], [1.0, 2.0])
    out = tmp_path / "fused"
    code = main(["fuse", "--scores", f"good={tmp_path / 'good.csv'}",
                 "--scores", f"bad={tmp_path / 'bad.csv'}",
                 "--fusion-step", "0.5", "--out-dir", str(out)])
    assert code == 0
    assert "fused eer=0.0000" in capsys.readouterr().out
    report = json.loads((out / "fusion.json").read_text())
    assert report["weights"] == {"bad": 0.0, "good": 1.0}
    assert report["eer"] == 0.0
    assert (out / "scores_fused.csv").exists()
    assert (out / "det_fused.csv").exists()


def test_fuse_fixed_weights(tmp_path, capsys):
    score_csv(tmp_path / "good.csv", [1.0, 2.0], [10.0, 11.0])
    score_csv(tmp_path / "bad.csv", [10.0, 11.0], [1.0, 2.0])
    code = main(["fuse", "--scores", f"good={tmp_path / 'good.csv'}",
                 "--scores", f"bad={tmp_path / 'bad.csv'}",
                 "--weights", "good=1,bad=0"])
    assert code == 0
    assert "eer=0.0000" in capsys.readouterr().out


def test_fuse_needs_two_channels(tmp_path):
    score_csv(tmp_path / "only.csv", [1.0], [2.0])
    assert main(["fuse", "--scores", f"only={tmp_path / 'only.csv'}"]) == 2


# ---------------------------------------------------------------- experiments

def test_between_command(capsys):
    code = main(["between", "--users", "2", "--sessions", "3",
                 "--session-seconds", "120", "--tap-rate", "0.8",
                 "--min-vectors", "20", "--scans", "30", "--seed", "11"])
    assert code == 0
    out = capsys.readouterr().out
    assert "during" in out and "between" in out


def test_bkg_command(cli_corpus, capsys):
    code = main(["bkg", "--corpus", str(cli_corpus), "--min-vectors", "10",
                 "--code-length", "7", "--message-length", "4",
                 "--field-prime", "11", "--bkg-scan", "30"])
    assert code == 0
    out = capsys.readouterr().out
    assert "code n=7 l=4 p=11 radius=2" in out
    assert "hmog" in out and "keys=" in out


def test_sweep_command(cli_corpus, capsys):
    code = main(["sweep", "--corpus", str(cli_corpus), "--factors", "1,2",
                 "--scans", "20", "--min-vectors", "10"])
    assert code == 0
    out = capsys.readouterr().out
    assert "factor   1 (100 Hz)" in out
    assert "factor   2 (50 Hz)" in out


# ---------------------------------------------------------------- ingest

RAW_SENSOR = """session_id,sensor,t_ms,x,y,z
s1,acc,0,0.1,0.2,9.8
s1,acc,10,0.1,0.2,9.8
s1,gyr,0,0,0,0.01
"""
RAW_TOUCH = """session_id,tap_id,t_ms,x_px,y_px,contact_size
s1,1,100,540.5,960.25,0.5
s1,1,110,541.0,961.0,0.55
"""
RAW_KEYS = """session_id,key_code,t_press_ms,t_release_ms
s1,a,50,120
s1,b,300,390
"""


def write_manifest(tmp_path, entry):
    (tmp_path / "sensor.csv").write_text(RAW_SENSOR)
    (tmp_path / "touch.csv").write_text(RAW_TOUCH)
    (tmp_path / "keys.csv").write_text(RAW_KEYS)
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"sessions": [entry]}))
    return manifest


def test_ingest_builds_corpus(tmp_path, capsys):
    manifest = write_manifest(tmp_path, {
        "sensor_file": "sensor.csv", "touch_file": "touch.csv",
        "key_file": "keys.csv", "user_id": "u9", "session_id": "s1",
        "condition": "walking"})
    out = tmp_path / "corpus"
    code = main(["ingest", "--manifest", str(manifest),
                 "--corpus-out", str(out)])
    assert code == 0
    assert "ingested 1 sessions" in capsys.readouterr().out
    sessions = load_corpus(str(out))
    assert len(sessions) == 1
    assert sessions[0].user_id == "u9"
    assert [k.key for k in sessions[0].keys] == ["a", "b"]


def test_ingest_missing_manifest_field(tmp_path):
    manifest = write_manifest(tmp_path, {
        "sensor_file": "sensor.csv", "touch_file": "touch.csv",
        "key_file": "keys.csv", "user_id": "u9", "session_id": "s1"})
    assert main(["ingest", "--manifest", str(manifest),
                 "--corpus-out", str(tmp_path / "corpus")]) == 2
