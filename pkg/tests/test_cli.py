import json
import subprocess
import sys

import pytest

from tempograph.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_MISSING, EXIT_OK, main
from tempograph.config import ConfigError, RunConfig, parse_text

SMALL = """
synth.sources = 6
synth.targets = 12
synth.events = 200
synth.label_threshold = 31
train.batch_size = 50
train.n_neg = 2
train.lr = 1e-3
train.epochs = 2
train.nc_epochs = 1
model.mem_dim = 8
model.time_dim = 4
emb.n_neighbors = 3
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return str(p)


def run(*argv):
    return main([str(a) for a in argv])


def test_train_writes_artifacts(tmp_path, config):
    out = tmp_path / "run"
    assert run("train", "--config", config, "--out", out) == EXIT_OK
    for name in ("config.txt", "manifest.json", "checkpoint.tgck", "metrics.jsonl", "report.json"):
        assert (out / name).is_file(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0 and set(manifest["artifacts"]) >= {"checkpoint.tgck", "metrics.jsonl"}
    report = json.loads((out / "report.json").read_text())
    assert 0 <= report["test/transductive/AP"] <= 1
    assert "test/transductive/node_AUC" in report
    rec = json.loads((out / "metrics.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"run_id", "epoch", "split", "setting", "metric", "value"}
    ext = [json.loads(line) for line in (out / "extensions.jsonl").read_text().splitlines()]
    assert ext and all(set(e) == {"node", "t", "rows"} for e in ext)
    assert [e["rows"] for e in ext] == list(range(1, len(ext) + 1))


def test_train_twice_byte_identical(tmp_path, config):
    for name in ("a", "b"):
        assert run("train", "--config", config, "--out", tmp_path / name) == EXIT_OK
    for f in ("checkpoint.tgck", "metrics.jsonl", "report.json", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_eval_checkpoint_deterministic(tmp_path, config):
    assert run("train", "--config", config, "--out", tmp_path / "t") == EXIT_OK
    ckpt = tmp_path / "t" / "checkpoint.tgck"
    for name in ("e1", "e2"):
        assert run("eval", ckpt, "--config", config, "--out", tmp_path / name) == EXIT_OK
    assert (tmp_path / "e1" / "metrics.jsonl").read_bytes() == (tmp_path / "e2" / "metrics.jsonl").read_bytes()


def test_sweep_sixteen_rows(tmp_path, config):
    out = tmp_path / "sw"
    assert run("sweep", "--config", config, "--out", out, "--set", "train.epochs=1") == EXIT_OK
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "alpha,beta,d,setting,metric,mean,std" and len(lines) == 17


def test_bench_report(tmp_path):
    out = tmp_path / "bench"
    assert run("bench-expressiveness", "--out", out, "--set", "bench.seeds=2") == EXIT_OK
    rows = json.loads((out / "report.json").read_text())
    assert len(rows) == 4
    for r in rows:
        if r["variant"] == "no-id":
            assert r["distance"] < 1e-9
        else:
            assert r["distance"] > 1e-3


def test_ingest(tmp_path):
    csv = tmp_path / "e.csv"
    csv.write_text("u,i,ts,label,f0\n1,5,0.5,0,0.1\n2,5,1.5,1,0.2\n")
    out = tmp_path / "ing"
    assert run("ingest", csv, "--out", out) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["events"] == 2 and report["feat_dim"] == 1 and report["num_nodes"] == 3


def test_out_defaults_to_env(tmp_path, monkeypatch):
    monkeypatch.setenv("TEMPOGRAPH_OUT", str(tmp_path / "envroot"))
    assert run("bench-expressiveness", "--set", "bench.seeds=1") == EXIT_OK
    assert (tmp_path / "envroot" / "bench-expressiveness" / "report.json").is_file()


@pytest.mark.parametrize("argv", [["--set", "no.such=1"], ["--set", "train.lr=abc"], ["--set", "novalue"],
                                  ["--set", "te.mode=sideways"]])
def test_config_errors_exit_2(tmp_path, argv, capsys):
    assert run("train", "--out", tmp_path, *argv) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_files_exit_3(tmp_path):
    assert run("train", "--config", tmp_path / "nope.cfg", "--out", tmp_path) == EXIT_MISSING
    assert run("eval", tmp_path / "nope.tgck", "--out", tmp_path) == EXIT_MISSING
    assert run("ingest", tmp_path / "nope.csv", "--out", tmp_path) == EXIT_MISSING
    assert run("train", "--set", f"data.path={tmp_path / 'x.csv'}", "--out", tmp_path) == EXIT_MISSING


def test_malformed_csv_exit_1(tmp_path):
    csv = tmp_path / "bad.csv"
    csv.write_text("h\n1,2,x,0\n")
    assert run("ingest", csv, "--out", tmp_path / "o") == EXIT_FAIL


def test_config_file_parsing(tmp_path):
    assert parse_text("a = 1 # note\n\n b=2\n") == {"a": "1", "b": "2"}
    with pytest.raises(ConfigError):
        parse_text("just words\n")
    cfg = RunConfig.load(None, {"seed": "7"})
    assert cfg.seed == 7 and "seed = 7\n" in cfg.text()
    # text() round-trips through the parser
    assert RunConfig.resolve(parse_text(cfg.text())).values == cfg.values


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "tempograph.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "te.alpha" in res.stdout
