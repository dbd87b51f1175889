import json

import pytest

from hvpl import matio
from hvpl.cli import main

from conftest import tiny_config


def _config(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(tiny_config(split=[2, 1], epochs=1, **kw).to_dict()))
    return path


def test_train_then_eval(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(_config(tmp_path)), "--out", str(out), "--quiet"]) == 0
    assert (out / "metrics.json").exists()
    capsys.readouterr()
    assert main(["eval", "--state", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["t"] == 2


def test_invalid_xi_exits_1(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"xi": 1.5}))
    assert main(["train", "--config", str(path)]) == 1


def test_unknown_config_key_exits_1(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"nope": 1}))
    assert main(["train", "--config", str(path)]) == 1


def test_unknown_flag_exits_1():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 1


def test_eval_without_state_exits_1(tmp_path):
    assert main(["eval", "--state", str(tmp_path)]) == 1


def test_numeric_failure_exits_2(monkeypatch, tmp_path):
    from hvpl.errors import NumericError
    import hvpl.harness.experiment as experiment

    def boom(*a, **k):
        raise NumericError("diverged")

    monkeypatch.setattr(experiment, "run_experiment", boom)
    assert main(["train", "--config", str(_config(tmp_path)), "--out", str(tmp_path / "r")]) == 2


def test_fmt_dump(tmp_path, capsys, rng):
    path = tmp_path / "a.hvpl"
    matio.save(path, rng.normal(size=(2, 3)), rng.normal(size=(4,)))
    assert main(["fmt-dump", str(path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == [f"{path}[0] dtype=float64 rank=2 dims=[2, 3]", f"{path}[1] dtype=float64 rank=1 dims=[4]"]


def test_fmt_dump_bad_file_exits_1(tmp_path):
    (tmp_path / "x.hvpl").write_bytes(b"garbage!")
    assert main(["fmt-dump", str(tmp_path / "x.hvpl")]) == 1


def test_bench_writes_csv(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert main(["bench-traversal", "--sizes", "64,128", "--brute-sizes", "16,32", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "n_v,fast_ns,brute_ns" and len(lines) == 5


def test_oracle_check_single_suite(capsys):
    assert main(["oracle-check", "--suite", "fap-formula", "--suite", "matching"]) == 0
    out = capsys.readouterr().out
    assert "fap-formula: 3/3 passed" in out and "matching: 50/50 passed" in out
    assert main(["oracle-check", "--suite", "nope"]) == 1


def test_ablate_small(tmp_path, capsys):
    assert main(["ablate", "--config", str(_config(tmp_path)), "--seeds", "1", "--quiet",
                 "--out", str(tmp_path / "a.json")]) == 0
    assert "seeds" in capsys.readouterr().out
    assert "summary" in json.loads((tmp_path / "a.json").read_text())
