import json

import pytest

from htmsp import cli
from htmsp.dataset import read_manifest


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_generate_small_dataset(tmp_path, capsys):
    code, out, _ = run(["generate", "--out", str(tmp_path / "d"), "--videos-per-class", "5",
                        "--frames", "2", "--classes", "cone,cross", "--seed", "4"], capsys)
    assert code == 0 and "10 videos" in out
    records = read_manifest(tmp_path / "d")
    assert len(records) == 10 and len(list((tmp_path / "d").rglob("*.pgm"))) == 20


def test_run_then_report(write_config, tmp_path, capsys):
    cfg = write_config()
    out_dir = tmp_path / "runs"
    code, out, _ = run(["run", "--config", str(cfg), "--mode", "svm-only", "--trials", "2",
                        "--out", str(out_dir), "--seed", "9"], capsys)
    assert code == 0 and "F1 mean" in out
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["config"]["mode"] == "svm_only" and summary["config"]["seed"] == 9
    code, out, _ = run(["report", "--out", str(out_dir)], capsys)
    assert code == 0 and "trial 1 seed 10" in out


def test_run_backend_flag(write_config, tmp_path, capsys):
    code, _, _ = run(["run", "--config", str(write_config()), "--backend", "sequential",
                      "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    assert (tmp_path / "o" / "profile_sequential_trial0.csv").is_file()


def test_sweep_and_report(write_config, tmp_path, capsys):
    cfg = write_config(sweep={"parameter": "winners_set_size", "values": [3, 6]})
    code, out, _ = run(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")], capsys)
    assert code == 0 and out.splitlines()[0].split() == list(cli.experiment.SWEEP_CSV_FIELDS)
    code, out, _ = run(["report", "--out", str(tmp_path / "s")], capsys)
    assert code == 0 and "non-decreasing" in out


@pytest.mark.parametrize("argv", [
    [], ["run"], ["run", "--config", "x.json", "--mode", "dual"], ["bogus"],
    ["run", "--config", "x.json", "--seed", "-3"],
])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 1


def test_config_errors_exit_1(write_config, tmp_path, capsys):
    code, _, err = run(["run", "--config", str(tmp_path / "missing.json")], capsys)
    assert code == 1 and "config error" in err
    code, _, err = run(["run", "--config", str(write_config(sp={"synapses_per_column": 32, "min_overlap": 99}))], capsys)
    assert code == 1 and "min_overlap" in err
    code, _, _ = run(["sweep", "--config", str(write_config())], capsys)
    assert code == 1
    code, _, _ = run(["report", "--out", str(tmp_path)], capsys)
    assert code == 1


def test_runtime_failure_exit_2(write_config, tmp_path, capsys):
    cfg = write_config(dataset={"root": str(tmp_path / "empty")})
    (tmp_path / "empty").mkdir()
    code, _, err = run(["run", "--config", str(cfg)], capsys)
    assert code == 2 and "manifest" in err
