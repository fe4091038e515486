import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from htmsp import experiment as ex
from htmsp.errors import ConfigError
from htmsp.experiment import TrialError

from conftest import tiny_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_desk_config_defaults(tmp_path):
    cfg = ex.load_config(CONFIGS / "desk.json")
    s = cfg.sp
    assert (s.num_columns, s.synapses_per_column, s.min_overlap, s.winners_set_size,
            s.perm_increment, s.perm_decrement, s.initial_permanence,
            s.initial_inhibition_radius) == (2048, 128, 8, 40, 0.1, 0.1, 0.21, 80)
    assert s.input_size == 240 * 134
    assert cfg.trials == 5 and cfg.mode == "single_htm" and cfg.learning_epochs == 1


def test_minimal_config_fills_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"sp": {}, "dataset": {"root": "d"}}))
    cfg = ex.load_config(path)
    assert cfg.sp.num_columns == 2048 and cfg.backend == "parallel"
    assert cfg.dataset_root == tmp_path / "d"


def load_raw(tmp_path, raw):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(raw))
    return ex.load_config(path)


@pytest.mark.parametrize("raw, fragment", [
    ({"dataset": {"root": "d"}}, "'sp'"),
    ({"sp": {}}, "'dataset'"),
    ({"sp": {}, "dataset": {}}, "'root'"),
    ({"sp": {}, "dataset": {"root": "d"}, "color": 1}, "'color'"),
    ({"sp": {"columns": 4}, "dataset": {"root": "d"}}, "'columns'"),
    ({"sp": {"min_overlap": 200}, "dataset": {"root": "d"}}, "min_overlap"),
    ({"sp": {"input_size": 100}, "dataset": {"root": "d"}}, "input_size"),
    ({"sp": {}, "dataset": {"root": "d"}, "mode": "both"}, "mode"),
    ({"sp": {}, "dataset": {"root": "d"}, "trials": 0}, "trials"),
    ({"sp": {}, "dataset": {"root": "d"}, "sweep": {"parameter": "max_boost", "values": [1]}},
     "sweep.parameter"),
    ({"sp": {}, "dataset": {"root": "d"},
      "sweep": {"parameter": "min_overlap", "values": [8, 400]}}, "min_overlap=400"),
])
def test_config_errors_name_the_field(tmp_path, raw, fragment):
    with pytest.raises(ConfigError, match=fragment):
        load_raw(tmp_path, raw)


def test_parse_error_has_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "sp": {,\n}')
    with pytest.raises(ConfigError, match=r"bad\.json:2:10"):
        ex.load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        ex.load_config(tmp_path / "nope.json")


def test_trial_seeds_are_distinct():
    cfg = ex.parse_config({"sp": {}, "dataset": {"root": "d"}, "seed": 2**64 - 1})
    assert cfg.trial_seed(0) == 2**64 - 1 and cfg.trial_seed(1) == 0


# -- trials -------------------------------------------------------------------

def cfg_from(tiny_root, tmp_path, **overrides):
    return ex.parse_config(tiny_config(tiny_root, tmp_path / "out", **overrides))


@pytest.mark.parametrize("mode", ex.MODES)
def test_trial_modes_report(tiny_root, tmp_path, mode):
    report = ex.run_trial(cfg_from(tiny_root, tmp_path, mode=mode))
    assert 0.0 <= report.f1.f1 <= 1.0
    assert (report.n_train, report.n_test) == (12, 3)
    assert report.classes == ["cube", "sphere", "torus"]
    assert report.confusion.sum() == 3
    if mode == "svm_only":
        assert report.records == []
    else:
        assert report.timing()["steps"] > 0


def test_report_is_byte_identical_across_runs(tiny_root, tmp_path):
    cfg = cfg_from(tiny_root, tmp_path)
    a = ex.run_trial(cfg).to_json()
    ex.clear_encoding_cache()
    b = ex.run_trial(cfg).to_json()
    assert a == b
    data = json.loads(a)
    assert data["config"]["sp"]["rng_seed"] == data["seed"] == cfg.trial_seed(0)
    assert data["config"]["sp"]["num_columns"] == 64


@pytest.mark.parametrize("mode", ["single_htm", "multi_htm"])
def test_backends_agree_end_to_end(tiny_root, tmp_path, mode):
    seq = ex.run_trial(cfg_from(tiny_root, tmp_path, mode=mode, backend="sequential"))
    par = ex.run_trial(cfg_from(tiny_root, tmp_path, mode=mode, backend="parallel"))
    assert seq.f1.f1 == par.f1.f1
    assert seq.confusion.tolist() == par.confusion.tolist()
    strip = lambda d: {k: v for k, v in d.items() if k != "config"}
    assert strip(seq.to_dict()) == strip(par.to_dict())
    assert seq.records and par.records


def test_run_trials_writes_outputs(tiny_root, tmp_path):
    cfg = cfg_from(tiny_root, tmp_path, trials=3)
    reports, summary = ex.run_trials(cfg)
    assert [r.seed for r in reports] == [cfg.trial_seed(k) for k in range(3)]
    assert summary["trials"] == 3 and len(summary["f1"]) == 3
    assert summary["f1_std"] >= 0
    out = cfg.output_dir
    assert sorted(p.name for p in out.glob("report_*.json")) == [
        f"report_parallel_trial{k}.json" for k in range(3)]
    with open(out / "profile_parallel_trial0.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 * reports[0].timing()["steps"]
    assert json.loads((out / "summary.json").read_text())["config"]["sp"]["num_columns"] == 64


def test_split_is_disjoint_and_test_never_learns(tiny_root, tmp_path, monkeypatch):
    cfg = cfg_from(tiny_root, tmp_path)
    train, test = ex.load_split(cfg)
    assert not {r.path for r in train} & {r.path for r in test}
    learned = []
    original = ex.HtmWrapper.learn_videos

    def spy(self, videos, epochs, rng):
        learned.extend(v.record.path for v in videos)
        return original(self, videos, epochs, rng)

    monkeypatch.setattr(ex.HtmWrapper, "learn_videos", spy)
    ex.run_trial(cfg)
    assert set(learned) == {r.path for r in train}


def test_corrupt_frame_names_the_video(tiny_root, tmp_path):
    root = tmp_path / "copy"
    shutil.copytree(tiny_root, root)
    victim = ex.dataset.read_manifest(root)[4]
    (root / victim.path / "frame_00002.pgm").write_bytes(b"P5\n48 32\n255\n\x00")
    with pytest.raises(TrialError, match=victim.video_id):
        ex.run_trial(cfg_from(root, tmp_path))


def test_overlapping_split_rejected(tiny_root, tmp_path):
    root = tmp_path / "copy"
    shutil.copytree(tiny_root, root)
    records = ex.dataset.read_manifest(root)
    records.append(ex.dataset.VideoRecord(records[0].path, records[0].label,
                                          "test" if records[0].split == "train" else "train"))
    ex.dataset.write_manifest(root / ex.dataset.MANIFEST_NAME, records)
    with pytest.raises(TrialError, match="both"):
        ex.run_trial(cfg_from(root, tmp_path))


def test_needs_learning_hook_stops_learning(tiny_root, tmp_path):
    cfg = cfg_from(tiny_root, tmp_path)
    train, _ = ex.load_split(cfg)
    videos = [ex.encoded_video(cfg.dataset_root, r, cfg.encoder) for r in train]
    state = ex.sp.init_sp(cfg.sp)
    w = ex.HtmWrapper(state, ex.parallel.make_backend("sequential", cfg.sp),
                      needs_learning=lambda s: s.iteration < 6)
    w.learn_videos(videos, 1, np.random.default_rng(0))
    assert w.steps == 6


# -- sweeps -------------------------------------------------------------------

def test_single_value_sweep_matches_run_trial(tiny_root, tmp_path):
    cfg = cfg_from(tiny_root, tmp_path, sweep={"parameter": "min_overlap", "values": [4]})
    result = ex.run_sweep(cfg)
    direct = ex.run_trial(cfg.replace(sweep=None))
    par_point = next(p for p in result["points"] if p["backend"] == "parallel")
    assert par_point["f1"] == [direct.f1.f1]
    assert len(result["rows"]) == 2


def test_sweep_grid_and_untouched_fields(tiny_root, tmp_path):
    cfg = cfg_from(tiny_root, tmp_path, sweep={"parameter": "synapses_per_column",
                                                "values": [8, 16, 32]})
    result = ex.run_sweep(cfg)
    assert len(result["rows"]) == 6
    with open(cfg.output_dir / "sweep_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == ex.SWEEP_CSV_FIELDS
    assert all(r[k] != "" for r in rows for k in ex.SWEEP_CSV_FIELDS)
    base = cfg.resolved()["sp"]
    for point in result["points"]:
        for emitted in point["config"]:
            diff = {k for k in base if emitted["sp"][k] != base[k]}
            assert diff <= {"synapses_per_column", "rng_seed"}
            assert emitted["sp"]["synapses_per_column"] == point["value"]
        assert point["overlap_share"] is not None
    assert isinstance(result["trend"]["speedup_kernel_nondecreasing"], bool)


def test_sweep_records_failures_and_continues(tiny_root, tmp_path, monkeypatch):
    cfg = cfg_from(tiny_root, tmp_path, sweep={"parameter": "min_overlap", "values": [3, 4]})
    original = ex.run_trial

    def flaky(config, trial=0):
        if config.sp.min_overlap == 3:
            raise TrialError("synthetic failure")
        return original(config, trial)

    monkeypatch.setattr(ex, "run_trial", flaky)
    result = ex.run_sweep(cfg)
    errors = [p for p in result["points"] if p["error"]]
    assert len(errors) == 2 and all(p["value"] == 3 for p in errors)
    assert {r["value"] for r in result["rows"]} == {4}


def test_run_sweep_needs_sweep(tiny_root, tmp_path):
    with pytest.raises(ConfigError):
        ex.run_sweep(cfg_from(tiny_root, tmp_path))
