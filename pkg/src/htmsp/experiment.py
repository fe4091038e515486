"""Experiment orchestration: JSON config, trials, parameter sweeps, reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from htmsp import classify, dataset, encoder, parallel, sp
from htmsp.errors import ConfigError, HtmError, InputError

log = logging.getLogger(__name__)

MODES = ("single_htm", "multi_htm", "svm_only")
SWEEPABLE = ("num_columns", "synapses_per_column", "min_overlap", "winners_set_size")
SWEEP_CSV_FIELDS = ("param", "value", "backend", "f1_mean", "f1_std", "kernel_ns",
                    "staging_in_ns", "staging_out_ns", "speedup_kernel", "speedup_total")
REPORT_VERSION = 1


class TrialError(HtmError, RuntimeError):
    """A trial could not complete (bad frames, missing videos, ...)."""


@dataclass(frozen=True)
class ClassifierConfig:
    lam: float = 1e-4
    epochs: int = 50


@dataclass(frozen=True)
class SweepConfig:
    parameter: str
    values: tuple

    def __post_init__(self):
        if self.parameter not in SWEEPABLE:
            raise ConfigError(f"sweep.parameter must be one of {SWEEPABLE}, got {self.parameter!r}")
        if not self.values:
            raise ConfigError("sweep.values must be a non-empty list")
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class ExperimentConfig:
    sp: sp.SpConfig
    dataset_root: Path
    encoder: encoder.EncoderConfig = encoder.EncoderConfig()
    dataset_spec: dataset.DatasetSpec | None = None
    mode: str = "single_htm"
    backend: str = "parallel"
    sweep: SweepConfig | None = None
    trials: int = 1
    output_dir: Path = Path("out")
    seed: int = 0
    learning_epochs: int = 1
    classifier: ClassifierConfig = ClassifierConfig()

    def __post_init__(self):
        object.__setattr__(self, "dataset_root", Path(self.dataset_root))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.backend not in parallel.BACKENDS:
            raise ConfigError(f"backend must be one of {sorted(parallel.BACKENDS)}, got {self.backend!r}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if not isinstance(self.learning_epochs, int) or self.learning_epochs < 1:
            raise ConfigError("learning_epochs must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.sp.input_size != self.encoder.output_size:
            raise ConfigError(
                f"sp.input_size ({self.sp.input_size}) must equal encoder output size "
                f"{self.encoder.target_width}x{self.encoder.target_height}={self.encoder.output_size}")
        if self.sweep is not None:
            for value in self.sweep.values:
                self.sp_for_point(value)

    def sp_for_point(self, value) -> sp.SpConfig:
        try:
            return self.sp.replace(**{self.sweep.parameter: value})
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"sweep value {self.sweep.parameter}={value!r}: {exc}") from None

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def trial_seed(self, trial: int) -> int:
        return (self.seed + trial) % 2**64

    def resolved(self) -> dict:
        """Everything that determines a trial's result (output paths excluded)."""
        return {
            "sp": self.sp.to_dict(),
            "encoder": dataclasses.asdict(self.encoder),
            "dataset": {
                "root": str(self.dataset_root),
                "spec": self.dataset_spec.to_dict() if self.dataset_spec else None,
            },
            "mode": self.mode,
            "backend": self.backend,
            "trials": self.trials,
            "seed": self.seed,
            "learning_epochs": self.learning_epochs,
            "classifier": {"lambda": self.classifier.lam, "epochs": self.classifier.epochs},
            "sweep": None if self.sweep is None else
            {"parameter": self.sweep.parameter, "values": list(self.sweep.values)},
        }


# -- config loading -----------------------------------------------------------

_TOP_KEYS = {"sp", "encoder", "dataset", "mode", "backend", "sweep", "trials", "output_dir",
             "seed", "learning_epochs", "classifier"}
_REQUIRED_TOP = ("sp", "dataset")


def _check_keys(section: str, data, allowed, required=()):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a JSON object")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{section}: unknown key {key!r}")
    for key in required:
        if key not in data:
            raise ConfigError(f"{section}: missing required field {key!r}")


def _build(section: str, cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(section, data, names)
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{section}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    _check_keys("config", raw, _TOP_KEYS, _REQUIRED_TOP)
    base_dir = base_dir or Path.cwd()

    enc = _build("encoder", encoder.EncoderConfig, raw.get("encoder", {}))
    sp_raw = dict(raw["sp"]) if isinstance(raw["sp"], dict) else raw["sp"]
    _check_keys("sp", sp_raw, {f.name for f in dataclasses.fields(sp.SpConfig)})
    sp_raw.setdefault("input_size", enc.output_size)
    sp_cfg = _build("sp", sp.SpConfig, sp_raw)

    ds_raw = raw["dataset"]
    _check_keys("dataset", ds_raw, {"root", "spec"}, ("root",))
    root = Path(ds_raw["root"])
    if not root.is_absolute():
        root = base_dir / root
    ds_spec = None
    if ds_raw.get("spec") is not None:
        ds_spec = _build("dataset.spec", dataset.DatasetSpec, ds_raw["spec"])

    sweep = None
    if raw.get("sweep") is not None:
        _check_keys("sweep", raw["sweep"], {"parameter", "values"}, ("parameter", "values"))
        sweep = SweepConfig(raw["sweep"]["parameter"], tuple(raw["sweep"]["values"]))

    clf_raw = raw.get("classifier", {})
    _check_keys("classifier", clf_raw, {"lambda", "epochs"})
    clf = ClassifierConfig(lam=float(clf_raw.get("lambda", 1e-4)), epochs=int(clf_raw.get("epochs", 50)))

    out = Path(raw.get("output_dir", "out"))
    if not out.is_absolute():
        out = base_dir / out
    return ExperimentConfig(
        sp=sp_cfg, encoder=enc, dataset_root=root, dataset_spec=ds_spec,
        mode=raw.get("mode", "single_htm"), backend=raw.get("backend", "parallel"),
        sweep=sweep, trials=raw.get("trials", 1), output_dir=out,
        seed=raw.get("seed", sp_cfg.rng_seed), learning_epochs=raw.get("learning_epochs", 1),
        classifier=clf,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_config(raw, base_dir=path.parent)


# -- data access --------------------------------------------------------------

@dataclass
class EncodedVideo:
    record: dataset.VideoRecord
    packed: np.ndarray  # (frames, ceil(bits / 8)) uint8
    bits: int

    def frames(self) -> np.ndarray:
        return np.unpackbits(self.packed, axis=1, count=self.bits).view(bool)


_ENCODED: dict[tuple, EncodedVideo] = {}


def encoded_video(root: Path, record: dataset.VideoRecord,
                  enc: encoder.EncoderConfig) -> EncodedVideo:
    key = (str(Path(root).resolve()), record.path, enc)
    cached = _ENCODED.get(key)
    if cached is None:
        try:
            bits = encoder.encode_video(Path(root) / record.path, enc)
        except (InputError, OSError) as exc:
            raise TrialError(f"video {record.video_id}: {exc}") from exc
        cached = EncodedVideo(record, np.packbits(bits, axis=1), bits.shape[1])
        _ENCODED[key] = cached
    return cached


def clear_encoding_cache() -> None:
    _ENCODED.clear()


def load_split(config: ExperimentConfig):
    records = dataset.read_manifest(config.dataset_root)
    if not records:
        raise TrialError(f"dataset {config.dataset_root} has an empty manifest")
    train = [r for r in records if r.split == "train"]
    test = [r for r in records if r.split == "test"]
    if {r.path for r in train} & {r.path for r in test}:
        raise TrialError("a video appears in both the training and the test split")
    if not train or not test:
        raise TrialError("dataset needs both training and test videos")
    return train, test


# -- wrapper ------------------------------------------------------------------

def passthrough_decoder(active: np.ndarray) -> np.ndarray:
    return active


def passthrough_writer(record: dataset.VideoRecord, sdrs: list) -> None:
    return None


@dataclass
class HtmWrapper:
    """One SP instance plus its reader/decoder/writer hooks and iteration control."""

    state: sp.SpState
    backend: object
    decoder: Callable = passthrough_decoder
    writer: Callable = passthrough_writer
    # Extension hook: return False to stop learning early.
    needs_learning: Callable[[sp.SpState], bool] = lambda state: True
    records: list = field(default_factory=list)
    steps: int = 0

    def _step(self, frame, learning: bool):
        winners, recs = self.backend.step(self.state, frame, learning)
        self.records.extend(dataclasses.replace(r, iteration=self.steps) for r in recs)
        self.steps += 1
        return self.decoder(winners)

    def warm_up(self, frame) -> None:
        scratch = self.state.copy()
        self.backend.step(scratch, frame, False)

    def learn_videos(self, videos: list[EncodedVideo], epochs: int, rng) -> None:
        for _ in range(epochs):
            for k in rng.permutation(len(videos)):
                if not self.needs_learning(self.state):
                    return
                for frame in videos[k].frames():
                    self._step(frame, True)

    def histogram(self, video: EncodedVideo) -> classify.SdrHistogram:
        sdrs = [self._step(frame, False) for frame in video.frames()]
        self.writer(video.record, sdrs)
        return classify.accumulate_histogram(sdrs, self.state.num_columns, len(sdrs),
                                             label=video.record.label)


# -- trials -------------------------------------------------------------------

@dataclass
class TrialReport:
    trial: int
    seed: int
    config: ExperimentConfig
    classes: list
    confusion: np.ndarray
    f1: classify.F1Report
    records: list = field(default_factory=list)
    n_train: int = 0
    n_test: int = 0

    def to_dict(self) -> dict:
        cfg = self.config.resolved()
        cfg["sp"]["rng_seed"] = self.seed
        return {
            "version": REPORT_VERSION,
            "trial": self.trial,
            "seed": self.seed,
            "config": cfg,
            "classes": list(self.classes),
            "confusion": self.confusion.tolist(),
            "best_f": self.f1.best_f.tolist(),
            "f1": self.f1.f1,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def timing(self) -> dict:
        return timing_summary(self.records)


def timing_summary(records) -> dict:
    """Mean per-step phase durations (ns) and the kernel/total accountings."""
    records = list(records)
    steps = sum(1 for r in records if r.phase == parallel.Phase.KERNEL_OVERLAP)
    totals = parallel.phase_totals(records)
    if steps == 0:
        return {}
    kernel = totals[parallel.Phase.KERNEL_OVERLAP] + totals[parallel.Phase.KERNEL_INHIBITION]
    out = {
        "steps": steps,
        "kernel_ns": kernel / steps,
        "kernel_overlap_ns": totals[parallel.Phase.KERNEL_OVERLAP] / steps,
        "kernel_inhibition_ns": totals[parallel.Phase.KERNEL_INHIBITION] / steps,
        "staging_in_ns": totals[parallel.Phase.STAGING_IN] / steps,
        "staging_out_ns": totals[parallel.Phase.STAGING_OUT] / steps,
    }
    out["total_ns"] = out["kernel_ns"] + out["staging_in_ns"] + out["staging_out_ns"]
    try:
        out["overlap_share"] = parallel.overlap_share(records)
    except HtmError:
        out["overlap_share"] = None
    return out


def _fit_and_score(config, seed, train_feats, test_feats):
    labels = [h.label for h in train_feats]
    model = classify.train_classifier(train_feats, labels, lam=config.classifier.lam,
                                      epochs=config.classifier.epochs, seed=seed)
    predicted = classify.predict_many(model, test_feats)
    truth = [h.label for h in test_feats]
    classes = sorted(set(labels) | set(truth))
    counts = classify.ConfusionCounts.from_labels(truth, predicted, classes)
    return classes, counts


def run_trial(config: ExperimentConfig, trial: int = 0) -> TrialReport:
    seed = config.trial_seed(trial)
    train, test = load_split(config)
    train_v = [encoded_video(config.dataset_root, r, config.encoder) for r in train]
    test_v = [encoded_video(config.dataset_root, r, config.encoder) for r in test]
    for v in train_v + test_v:
        if v.bits != config.sp.input_size:
            raise TrialError(f"video {v.record.video_id}: encoded size {v.bits} != input_size")
    records: list = []

    if config.mode == "svm_only":
        train_h = [classify.bit_histogram(v.frames(), v.record.label) for v in train_v]
        test_h = [classify.bit_histogram(v.frames(), v.record.label) for v in test_v]
    elif config.mode == "single_htm":
        sp_cfg = config.sp.replace(rng_seed=seed)
        wrapper = HtmWrapper(sp.init_sp(sp_cfg), parallel.make_backend(config.backend, sp_cfg))
        wrapper.warm_up(train_v[0].frames()[0])
        wrapper.learn_videos(train_v, config.learning_epochs, np.random.default_rng([seed, 1]))
        train_h = [wrapper.histogram(v) for v in train_v]
        test_h = [wrapper.histogram(v) for v in test_v]
        records = wrapper.records
    else:
        classes = sorted({v.record.label for v in train_v})
        wrappers = []
        for ci, label in enumerate(classes):
            sp_cfg = config.sp.replace(
                rng_seed=int(np.random.SeedSequence([seed, ci]).generate_state(1, np.uint64)[0]))
            w = HtmWrapper(sp.init_sp(sp_cfg), parallel.make_backend(config.backend, sp_cfg))
            own = [v for v in train_v if v.record.label == label]
            w.warm_up(own[0].frames()[0])
            w.learn_videos(own, config.learning_epochs, np.random.default_rng([seed, 1, ci]))
            wrappers.append(w)

        def fused(v):
            parts = [w.histogram(v).counts for w in wrappers]
            return classify.SdrHistogram(np.concatenate(parts), v.record.label)

        train_h = [fused(v) for v in train_v]
        test_h = [fused(v) for v in test_v]
        for w in wrappers:
            records.extend(w.records)

    classes, counts = _fit_and_score(config, seed, train_h, test_h)
    return TrialReport(trial=trial, seed=seed, config=config, classes=classes,
                       confusion=counts.n_ij, f1=classify.f1_report(counts), records=records,
                       n_train=len(train_v), n_test=len(test_v))


def aggregate(reports: list[TrialReport]) -> dict:
    scores = [r.f1.f1 for r in reports]
    return {
        "trials": len(scores),
        "f1": scores,
        "f1_mean": statistics.fmean(scores) if scores else float("nan"),
        "f1_std": statistics.pstdev(scores) if scores else float("nan"),
    }


def write_trial_outputs(report: TrialReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = f"{report.config.backend}_trial{report.trial}" \
        if report.config.mode != "svm_only" else f"svm_only_trial{report.trial}"
    (out_dir / f"report_{tag}.json").write_text(report.to_json())
    if report.records:
        parallel.write_profile_csv(out_dir / f"profile_{tag}.csv", report.records,
                                   report.config.backend, report.config.sp)


def run_trials(config: ExperimentConfig, write: bool = True) -> tuple[list[TrialReport], dict]:
    reports = []
    for k in range(config.trials):
        log.info("trial %d/%d mode=%s backend=%s", k + 1, config.trials, config.mode, config.backend)
        report = run_trial(config, k)
        log.info("trial %d F1=%.4f", k, report.f1.f1)
        reports.append(report)
        if write:
            write_trial_outputs(report, config.output_dir)
    summary = aggregate(reports)
    summary["config"] = config.resolved()
    if write:
        (config.output_dir / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return reports, summary


# -- sweeps -------------------------------------------------------------------

@dataclass
class SweepPoint:
    value: object
    backend: str
    reports: list
    summary: dict
    timing: dict
    error: str | None = None


def _nondecreasing(xs) -> bool:
    xs = [x for x in xs if x is not None]
    return all(b >= a for a, b in zip(xs, xs[1:]))


def run_sweep(config: ExperimentConfig, backends=("sequential", "parallel"),
              write: bool = True) -> dict:
    if config.sweep is None:
        raise ConfigError("run_sweep needs a sweep section")
    param = config.sweep.parameter
    out_dir = config.output_dir
    rows, points = [], []
    for value in config.sweep.values:
        sp_cfg = config.sp_for_point(value)
        per_backend = {}
        for backend in backends:
            point_cfg = config.replace(sp=sp_cfg, backend=backend, sweep=None,
                                       output_dir=out_dir / f"{param}={value}" / backend)
            try:
                reports, summary = run_trials(point_cfg, write=write)
            except HtmError as exc:
                log.error("sweep point %s=%s backend=%s failed: %s", param, value, backend, exc)
                points.append(SweepPoint(value, backend, [], {}, {}, error=str(exc)))
                continue
            records = [r for rep in reports for r in rep.records]
            point = SweepPoint(value, backend, reports, summary, timing_summary(records))
            per_backend[backend] = point
            points.append(point)
        seq, par = per_backend.get("sequential"), per_backend.get("parallel")
        speedup_kernel = speedup_total = None
        if seq and par and seq.timing and par.timing:
            speedup_kernel = seq.timing["kernel_ns"] / max(par.timing["kernel_ns"], 1e-9)
            speedup_total = seq.timing["total_ns"] / max(par.timing["total_ns"], 1e-9)
        for point in per_backend.values():
            point.timing["speedup_kernel"] = speedup_kernel
            point.timing["speedup_total"] = speedup_total
            rows.append({
                "param": param, "value": value, "backend": point.backend,
                "f1_mean": point.summary["f1_mean"], "f1_std": point.summary["f1_std"],
                "kernel_ns": point.timing.get("kernel_ns"),
                "staging_in_ns": point.timing.get("staging_in_ns"),
                "staging_out_ns": point.timing.get("staging_out_ns"),
                "speedup_kernel": speedup_kernel, "speedup_total": speedup_total,
            })

    par_speedups = [p.timing.get("speedup_kernel") for p in points
                    if p.backend == "parallel" and p.error is None]
    result = {
        "parameter": param,
        "values": list(config.sweep.values),
        "rows": rows,
        "points": [{
            "value": p.value,
            "backend": p.backend,
            "error": p.error,
            "f1": p.summary.get("f1"),
            "timing": p.timing,
            "overlap_share": p.timing.get("overlap_share"),
            "config": [r.to_dict()["config"] for r in p.reports],
        } for p in points],
        "trend": {"speedup_kernel_nondecreasing": _nondecreasing(par_speedups)},
        "config": config.resolved(),
    }
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(out_dir / "sweep_summary.csv", rows)
        (out_dir / "sweep_report.json").write_text(
            json.dumps(result, indent=2, sort_keys=True, default=str) + "\n")
    return result


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in SWEEP_CSV_FIELDS})
