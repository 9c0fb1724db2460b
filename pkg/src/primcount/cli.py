"""Command-line pipeline around the library.

Subcommands cover the full workflow: synthesize a dataset, train the
fold ensemble, predict stitched sequences, count primitives, evaluate
against labels, benchmark throughput, and replay a recording on a
real-time clock. Every non-timing output is a pure function of
(config, seed, data), so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import (
    KaiserSmoother,
    PointwiseTrainConfig,
    collapse_windows,
    smooth,
    train_pointwise,
)
from .dataset import (
    CLASSES,
    DataError,
    LabeledRecording,
    PrimitiveClass,
    SynthSpec,
    SyntheticDataset,
    _stream_rng,
    load_dataset,
    save_dataset,
    synthesize_dataset,
)
from .decoding import (
    PrimitiveCounts,
    SessionPrediction,
    WindowPrediction,
    count,
    counting_error,
    decode_windows,
    stitch_windows,
)
from .evaluation import AlignmentRecord, aggregate, align, confusion_matrix, tally
from .model import (
    EnsembleModel,
    ModelConfig,
    TrainConfig,
    TrainingData,
    TrainingError,
    load_ensemble,
    save_ensemble,
    train_ensemble,
)
from .preprocess import WindowSpec, make_windows

GROUPINGS = ("overall", "subject", "activity", "primitive_class")


class ConfigError(ValueError):
    """Bad usage or configuration; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs beyond the data itself.

    Serializes losslessly to JSON; the hash of that JSON identifies the
    configuration in reports.
    """

    data_root: str = "data"
    out_dir: str = "out"
    seed: int = 0
    # synthesis
    n_subjects: int = 8
    trials_per_subject: int = 2
    duration_s: float = 60.0
    sample_rate_hz: float = 100.0
    n_channels: int = 12
    # windowing
    window_s: float = 6.0
    core_s: float = 4.0
    train_slide_s: float = 0.5
    test_slide_s: float = 4.0
    # model
    hidden_dim: int = 64
    embed_dim: int = 32
    # training
    learning_rate: float = 5e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    n_folds: int = 4
    test_fraction: float = 0.25
    # baseline comparison
    with_baseline: bool = False
    smoother_length: int = 21
    smoother_beta: float = 4.0
    baseline_context_frames: int = 100

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def window_spec(self) -> WindowSpec:
        return WindowSpec(
            sample_rate_hz=self.sample_rate_hz,
            window_s=self.window_s,
            core_s=self.core_s,
            train_slide_s=self.train_slide_s,
            test_slide_s=self.test_slide_s,
        )

    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim, hidden_dim=self.hidden_dim, embed_dim=self.embed_dim
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
        )

    def smoother(self) -> KaiserSmoother:
        return KaiserSmoother(self.smoother_length, self.smoother_beta)


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            obj = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON ({e})") from e
        cfg = RunConfig.from_json(obj)
    live = {k: v for k, v in overrides.items() if v is not None}
    if live:
        cfg = replace(cfg, **live)
    return cfg


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def holdout_split(subject_ids, fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Deterministic subject holdout: (pool, test)."""
    ids = sorted(subject_ids)
    if len(ids) < 2:
        raise DataError("need at least two subjects to hold any out")
    n_test = max(1, round(fraction * len(ids)))
    if n_test >= len(ids):
        raise DataError("holdout fraction leaves no training subjects")
    order = np.array(ids, dtype=object)
    _stream_rng(seed, 0x7E57).shuffle(order)
    test = sorted(order[:n_test].tolist())
    pool = sorted(order[n_test:].tolist())
    return pool, test


def _require_dataset(cfg: RunConfig) -> SyntheticDataset:
    root = Path(cfg.data_root)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    return load_dataset(root)


def _model_paths(out_dir: Path) -> list[Path]:
    paths = sorted(out_dir.glob("model.*.bin"), key=lambda p: int(p.name.split(".")[1]))
    if not paths:
        raise DataError(f"no model files under {out_dir}")
    return paths


def _record_timing(out_dir: Path, stage: str, seconds: float) -> None:
    path = out_dir / "timings.json"
    timings = json.loads(path.read_text()) if path.is_file() else {}
    timings[stage] = seconds
    _write_json(path, timings)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _by_subject(recordings, subjects) -> list[LabeledRecording]:
    wanted = set(subjects)
    return [r for r in recordings if r.recording.subject_id in wanted]


def predict_sessions(
    ensemble: EnsembleModel, recordings, spec: WindowSpec
) -> list[SessionPrediction]:
    sessions = []
    for labeled in sorted(recordings, key=lambda r: r.recording.recording_id):
        windows = make_windows(labeled.recording, spec, mode="test")
        preds = decode_windows(ensemble, windows)
        sessions.append(stitch_windows(preds))
    return sessions


def _load_sequences(path: Path) -> list[SessionPrediction]:
    if not path.is_file():
        raise DataError(f"predictions not found: {path} (run predict first)")
    sessions = []
    with open(path) as fh:
        for line in fh:
            obj = json.loads(line)
            tokens = tuple(PrimitiveClass.from_label(t) for t in obj["sequence"])
            sessions.append(SessionPrediction(obj["recording"], tokens))
    return sessions


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    spec = SynthSpec(
        n_subjects=cfg.n_subjects,
        trials_per_subject=cfg.trials_per_subject,
        duration_s=cfg.duration_s,
        sample_rate_hz=cfg.sample_rate_hz,
        n_channels=cfg.n_channels,
    )
    t0 = time.perf_counter()
    dataset = synthesize_dataset(spec, seed=cfg.seed)
    save_dataset(dataset, cfg.data_root)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _record_timing(out_dir, "synth", time.perf_counter() - t0)
    n_segs = sum(len(r.segments) for r in dataset.recordings)
    print(
        f"wrote {len(dataset.recordings)} recordings "
        f"({n_segs} segments, {cfg.n_subjects} subjects) to {cfg.data_root}"
    )
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    dataset = _require_dataset(cfg)
    pool, test = holdout_split(dataset.subjects, cfg.test_fraction, cfg.seed)
    pool_recordings = _by_subject(dataset.recordings, pool)
    data = TrainingData(pool_recordings, cfg.window_spec())
    model_cfg = cfg.model_config(input_dim=dataset.manifest.channel_count)
    t0 = time.perf_counter()
    ensemble, logs = train_ensemble(
        data, model_cfg, cfg.train_config(), n_folds=cfg.n_folds, seed=cfg.seed
    )
    elapsed = time.perf_counter() - t0
    out_dir = Path(cfg.out_dir)
    paths = save_ensemble(out_dir, ensemble)
    _write_json(
        out_dir / "split.json",
        {"pool_subjects": pool, "test_subjects": test},
    )
    _write_json(
        out_dir / "train_log.json",
        [[s.to_json() for s in log] for log in logs],
    )
    _record_timing(out_dir, "train", elapsed)
    print(f"trained {len(paths)} members on {len(pool)} subjects, held out {test}")
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    dataset = _require_dataset(cfg)
    out_dir = Path(cfg.out_dir)
    ensemble = load_ensemble(_model_paths(out_dir))
    split = json.loads((out_dir / "split.json").read_text())
    test_recordings = _by_subject(dataset.recordings, split["test_subjects"])
    if not test_recordings:
        raise DataError("no recordings for held-out subjects")
    t0 = time.perf_counter()
    sessions = predict_sessions(ensemble, test_recordings, cfg.window_spec())
    with open(out_dir / "sequences.jsonl", "w") as fh:
        for session in sessions:
            fh.write(json.dumps(session.to_json(), sort_keys=True) + "\n")
    _record_timing(out_dir, "predict", time.perf_counter() - t0)
    print(f"decoded {len(sessions)} recordings -> {out_dir / 'sequences.jsonl'}")
    return 0


def cmd_count(cfg: RunConfig, args) -> int:
    dataset = _require_dataset(cfg)
    out_dir = Path(cfg.out_dir)
    sessions = _load_sequences(out_dir / "sequences.jsonl")
    labeled_by_id = {r.recording.recording_id: r for r in dataset.recordings}
    t0 = time.perf_counter()
    rows = []
    report_rows = []
    for session in sessions:
        labeled = labeled_by_id.get(session.recording_id)
        if labeled is None:
            raise DataError(f"unknown recording in predictions: {session.recording_id}")
        predicted = count(session)
        true = labeled.true_counts()
        err = counting_error(true, predicted)
        for cls in CLASSES:
            rows.append(
                [
                    session.recording_id,
                    cls.label,
                    true[cls],
                    predicted[cls],
                    repr(err.per_class[cls]),
                ]
            )
        rows.append(
            [
                session.recording_id,
                "all",
                sum(true.values()),
                predicted.total,
                repr(err.pooled),
            ]
        )
        report_rows.append(
            {
                "recording": session.recording_id,
                "true": {c.label: true[c] for c in CLASSES},
                "predicted": predicted.to_json(),
                "error_pct": err.to_json(),
            }
        )
    with open(out_dir / "counts.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording", "class", "true", "predicted", "error_pct"])
        writer.writerows(rows)
    _write_json(out_dir / "counts.json", report_rows)
    _record_timing(out_dir, "count", time.perf_counter() - t0)
    print(f"counted {len(sessions)} recordings -> {out_dir / 'counts.csv'}")
    return 0


def _metric_row(group: str, gm) -> list:
    m = gm.micro
    return [
        group,
        gm.group,
        gm.n_records,
        gm.n_subjects,
        repr(m.sensitivity),
        repr(m.fdr),
        repr(m.f1),
        repr(m.aer),
    ]


def _baseline_block(cfg: RunConfig, dataset, pool, test_recordings) -> dict:
    train_recs = _by_subject(dataset.recordings, pool)
    ptc = PointwiseTrainConfig(
        context_frames=cfg.baseline_context_frames, seed=cfg.seed
    )
    clf = train_pointwise(train_recs, ptc)
    smoother = cfg.smoother()
    spec = cfg.window_spec()
    records = []
    for labeled in test_recordings:
        windows = make_windows(labeled.recording, spec, mode="test")
        track = smooth(clf.track(labeled.recording), smoother)
        session = stitch_windows(collapse_windows(track, windows))
        ops = align(labeled.class_sequence(), session.tokens)
        records.append(
            AlignmentRecord(
                labeled.recording.subject_id, labeled.recording.activity, tally(ops)
            )
        )
    overall = aggregate(records, group_by="overall")["overall"]
    return {
        "smoother": smoother.to_json(),
        "overall": overall.to_json(),
    }


def cmd_eval(cfg: RunConfig, args) -> int:
    dataset = _require_dataset(cfg)
    out_dir = Path(cfg.out_dir)
    sessions = _load_sequences(out_dir / "sequences.jsonl")
    labeled_by_id = {r.recording.recording_id: r for r in dataset.recordings}
    t0 = time.perf_counter()
    records = []
    for session in sessions:
        labeled = labeled_by_id.get(session.recording_id)
        if labeled is None:
            raise DataError(f"unknown recording in predictions: {session.recording_id}")
        ops = align(labeled.class_sequence(), session.tokens)
        records.append(
            AlignmentRecord(
                labeled.recording.subject_id, labeled.recording.activity, tally(ops)
            )
        )
    groups = {g: aggregate(records, group_by=g) for g in GROUPINGS}
    pooled = records[0].tallies
    for r in records[1:]:
        pooled = pooled + r.tallies
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["group_by", "group", "n_records", "n_subjects",
             "sensitivity", "fdr", "f1", "aer"]
        )
        for name in GROUPINGS:
            for gm in groups[name].values():
                writer.writerow(_metric_row(name, gm))

    counts_path = out_dir / "counts.json"
    counting = json.loads(counts_path.read_text()) if counts_path.is_file() else None
    split = json.loads((out_dir / "split.json").read_text())
    baseline = None
    if cfg.with_baseline:
        test_recordings = [labeled_by_id[s.recording_id] for s in sessions]
        baseline = _baseline_block(cfg, dataset, split["pool_subjects"], test_recordings)
    elapsed = time.perf_counter() - t0
    _record_timing(out_dir, "eval", elapsed)
    timings_path = out_dir / "timings.json"
    timings = json.loads(timings_path.read_text()) if timings_path.is_file() else {}
    report = {
        "config_hash": cfg.config_hash(),
        "config": cfg.to_json(),
        "versions": {
            "primcount": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "split": split,
        "metrics": {
            name: {key: gm.to_json() for key, gm in groups[name].items()}
            for name in GROUPINGS
        },
        "confusion": confusion_matrix(pooled).to_json(),
        "counting": counting,
        "baseline": baseline,
        "timing": timings,
    }
    _write_json(out_dir / "report.json", report)
    overall = groups["overall"]["overall"].micro
    print(
        f"sensitivity {overall.sensitivity:.3f}  fdr {overall.fdr:.3f}  "
        f"f1 {overall.f1:.3f}  aer {overall.aer:.3f} -> {out_dir / 'report.json'}"
    )
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    out_dir = Path(cfg.out_dir)
    root = Path(cfg.data_root)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    try:
        dataset = _require_dataset(cfg)
        recordings = dataset.recordings
    except (DataError, OSError):
        recordings = []
    spec = cfg.window_spec()
    stages = {"window": 0.0, "decode": 0.0, "stitch_count": 0.0}
    processed_s = 0.0
    if recordings:
        ensemble = load_ensemble(_model_paths(out_dir))
        for labeled in recordings:
            rec = labeled.recording
            processed_s += rec.n_frames / rec.sample_rate_hz
            t0 = time.perf_counter()
            windows = make_windows(rec, spec, mode="test")
            t1 = time.perf_counter()
            preds = decode_windows(ensemble, windows)
            t2 = time.perf_counter()
            count(stitch_windows(preds))
            t3 = time.perf_counter()
            stages["window"] += t1 - t0
            stages["decode"] += t2 - t1
            stages["stitch_count"] += t3 - t2
    total = sum(stages.values())
    minutes = processed_s / 60.0
    report = {
        "n_recordings": len(recordings),
        "processed_duration_s": processed_s,
        "total_compute_s": total,
        "seconds_per_minute": (total / minutes) if minutes > 0 else 0.0,
        "stages": stages,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "bench.json", report)
    print(
        f"{report['n_recordings']} recordings, {processed_s:.0f} s of data, "
        f"{report['seconds_per_minute']:.2f} s compute per minute"
    )
    return 0


# ---------------------------------------------------------------------------
# Streaming replay
# ---------------------------------------------------------------------------


@dataclass
class StreamResult:
    session: SessionPrediction
    counts: PrimitiveCounts
    events: list[dict]
    lags_s: list[float]

    @property
    def max_lag_s(self) -> float:
        return max(self.lags_s) if self.lags_s else 0.0


def stream_replay(recording, ensemble: EnsembleModel, speed: float = 1.0) -> StreamResult:
    """Replay a recording on a scaled real-time clock and decode live.

    A window becomes decodable once its trailing flank has arrived, so
    the producer clock releases frame min(n, core_end + flank) before
    the consumer runs. Stitching is incremental with a one-token
    lookback, matching the batch merge rule, so the final sequence is
    identical to batch mode. Lag is emit time minus the wall-clock time
    the window's core ended.
    """
    if speed <= 0:
        raise DataError("speed must be positive")
    spec = WindowSpec(sample_rate_hz=recording.sample_rate_hz)
    windows = make_windows(recording, spec, mode="test")
    n = recording.n_frames
    fs = recording.sample_rate_hz
    throttled = math.isfinite(speed)

    stitched: list[PrimitiveClass] = []
    events = []
    lags = []
    t0 = time.monotonic()
    for i, window in enumerate(windows):
        ready_frame = min(n, window.abs_core_end + spec.flank_frames)
        if throttled:
            release = t0 + ready_frame / fs / speed
            delay = release - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        ready = time.monotonic()
        pred = decode_windows(ensemble, [window])[0]
        if pred.tokens:
            start = 1 if stitched and stitched[-1] == pred.tokens[0] else 0
            stitched.extend(pred.tokens[start:])
        emit = time.monotonic()
        core_end_wall = (window.abs_core_end / fs / speed) if throttled else 0.0
        lag = (emit - t0) - core_end_wall
        lags.append(lag)
        running = count(SessionPrediction(recording.recording_id, tuple(stitched)))
        events.append(
            {
                "window": i,
                "core_start_s": window.abs_core_start / fs,
                "core_end_s": window.abs_core_end / fs,
                "tokens": [t.label for t in pred.tokens],
                "counts": running.to_json(),
                "emit_monotonic_s": emit - t0,
                "compute_s": emit - ready,
                "lag_s": lag,
            }
        )
    session = SessionPrediction(recording.recording_id, tuple(stitched))
    return StreamResult(session, count(session), events, lags)


def cmd_stream(cfg: RunConfig, args) -> int:
    dataset = _require_dataset(cfg)
    out_dir = Path(cfg.out_dir)
    ensemble = load_ensemble(_model_paths(out_dir))
    by_id = {r.recording.recording_id: r for r in dataset.recordings}
    if args.recording is not None:
        if args.recording not in by_id:
            raise DataError(f"recording not found: {args.recording}")
        target = by_id[args.recording]
    else:
        split_path = out_dir / "split.json"
        if split_path.is_file():
            test_subjects = json.loads(split_path.read_text())["test_subjects"]
            candidates = _by_subject(dataset.recordings, test_subjects)
        else:
            candidates = dataset.recordings
        target = sorted(candidates, key=lambda r: r.recording.recording_id)[0]
    speed = args.speed if args.speed is not None else 1.0
    result = stream_replay(target.recording, ensemble, speed=speed)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "stream_events.jsonl", "w") as fh:
        for event in result.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    _write_json(
        out_dir / "stream_report.json",
        {
            "recording": target.recording.recording_id,
            "speed": "inf" if not math.isfinite(speed) else speed,
            "n_windows": len(result.events),
            "max_lag_s": result.max_lag_s,
            "counts": result.counts.to_json(),
            "sequence": [t.label for t in result.session.tokens],
        },
    )
    print(
        f"streamed {target.recording.recording_id} at speed "
        f"{'inf' if not math.isfinite(speed) else speed}: "
        f"{len(result.events)} windows, max lag {result.max_lag_s:.3f} s"
    )
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="primcount",
        description="Primitive counting pipeline for multi-channel inertial recordings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="path to a run config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--data", help="override the dataset directory")
        if name == "train":
            p.add_argument("--folds", type=int, help="number of ensemble folds")
        if name == "stream":
            p.add_argument("--speed", type=float, help="replay speed, inf = unthrottled")
            p.add_argument("--recording", help="recording id to replay")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "count": cmd_count,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "stream": cmd_stream,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "data_root": args.data,
        "n_folds": getattr(args, "folds", None),
    }
    try:
        cfg = load_run_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DataError, TrainingError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
