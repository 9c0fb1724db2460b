"""Data model, file formats, and synthetic dataset generation.

A recording is a uniformly sampled multi-channel frame matrix plus an
ordered tiling of labeled primitive segments. Five primitive classes
exist; their integer codes are stable and are what appears in files and
confusion matrices. Synthetic datasets give every class a distinct noisy
channel signature so that downstream models have known ground truth.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed files or violated data invariants."""


class PrimitiveClass(enum.IntEnum):
    """The five functional primitive classes, coded 0..4."""

    REACH = 0
    REPOSITION = 1
    TRANSPORT = 2
    STABILIZE = 3
    IDLE = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "PrimitiveClass":
        try:
            return cls[label.upper()]
        except KeyError:
            raise DataError(f"unknown primitive class {label!r}") from None


CLASSES = tuple(PrimitiveClass)
N_CLASSES = len(CLASSES)

# Channel quantity kinds. Quaternion components always come in contiguous
# groups of four per sensor.
KIND_ACCELERATION = "acceleration"
KIND_QUATERNION = "quaternion-component"
KIND_JOINT_ANGLE = "joint-angle"
_KINDS = (KIND_ACCELERATION, KIND_QUATERNION, KIND_JOINT_ANGLE)


@dataclass(frozen=True)
class ChannelDescriptor:
    name: str
    sensor: str
    kind: str
    unit: str


@dataclass(frozen=True)
class ChannelManifest:
    """Describes the layout of the per-frame channel vector."""

    channels: tuple[ChannelDescriptor, ...]

    def __post_init__(self):
        for ch in self.channels:
            if ch.kind not in _KINDS:
                raise DataError(f"unknown channel kind {ch.kind!r}")
        for start, sensor, length in self._quaternion_runs():
            if length != 4:
                raise DataError(
                    f"quaternion channels for sensor {sensor!r} at column "
                    f"{start} form a group of {length}, expected 4"
                )

    @property
    def channel_count(self) -> int:
        return len(self.channels)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(ch.name for ch in self.channels)

    def _quaternion_runs(self):
        runs = []
        i = 0
        n = len(self.channels)
        while i < n:
            ch = self.channels[i]
            if ch.kind == KIND_QUATERNION:
                j = i
                while (
                    j < n
                    and self.channels[j].kind == KIND_QUATERNION
                    and self.channels[j].sensor == ch.sensor
                ):
                    j += 1
                runs.append((i, ch.sensor, j - i))
                i = j
            else:
                i += 1
        return runs

    def quaternion_groups(self) -> tuple[int, ...]:
        """Start column of each 4-wide quaternion group."""
        return tuple(start for start, _, _ in self._quaternion_runs())

    def to_json(self) -> list[dict]:
        return [
            {"name": c.name, "sensor": c.sensor, "kind": c.kind, "unit": c.unit}
            for c in self.channels
        ]

    @classmethod
    def from_json(cls, data: list[dict]) -> "ChannelManifest":
        try:
            channels = tuple(
                ChannelDescriptor(d["name"], d["sensor"], d["kind"], d["unit"])
                for d in data
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest entry: {exc}") from None
        return cls(channels)


_SENSORS = (
    "pelvis",
    "spine_t10",
    "spine_c7",
    "upper_arm_l",
    "upper_arm_r",
    "forearm_l",
    "forearm_r",
    "hand_l",
    "hand_r",
)


def default_manifest() -> ChannelManifest:
    """The 77-channel layout shipped with the repository.

    27 acceleration channels (9 sensors x 3 axes), 28 quaternion
    components (7 proximal sensors x w/x/y/z), and 22 joint-angle
    channels. The exact composition of real hardware streams varies;
    every downstream operation consumes whatever the manifest declares.
    """
    channels = []
    for sensor in _SENSORS:
        for axis in ("x", "y", "z"):
            channels.append(
                ChannelDescriptor(f"{sensor}_acc_{axis}", sensor, KIND_ACCELERATION, "g")
            )
    for sensor in _SENSORS[:7]:
        for comp in ("w", "x", "y", "z"):
            channels.append(
                ChannelDescriptor(f"{sensor}_quat_{comp}", sensor, KIND_QUATERNION, "1")
            )
    for i in range(22):
        channels.append(
            ChannelDescriptor(f"joint_angle_{i:02d}", "skeleton", KIND_JOINT_ANGLE, "deg")
        )
    return ChannelManifest(tuple(channels))


def synthetic_manifest(n_channels: int) -> ChannelManifest:
    """All-acceleration manifest used for synthetic recordings."""
    channels = tuple(
        ChannelDescriptor(f"ch_{i:02d}", f"synth_{i // 3}", KIND_ACCELERATION, "g")
        for i in range(n_channels)
    )
    return ChannelManifest(channels)


@dataclass
class IMURecording:
    """Uniformly sampled multi-channel frames for one subject trial."""

    subject_id: str
    activity: str
    trial: int
    sample_rate_hz: float
    frames: np.ndarray  # (n_frames, n_channels), float64

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise DataError("frames must be a 2-D array")
        if not np.isfinite(self.frames).all():
            raise DataError("non-finite value in frames")
        if self.sample_rate_hz <= 0:
            raise DataError("sample rate must be positive")
        self.frames.setflags(write=False)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_channels(self) -> int:
        return self.frames.shape[1]

    @property
    def recording_id(self) -> str:
        return f"{self.subject_id}/{self.activity}/{self.trial}"

    def validate_against(self, manifest: ChannelManifest) -> None:
        if self.n_channels != manifest.channel_count:
            raise DataError(
                f"dimensionality mismatch: frames have {self.n_channels} "
                f"channels, manifest declares {manifest.channel_count}"
            )

    def with_frames(self, frames: np.ndarray) -> "IMURecording":
        return IMURecording(
            self.subject_id, self.activity, self.trial, self.sample_rate_hz, frames
        )


@dataclass(frozen=True, order=True)
class PrimitiveSegment:
    """Half-open [start, end) frame span labeled with one class."""

    start: int
    end: int
    cls: PrimitiveClass

    def __post_init__(self):
        if self.start < 0 or self.start >= self.end:
            raise DataError(f"invalid segment span [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


def validate_tiling(segments: list[PrimitiveSegment], n_frames: int) -> None:
    """Segments must be sorted, non-overlapping, and tile [0, n_frames)."""
    if not segments:
        raise DataError("recording has no segments")
    if segments[0].start != 0:
        raise DataError(f"segments start at frame {segments[0].start}, expected 0")
    for prev, cur in zip(segments, segments[1:]):
        if cur.start < prev.end:
            raise DataError(
                f"overlapping segments at frames {cur.start} < {prev.end}"
            )
        if cur.start > prev.end:
            raise DataError(f"gap between segments at frames {prev.end}..{cur.start}")
    if segments[-1].end != n_frames:
        raise DataError(
            f"segments end at frame {segments[-1].end}, recording has {n_frames}"
        )


@dataclass
class LabeledRecording:
    recording: IMURecording
    segments: list[PrimitiveSegment]

    def __post_init__(self):
        self.segments = sorted(self.segments)
        validate_tiling(self.segments, self.recording.n_frames)

    @property
    def recording_id(self) -> str:
        return self.recording.recording_id

    def class_sequence(self) -> tuple[PrimitiveClass, ...]:
        """Ground-truth token sequence: one token per segment, in order."""
        return tuple(s.cls for s in self.segments)

    def true_counts(self) -> dict[PrimitiveClass, int]:
        counts = {c: 0 for c in CLASSES}
        for s in self.segments:
            counts[s.cls] += 1
        return counts


@dataclass(frozen=True)
class SubjectInfo:
    subject_id: str
    paretic_side: str
    ue_fma_score: int

    def __post_init__(self):
        if self.paretic_side not in ("left", "right"):
            raise DataError(f"paretic side must be left or right, got {self.paretic_side!r}")
        if not 0 <= self.ue_fma_score <= 66:
            raise DataError(f"impairment score {self.ue_fma_score} outside 0..66")


@dataclass(frozen=True)
class DatasetSplit:
    train_subjects: frozenset[str]
    val_subjects: frozenset[str]
    test_subjects: frozenset[str] = frozenset()

    def __post_init__(self):
        if (
            self.train_subjects & self.val_subjects
            or self.train_subjects & self.test_subjects
            or self.val_subjects & self.test_subjects
        ):
            raise DataError("split subject sets overlap")


# ---------------------------------------------------------------------------
# File I/O
#
# A recording on disk is three files sharing a stem:
#   <stem>.csv          frames, header "t,<channel names>", one row per frame
#   <stem>.labels.json  JSON array of {"class": ..., "start": ..., "end": ...}
#   <stem>.meta.json    {"subject_id": ..., "activity": ..., "trial": ...,
#                        "sample_rate_hz": ...}
# ---------------------------------------------------------------------------


def load_recording(
    frames_path: str | Path,
    labels_path: str | Path,
    manifest: ChannelManifest,
) -> LabeledRecording:
    """Load and validate one recording from its frames and labels files."""
    frames_path = Path(frames_path)
    labels_path = Path(labels_path)
    meta = _load_meta(labels_path)
    frames = _load_frames(frames_path, manifest)
    segments = _load_segments(labels_path)
    recording = IMURecording(
        subject_id=meta["subject_id"],
        activity=meta["activity"],
        trial=int(meta["trial"]),
        sample_rate_hz=float(meta.get("sample_rate_hz", 100.0)),
        frames=frames,
    )
    recording.validate_against(manifest)
    return LabeledRecording(recording, segments)


def _load_frames(path: Path, manifest: ChannelManifest) -> np.ndarray:
    expect = manifest.channel_count
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty frames file") from None
        if len(header) != expect + 1 or header[0] != "t":
            raise DataError(
                f"{path}: dimensionality mismatch in header: {len(header) - 1} "
                f"channels, manifest declares {expect}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != expect + 1:
                raise DataError(
                    f"{path}:{lineno}: dimensionality mismatch: row has "
                    f"{len(row) - 1} values, manifest declares {expect}"
                )
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: parse failure: {exc}") from None
    frames = np.asarray(rows, dtype=np.float64)
    if frames.size and not np.isfinite(frames).all():
        raise DataError(f"{path}: non-finite value in frames")
    return frames


def _load_segments(path: Path) -> list[PrimitiveSegment]:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: parse failure: {exc}") from None
    if not isinstance(data, list):
        raise DataError(f"{path}: labels file must hold a JSON array")
    segments = []
    for i, obj in enumerate(data):
        try:
            segments.append(
                PrimitiveSegment(
                    start=int(obj["start"]),
                    end=int(obj["end"]),
                    cls=PrimitiveClass.from_label(obj["class"]),
                )
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed segment {i}: {exc}") from None
    return segments


def _load_meta(labels_path: Path) -> dict:
    meta_path = labels_path.with_suffix("").with_suffix(".meta.json")
    if not meta_path.exists():
        raise DataError(f"{meta_path}: missing metadata file")
    with open(meta_path) as fh:
        meta = json.load(fh)
    for key in ("subject_id", "activity", "trial"):
        if key not in meta:
            raise DataError(f"{meta_path}: missing field {key!r}")
    return meta


def save_recording(labeled: LabeledRecording, directory: str | Path, manifest: ChannelManifest) -> Path:
    """Write the three files for one recording; returns the frames path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rec = labeled.recording
    stem = f"{rec.subject_id}__{rec.activity}__{rec.trial}"
    frames_path = directory / f"{stem}.csv"
    fs = rec.sample_rate_hz
    with open(frames_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *manifest.names])
        for i, row in enumerate(rec.frames):
            writer.writerow([repr(i / fs), *(repr(float(v)) for v in row)])
    with open(directory / f"{stem}.labels.json", "w") as fh:
        json.dump(
            [
                {"class": s.cls.label, "start": s.start, "end": s.end}
                for s in labeled.segments
            ],
            fh,
            indent=1,
        )
        fh.write("\n")
    with open(directory / f"{stem}.meta.json", "w") as fh:
        json.dump(
            {
                "subject_id": rec.subject_id,
                "activity": rec.activity,
                "trial": rec.trial,
                "sample_rate_hz": rec.sample_rate_hz,
            },
            fh,
            indent=1,
            sort_keys=True,
        )
        fh.write("\n")
    return frames_path


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassSignatureParams:
    """Shape of the per-class clean channel signature.

    Class c raises channels with index j satisfying j % 5 == c by
    offset_scale and rides a class-specific sinusoid on every channel, so
    the classes stay linearly separable as long as noise_std stays well
    below offset_scale.
    """

    offset_scale: float = 1.0
    amplitude: float = 0.5
    base_freq_hz: float = 0.5
    noise_std: float = 0.1


def _default_duration_ranges() -> dict[PrimitiveClass, tuple[float, float]]:
    return {
        PrimitiveClass.REACH: (0.5, 1.2),
        PrimitiveClass.REPOSITION: (0.5, 1.2),
        PrimitiveClass.TRANSPORT: (0.5, 1.5),
        PrimitiveClass.STABILIZE: (0.6, 1.6),
        PrimitiveClass.IDLE: (0.6, 2.0),
    }


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 8
    trials_per_subject: int = 2
    duration_s: float = 60.0
    sample_rate_hz: float = 100.0
    n_channels: int = 12
    signature: ClassSignatureParams = field(default_factory=ClassSignatureParams)
    duration_ranges_s: dict[PrimitiveClass, tuple[float, float]] = field(
        default_factory=_default_duration_ranges
    )
    activities: tuple[str, ...] = ("drill_a", "drill_b", "drill_c")


@dataclass
class SyntheticDataset:
    recordings: list[LabeledRecording]
    subjects: dict[str, SubjectInfo]
    manifest: ChannelManifest


def _stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


def schedule_rng(seed: int, subject_idx: int, trial_idx: int) -> np.random.Generator:
    """RNG stream that drives the segment scheduler for one recording."""
    return _stream_rng(seed, subject_idx, trial_idx, 0)


def noise_rng(seed: int, subject_idx: int, trial_idx: int) -> np.random.Generator:
    """RNG stream that drives the additive channel noise for one recording."""
    return _stream_rng(seed, subject_idx, trial_idx, 1)


def schedule_segments(
    total_frames: int,
    ranges_frames: dict[PrimitiveClass, tuple[int, int]],
    rng: np.random.Generator,
) -> list[PrimitiveSegment]:
    """Draw a segment tiling of [0, total_frames).

    Adjacent segments never share a class. A tail remainder shorter than
    its class's minimum duration is absorbed into the previous segment
    instead of becoming a sliver, so every emitted segment (except a
    whole-recording one) respects its class minimum.
    """
    if total_frames <= 0:
        raise DataError("recording duration must be positive")
    segments: list[PrimitiveSegment] = []
    pos = 0
    prev: PrimitiveClass | None = None
    while pos < total_frames:
        candidates = [c for c in CLASSES if c != prev]
        cls = candidates[int(rng.integers(len(candidates)))]
        lo, hi = ranges_frames[cls]
        dur = int(rng.integers(lo, hi + 1))
        end = min(total_frames, pos + dur)
        if end - pos < lo and segments:
            last = segments.pop()
            segments.append(PrimitiveSegment(last.start, total_frames, last.cls))
            return segments
        segments.append(PrimitiveSegment(pos, end, cls))
        pos = end
        prev = cls
    return segments


def class_signature(
    cls: PrimitiveClass,
    n_frames: int,
    n_channels: int,
    sample_rate_hz: float,
    params: ClassSignatureParams,
) -> np.ndarray:
    """Clean (noise-free) frames a segment of this class emits.

    Frame index is local to the segment, so every segment of a class
    starts at the same phase.
    """
    t = np.arange(n_frames) / sample_rate_hz
    phase = 2.0 * np.pi * np.arange(n_channels) / n_channels
    freq = params.base_freq_hz * (int(cls) + 1)
    wave = params.amplitude * np.sin(
        2.0 * np.pi * freq * t[:, None] + phase[None, :]
    )
    offsets = np.where(
        np.arange(n_channels) % N_CLASSES == int(cls), params.offset_scale, 0.0
    )
    return offsets[None, :] + wave


def synthesize_dataset(spec: SynthSpec, seed: int) -> SyntheticDataset:
    """Deterministic desk-scale dataset with known ground truth."""
    if spec.n_subjects <= 0 or spec.trials_per_subject <= 0:
        raise DataError("need at least one subject and one trial")
    if spec.duration_s <= 0:
        raise DataError("recording duration must be positive")
    fs = spec.sample_rate_hz
    total_frames = int(round(spec.duration_s * fs))
    ranges_frames = {}
    for cls, (lo_s, hi_s) in spec.duration_ranges_s.items():
        if lo_s <= 0 or hi_s < lo_s:
            raise DataError(f"invalid duration range for {cls.label}")
        ranges_frames[cls] = (max(1, int(round(lo_s * fs))), int(round(hi_s * fs)))

    manifest = synthetic_manifest(spec.n_channels)
    recordings = []
    subjects = {}
    for si in range(spec.n_subjects):
        subject_id = f"s{si:02d}"
        info_rng = _stream_rng(seed, si)
        subjects[subject_id] = SubjectInfo(
            subject_id=subject_id,
            paretic_side="left" if si % 2 == 0 else "right",
            ue_fma_score=int(info_rng.integers(26, 67)),
        )
        for ti in range(spec.trials_per_subject):
            segments = schedule_segments(
                total_frames, ranges_frames, schedule_rng(seed, si, ti)
            )
            frames = np.empty((total_frames, spec.n_channels))
            for seg in segments:
                frames[seg.start : seg.end] = class_signature(
                    seg.cls, seg.length, spec.n_channels, fs, spec.signature
                )
            if spec.signature.noise_std > 0:
                frames += noise_rng(seed, si, ti).normal(
                    0.0, spec.signature.noise_std, size=frames.shape
                )
            recording = IMURecording(
                subject_id=subject_id,
                activity=spec.activities[ti % len(spec.activities)],
                trial=ti,
                sample_rate_hz=fs,
                frames=frames,
            )
            recordings.append(LabeledRecording(recording, segments))
    return SyntheticDataset(recordings, subjects, manifest)


def split_subjects(
    subjects: list[str] | set[str], n_folds: int = 4, seed: int = 0
) -> list[DatasetSplit]:
    """Cross-validation folds: each subject lands in exactly one validation set.

    Fold validation sizes differ by at most one (33 subjects over 4 folds
    gives 9, 8, 8, 8).
    """
    subjects = sorted(subjects)
    if n_folds < 2:
        raise DataError("need at least 2 folds")
    if len(subjects) < n_folds:
        raise DataError(f"too few subjects ({len(subjects)}) for {n_folds} folds")
    order = np.array(subjects, dtype=object)
    _stream_rng(seed, 0xF01D).shuffle(order)
    groups = np.array_split(order, n_folds)
    all_subjects = frozenset(subjects)
    splits = []
    for group in groups:
        val = frozenset(group.tolist())
        splits.append(DatasetSplit(train_subjects=all_subjects - val, val_subjects=val))
    return splits


# ---------------------------------------------------------------------------
# Dataset directory I/O
# ---------------------------------------------------------------------------


def save_dataset(dataset: SyntheticDataset, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(dataset.manifest.to_json(), fh, indent=1)
        fh.write("\n")
    with open(directory / "subjects.json", "w") as fh:
        json.dump(
            {
                sid: {"paretic_side": s.paretic_side, "ue_fma_score": s.ue_fma_score}
                for sid, s in sorted(dataset.subjects.items())
            },
            fh,
            indent=1,
            sort_keys=True,
        )
        fh.write("\n")
    rec_dir = directory / "recordings"
    for labeled in dataset.recordings:
        save_recording(labeled, rec_dir, dataset.manifest)


def load_dataset(directory: str | Path) -> SyntheticDataset:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = ChannelManifest.from_json(json.load(fh))
    with open(directory / "subjects.json") as fh:
        subjects = {
            sid: SubjectInfo(sid, obj["paretic_side"], int(obj["ue_fma_score"]))
            for sid, obj in json.load(fh).items()
        }
    recordings = []
    rec_dir = directory / "recordings"
    for frames_path in sorted(rec_dir.glob("*.csv")):
        labels_path = frames_path.with_suffix(".labels.json")
        recordings.append(load_recording(frames_path, labels_path, manifest))
    if not recordings:
        raise DataError(f"{rec_dir}: no recordings found")
    return SyntheticDataset(recordings, subjects, manifest)
