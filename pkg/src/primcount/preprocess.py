"""Signal preprocessing: quaternion re-referencing, z-scoring, windowing.

The model never sees raw recordings. Each recording is re-expressed
relative to its calibration pose (sensor-centric quaternions), z-scored
with statistics pooled over the training split, and cut into fixed-size
windows whose central core carries the prediction target while the
flanks only provide context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import (
    ChannelManifest,
    DataError,
    IMURecording,
    PrimitiveClass,
    PrimitiveSegment,
)

_ZERO_NORM_EPS = 1e-12


# ---------------------------------------------------------------------------
# Quaternions, scalar first (w, x, y, z)
# ---------------------------------------------------------------------------


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Normalize quaternions along the last axis; rejects zero norm."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < _ZERO_NORM_EPS):
        raise DataError("zero-norm quaternion")
    return q / norm


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b, broadcasting over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, x1, y1, z1 = np.moveaxis(a, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion, scalar first. Normalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n < _ZERO_NORM_EPS:
            raise DataError("zero-norm quaternion")
        if abs(n - 1.0) > 1e-9:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q: np.ndarray) -> "Quaternion":
        w, x, y, z = np.asarray(q, dtype=np.float64)
        return cls(float(w), float(x), float(y), float(z))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion.from_array(quat_multiply(self.as_array(), other.as_array()))

    @property
    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)


def sensor_centric_transform(
    recording: IMURecording,
    manifest: ChannelManifest,
    reference_policy: str = "first_frame",
) -> IMURecording:
    """Re-express every quaternion stream relative to a reference pose.

    For each sensor, q'(t) = conj(q_ref) ⊗ q(t), renormalized, with
    q_ref the sensor's quaternion at the first frame. Non-quaternion
    channels pass through untouched.
    """
    if reference_policy != "first_frame":
        raise DataError(f"unknown reference policy {reference_policy!r}")
    recording.validate_against(manifest)
    groups = manifest.quaternion_groups()
    if not groups:
        return recording
    frames = np.array(recording.frames)
    for start in groups:
        q = quat_normalize(frames[:, start : start + 4])
        ref = q[0]
        frames[:, start : start + 4] = quat_normalize(
            quat_multiply(quat_conjugate(ref), q)
        )
    return recording.with_frames(frames)


# ---------------------------------------------------------------------------
# Z-score normalization
# ---------------------------------------------------------------------------


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    source_split: str = "train"

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise DataError("mean/std must be matching 1-D vectors")
        if np.any(self.std <= 0):
            raise DataError("std must be positive")

    @property
    def channel_count(self) -> int:
        return self.mean.shape[0]

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "source_split": self.source_split,
        }

    @classmethod
    def from_json(cls, data: dict) -> "NormalizationStats":
        return cls(np.array(data["mean"]), np.array(data["std"]), data["source_split"])


def fit_normalization(
    recordings: list[IMURecording], source_split: str = "train"
) -> NormalizationStats:
    """Per-channel mean/std pooled over all frames of all recordings.

    Channels with std below 1e-8 (constant channels) get std clamped
    to 1 so that z-scoring leaves them at zero instead of blowing up.
    """
    if not recordings:
        raise DataError("need at least one recording to fit normalization")
    stacked = np.concatenate([r.frames for r in recordings], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    return NormalizationStats(mean, std, source_split)


def normalize_frames(frames: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] != stats.channel_count:
        raise DataError(
            f"dimensionality mismatch: frames have {frames.shape[-1]} channels, "
            f"stats have {stats.channel_count}"
        )
    return (frames - stats.mean) / stats.std


def apply_normalization(
    recording: IMURecording, stats: NormalizationStats
) -> IMURecording:
    return recording.with_frames(normalize_frames(recording.frames, stats))


# ---------------------------------------------------------------------------
# Windowing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowSpec:
    """Window geometry. All durations must be whole frame counts."""

    sample_rate_hz: float
    window_s: float = 6.0
    core_s: float = 4.0
    train_slide_s: float = 0.5
    test_slide_s: float = 4.0

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise DataError("sample rate must be positive")
        if self.core_s > self.window_s:
            raise DataError("core cannot exceed window")
        for name in ("window_s", "core_s", "train_slide_s", "test_slide_s"):
            self._frames(getattr(self, name), name)
        # flanks must split evenly
        self._frames((self.window_s - self.core_s) / 2.0, "flank")

    def _frames(self, seconds: float, name: str) -> int:
        frames = seconds * self.sample_rate_hz
        rounded = round(frames)
        if abs(frames - rounded) > 1e-9 or rounded < 0:
            raise DataError(
                f"{name} = {seconds} s is not a whole frame count "
                f"at {self.sample_rate_hz} Hz"
            )
        return int(rounded)

    @property
    def window_frames(self) -> int:
        return self._frames(self.window_s, "window_s")

    @property
    def core_frames(self) -> int:
        return self._frames(self.core_s, "core_s")

    @property
    def flank_frames(self) -> int:
        return self._frames((self.window_s - self.core_s) / 2.0, "flank")

    @property
    def train_slide_frames(self) -> int:
        return self._frames(self.train_slide_s, "train_slide_s")

    @property
    def test_slide_frames(self) -> int:
        return self._frames(self.test_slide_s, "test_slide_s")


@dataclass
class Window:
    """One model input: full-context frames plus the core span they carry.

    core_start/core_end index into this window's frames; start_frame is
    the absolute recording frame the window begins at and is negative
    for windows that reach into the virtual left pad.
    """

    recording_id: str
    start_frame: int
    core_start: int
    core_end: int
    frames: np.ndarray

    def __post_init__(self):
        if not 0 <= self.core_start < self.core_end <= self.frames.shape[0]:
            raise DataError("core span outside window frames")

    @property
    def abs_core_start(self) -> int:
        return self.start_frame + self.core_start

    @property
    def abs_core_end(self) -> int:
        return self.start_frame + self.core_end

    @property
    def core_frames(self) -> np.ndarray:
        return self.frames[self.core_start : self.core_end]


def _core_starts(n_frames: int, core: int, slide: int, mode: str) -> list[int]:
    if mode == "test":
        return list(range(0, n_frames, slide))
    if mode == "train":
        if n_frames <= core:
            return [0]
        count = 1 + math.ceil((n_frames - core) / slide)
        return [k * slide for k in range(count)]
    raise DataError(f"unknown windowing mode {mode!r}")


def make_windows(
    recording: IMURecording, spec: WindowSpec, mode: str = "test"
) -> list[Window]:
    """Cut a recording into fixed-length windows.

    The recording is virtually padded by one flank on each side (boundary
    frame repeated) so the first core starts at absolute frame 0. In test
    mode the cores exactly tile [0, n_frames); the final core is truncated
    at the recording end but its window still has full length, tail-padded
    with the last frame. Train mode slides cores by train_slide_s instead.
    """
    n = recording.n_frames
    if n < 1:
        raise DataError("recording is empty")
    core = spec.core_frames
    flank = spec.flank_frames
    window_len = spec.window_frames
    slide = spec.test_slide_frames if mode == "test" else spec.train_slide_frames
    windows = []
    for core_abs_start in _core_starts(n, core, slide, mode):
        core_abs_end = min(core_abs_start + core, n)
        win_start = core_abs_start - flank
        idx = np.clip(np.arange(win_start, win_start + window_len), 0, n - 1)
        windows.append(
            Window(
                recording_id=recording.recording_id,
                start_frame=win_start,
                core_start=flank,
                core_end=flank + (core_abs_end - core_abs_start),
                frames=recording.frames[idx],
            )
        )
    return windows


# ---------------------------------------------------------------------------
# Ground-truth targets
# ---------------------------------------------------------------------------

MIN_OVERLAP_FRAMES = 5
MAX_TOKENS = 16


@dataclass(frozen=True)
class TargetSequence:
    """Ordered primitive tokens a window's core is expected to produce."""

    tokens: tuple[PrimitiveClass, ...]

    def __post_init__(self):
        if not self.tokens:
            raise DataError("target sequence is empty")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def codes(self) -> np.ndarray:
        return np.array([int(t) for t in self.tokens], dtype=np.int64)


def derive_target_sequence(
    segments: list[PrimitiveSegment],
    window: Window,
    min_overlap_frames: int = MIN_OVERLAP_FRAMES,
    max_tokens: int = MAX_TOKENS,
) -> TargetSequence:
    """Tokens of segments overlapping the window core, in temporal order.

    Segments whose core overlap falls below min_overlap_frames are
    dropped; distinct adjacent segments of the same class still emit one
    token each. If thresholding removes everything, the single segment
    with maximum overlap is emitted so the target is never empty.
    """
    lo, hi = window.abs_core_start, window.abs_core_end
    tokens: list[PrimitiveClass] = []
    best_cls = None
    best_overlap = 0
    for seg in segments:
        if seg.end <= lo:
            continue
        if seg.start >= hi:
            break
        overlap = min(seg.end, hi) - max(seg.start, lo)
        if overlap > best_overlap:
            best_overlap = overlap
            best_cls = seg.cls
        if overlap >= min_overlap_frames:
            tokens.append(seg.cls)
    if not tokens:
        if best_cls is None:
            raise DataError("window core overlaps no segment")
        tokens = [best_cls]
    return TargetSequence(tuple(tokens[:max_tokens]))
