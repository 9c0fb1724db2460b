"""Ensemble greedy decoding, window stitching, and primitive counting.

Each window decodes to a short primitive sequence. Consecutive windows
share their boundary frames, so a primitive straddling a core boundary
appears at the tail of one window and the head of the next; stitching
drops that duplicate before counting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import CLASSES, DataError, PrimitiveClass
from .model import EOS_TOKEN, SOS_TOKEN, EnsembleModel, _encode_batch, decode_step_batch
from .preprocess import TargetSequence, Window, normalize_frames


@dataclass(frozen=True)
class WindowPrediction:
    """Decoded primitive tokens for one window's core."""

    recording_id: str
    core_start: int
    tokens: tuple[PrimitiveClass, ...]

    def __post_init__(self):
        for t in self.tokens:
            if not isinstance(t, PrimitiveClass):
                raise DataError(f"non-primitive token {t!r} in window prediction")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class SessionPrediction:
    """Stitched primitive sequence for one whole recording."""

    recording_id: str
    tokens: tuple[PrimitiveClass, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def to_json(self) -> dict:
        return {
            "recording": self.recording_id,
            "sequence": [t.label for t in self.tokens],
        }


@dataclass(frozen=True)
class PrimitiveCounts:
    """Per-class primitive totals for one recording."""

    counts: dict[PrimitiveClass, int]
    activity: str | None = None

    def __post_init__(self):
        full = {c: int(self.counts.get(c, 0)) for c in CLASSES}
        if any(v < 0 for v in full.values()):
            raise DataError("negative primitive count")
        object.__setattr__(self, "counts", full)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, cls: PrimitiveClass) -> int:
        return self.counts[cls]

    def to_json(self) -> dict:
        return {c.label: self.counts[c] for c in CLASSES}


def from_target(window: Window, target: TargetSequence) -> WindowPrediction:
    """Wrap a ground-truth target as a prediction (oracle decoding path)."""
    return WindowPrediction(window.recording_id, window.abs_core_start,
                            tuple(target.tokens))


def decode_windows(
    ensemble: EnsembleModel, windows: list[Window]
) -> list[WindowPrediction]:
    """Greedy ensemble decoding of many windows at once.

    Every member normalizes the windows with its own stats and encodes
    them independently; at each step the members' token distributions
    are averaged, the argmax (lowest code on ties, SOS excluded) is the
    shared prediction, EOS stops a window, and the shared token feeds
    back into every member's decoder.
    """
    if not windows:
        return []
    B = len(windows)
    max_tokens = ensemble.config.max_decode_len - 1
    raw = np.stack([w.frames for w in windows])
    states = []
    for params, stats in ensemble.members:
        ctx, _ = _encode_batch(params, normalize_frames(raw, stats))
        states.append(ctx)

    prev = np.full(B, SOS_TOKEN, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    out_tokens = np.zeros((B, max_tokens), dtype=np.int64)
    lengths = np.zeros(B, dtype=np.int64)
    for _ in range(ensemble.config.max_decode_len):
        avg = None
        for i, (params, _) in enumerate(ensemble.members):
            probs, states[i] = decode_step_batch(params, states[i], prev)
            avg = probs if avg is None else avg + probs
        avg /= len(ensemble.members)
        avg[:, SOS_TOKEN] = -1.0  # SOS is never a legal prediction
        tok = np.argmax(avg, axis=1)
        done |= tok == EOS_TOKEN
        active = ~done
        if active.any():
            out_tokens[active, lengths[active]] = tok[active]
            lengths[active] += 1
        prev = tok
        if done.all() or lengths.max() >= max_tokens:
            done |= lengths >= max_tokens
            if done.all():
                break

    return [
        WindowPrediction(
            w.recording_id,
            w.abs_core_start,
            tuple(PrimitiveClass(int(c)) for c in out_tokens[b, : lengths[b]]),
        )
        for b, w in enumerate(windows)
    ]


def decode_window(ensemble: EnsembleModel, window: Window) -> WindowPrediction:
    """Greedy ensemble decode of a single window."""
    return decode_windows(ensemble, [window])[0]


def stitch_windows(predictions: list[WindowPrediction]) -> SessionPrediction:
    """Concatenate window sequences, merging duplicates at boundaries.

    Left fold: append each window's tokens in core-start order; when the
    running sequence ends with the same class the next window starts
    with, that first token is dropped (one primitive spanning the
    boundary). Empty predictions are skipped.
    """
    if not predictions:
        raise DataError("no window predictions to stitch")
    rec_ids = {p.recording_id for p in predictions}
    if len(rec_ids) != 1:
        raise DataError(f"predictions from multiple recordings: {sorted(rec_ids)}")
    starts = [p.core_start for p in predictions]
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise DataError("window predictions not sorted by core start")
    stitched: list[PrimitiveClass] = []
    for pred in predictions:
        tokens = list(pred.tokens)
        if tokens and stitched and stitched[-1] == tokens[0]:
            tokens = tokens[1:]
        stitched.extend(tokens)
    return SessionPrediction(predictions[0].recording_id, tuple(stitched))


def count(session: SessionPrediction, activity: str | None = None) -> PrimitiveCounts:
    """Per-class token totals of a stitched sequence."""
    counts = {c: 0 for c in CLASSES}
    for t in session.tokens:
        counts[t] += 1
    return PrimitiveCounts(counts, activity)


@dataclass(frozen=True)
class CountingError:
    """Signed per-class and pooled counting errors, in percent.

    Positive = undercount (fewer predicted than true). Classes with a
    zero true count are NaN (undefined), not errors.
    """

    per_class: dict[PrimitiveClass, float]
    pooled: float

    def to_json(self) -> dict:
        def clean(v):
            return None if np.isnan(v) else v

        return {
            "per_class": {c.label: clean(self.per_class[c]) for c in CLASSES},
            "pooled": clean(self.pooled),
        }


def counting_error(true_counts, predicted_counts) -> CountingError:
    """error = 100 * (true - predicted) / true, per class and pooled."""
    true = true_counts.counts if isinstance(true_counts, PrimitiveCounts) else true_counts
    pred = (
        predicted_counts.counts
        if isinstance(predicted_counts, PrimitiveCounts)
        else predicted_counts
    )
    per_class = {}
    for c in CLASSES:
        t = true.get(c, 0)
        p = pred.get(c, 0)
        per_class[c] = 100.0 * (t - p) / t if t > 0 else float("nan")
    total_true = sum(true.get(c, 0) for c in CLASSES)
    total_pred = sum(pred.get(c, 0) for c in CLASSES)
    pooled = (
        100.0 * (total_true - total_pred) / total_true
        if total_true > 0
        else float("nan")
    )
    return CountingError(per_class, pooled)


def session_report(session: SessionPrediction, counts: PrimitiveCounts) -> dict:
    """JSON document for one recording: sequence plus per-class counts."""
    doc = session.to_json()
    doc["counts"] = counts.to_json()
    if counts.activity is not None:
        doc["activity"] = counts.activity
    return doc
