import json

import numpy as np
import pytest

from primcount.dataset import (
    CLASSES,
    ChannelDescriptor,
    ChannelManifest,
    ClassSignatureParams,
    DataError,
    IMURecording,
    LabeledRecording,
    PrimitiveClass,
    PrimitiveSegment,
    SynthSpec,
    class_signature,
    default_manifest,
    load_dataset,
    load_recording,
    save_dataset,
    save_recording,
    schedule_rng,
    schedule_segments,
    split_subjects,
    synthesize_dataset,
    synthetic_manifest,
    validate_tiling,
)


class TestPrimitiveClass:
    def test_codes_are_stable(self):
        assert [int(c) for c in CLASSES] == [0, 1, 2, 3, 4]
        assert PrimitiveClass.REACH == 0
        assert PrimitiveClass.REPOSITION == 1
        assert PrimitiveClass.TRANSPORT == 2
        assert PrimitiveClass.STABILIZE == 3
        assert PrimitiveClass.IDLE == 4

    def test_label_round_trip(self):
        for c in CLASSES:
            assert PrimitiveClass.from_label(c.label) is c

    def test_unknown_label_rejected(self):
        with pytest.raises(DataError, match="unknown primitive class"):
            PrimitiveClass.from_label("grasp")


class TestManifest:
    def test_default_manifest_has_77_channels(self):
        m = default_manifest()
        assert m.channel_count == 77
        kinds = [c.kind for c in m.channels]
        assert kinds.count("acceleration") == 27
        assert kinds.count("quaternion-component") == 28
        assert kinds.count("joint-angle") == 22

    def test_quaternion_groups_are_contiguous_fours(self):
        m = default_manifest()
        groups = m.quaternion_groups()
        assert len(groups) == 7
        for start in groups:
            sensors = {m.channels[start + k].sensor for k in range(4)}
            assert len(sensors) == 1

    def test_broken_quaternion_group_rejected(self):
        channels = (
            ChannelDescriptor("a", "s0", "quaternion-component", "1"),
            ChannelDescriptor("b", "s0", "quaternion-component", "1"),
            ChannelDescriptor("c", "s0", "quaternion-component", "1"),
        )
        with pytest.raises(DataError, match="group of 3"):
            ChannelManifest(channels)

    def test_json_round_trip(self):
        m = default_manifest()
        assert ChannelManifest.from_json(m.to_json()) == m


class TestRecordingValidation:
    def test_non_finite_frames_rejected(self):
        frames = np.zeros((10, 3))
        frames[4, 1] = np.nan
        with pytest.raises(DataError, match="non-finite"):
            IMURecording("s00", "a", 0, 100.0, frames)

    def test_frames_are_read_only(self):
        rec = IMURecording("s00", "a", 0, 100.0, np.zeros((10, 3)))
        with pytest.raises(ValueError):
            rec.frames[0, 0] = 1.0

    def test_channel_count_must_match_manifest(self):
        rec = IMURecording("s00", "a", 0, 100.0, np.zeros((10, 3)))
        with pytest.raises(DataError, match="dimensionality mismatch"):
            rec.validate_against(synthetic_manifest(4))

    def test_segment_span_must_be_nonempty(self):
        with pytest.raises(DataError, match="invalid segment span"):
            PrimitiveSegment(5, 5, PrimitiveClass.REACH)

    def test_tiling_rejects_overlap_gap_and_misalignment(self):
        r = PrimitiveClass.REACH
        with pytest.raises(DataError, match="overlapping segments"):
            validate_tiling(
                [PrimitiveSegment(0, 6, r), PrimitiveSegment(4, 10, r)], 10
            )
        with pytest.raises(DataError, match="gap between segments"):
            validate_tiling(
                [PrimitiveSegment(0, 4, r), PrimitiveSegment(6, 10, r)], 10
            )
        with pytest.raises(DataError, match="expected 0"):
            validate_tiling([PrimitiveSegment(2, 10, r)], 10)
        with pytest.raises(DataError, match="recording has 12"):
            validate_tiling([PrimitiveSegment(0, 10, r)], 12)

    def test_labeled_recording_sorts_segments(self):
        rec = IMURecording("s00", "a", 0, 100.0, np.zeros((10, 2)))
        labeled = LabeledRecording(
            rec,
            [
                PrimitiveSegment(6, 10, PrimitiveClass.IDLE),
                PrimitiveSegment(0, 6, PrimitiveClass.REACH),
            ],
        )
        assert labeled.class_sequence() == (
            PrimitiveClass.REACH,
            PrimitiveClass.IDLE,
        )
        counts = labeled.true_counts()
        assert counts[PrimitiveClass.REACH] == 1
        assert counts[PrimitiveClass.TRANSPORT] == 0


class TestFileIO:
    def test_round_trip_preserves_everything(self, tmp_path):
        spec = SynthSpec(n_subjects=1, trials_per_subject=1, duration_s=4.0,
                         sample_rate_hz=50.0, n_channels=5)
        ds = synthesize_dataset(spec, seed=3)
        labeled = ds.recordings[0]
        frames_path = save_recording(labeled, tmp_path, ds.manifest)
        loaded = load_recording(
            frames_path, frames_path.with_suffix(".labels.json"), ds.manifest
        )
        np.testing.assert_array_equal(loaded.recording.frames, labeled.recording.frames)
        assert loaded.segments == labeled.segments
        assert loaded.recording.subject_id == "s00"
        assert loaded.recording.sample_rate_hz == 50.0

    def test_wrong_channel_count_is_a_distinct_error(self, tmp_path):
        spec = SynthSpec(n_subjects=1, trials_per_subject=1, duration_s=2.0,
                         sample_rate_hz=50.0, n_channels=5)
        ds = synthesize_dataset(spec, seed=3)
        frames_path = save_recording(ds.recordings[0], tmp_path, ds.manifest)
        with pytest.raises(DataError, match="dimensionality mismatch"):
            load_recording(
                frames_path,
                frames_path.with_suffix(".labels.json"),
                synthetic_manifest(6),
            )

    def test_overlapping_labels_are_a_distinct_error(self, tmp_path):
        spec = SynthSpec(n_subjects=1, trials_per_subject=1, duration_s=2.0,
                         sample_rate_hz=50.0, n_channels=5)
        ds = synthesize_dataset(spec, seed=3)
        frames_path = save_recording(ds.recordings[0], tmp_path, ds.manifest)
        labels_path = frames_path.with_suffix(".labels.json")
        labels_path.write_text(json.dumps([
            {"class": "reach", "start": 0, "end": 60},
            {"class": "idle", "start": 50, "end": 100},
        ]))
        with pytest.raises(DataError, match="overlapping segments"):
            load_recording(frames_path, labels_path, ds.manifest)

    def test_garbled_csv_is_a_parse_error(self, tmp_path):
        spec = SynthSpec(n_subjects=1, trials_per_subject=1, duration_s=2.0,
                         sample_rate_hz=50.0, n_channels=5)
        ds = synthesize_dataset(spec, seed=3)
        frames_path = save_recording(ds.recordings[0], tmp_path, ds.manifest)
        lines = frames_path.read_text().splitlines()
        fields = lines[3].split(",")
        fields[2] = "oops"
        lines[3] = ",".join(fields)
        frames_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="parse failure"):
            load_recording(
                frames_path, frames_path.with_suffix(".labels.json"), ds.manifest
            )

    def test_dataset_directory_round_trip(self, tmp_path):
        spec = SynthSpec(n_subjects=2, trials_per_subject=2, duration_s=3.0,
                         sample_rate_hz=40.0, n_channels=6)
        ds = synthesize_dataset(spec, seed=11)
        save_dataset(ds, tmp_path / "data")
        loaded = load_dataset(tmp_path / "data")
        assert loaded.manifest == ds.manifest
        assert loaded.subjects == ds.subjects
        assert len(loaded.recordings) == 4
        by_id = {r.recording_id: r for r in loaded.recordings}
        for orig in ds.recordings:
            got = by_id[orig.recording_id]
            np.testing.assert_array_equal(got.recording.frames, orig.recording.frames)
            assert got.segments == orig.segments


class TestScheduler:
    def test_tiles_exactly_and_never_repeats_class(self):
        ranges = {c: (10, 30) for c in CLASSES}
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = int(rng.integers(15, 500))
            segs = schedule_segments(n, ranges, np.random.default_rng(rng.integers(2**32)))
            validate_tiling(segs, n)
            for a, b in zip(segs, segs[1:]):
                assert a.cls != b.cls

    def test_no_sliver_segments(self):
        # every segment respects its class minimum unless it is the only one
        ranges = {c: (10, 30) for c in CLASSES}
        rng = np.random.default_rng(7)
        for _ in range(300):
            n = int(rng.integers(25, 400))
            segs = schedule_segments(n, ranges, np.random.default_rng(rng.integers(2**32)))
            for s in segs:
                assert s.length >= 10

    def test_deterministic_given_stream(self):
        ranges = {c: (10, 30) for c in CLASSES}
        a = schedule_segments(400, ranges, schedule_rng(5, 1, 2))
        b = schedule_segments(400, ranges, schedule_rng(5, 1, 2))
        assert a == b


class TestSignature:
    def test_offsets_select_channels_by_residue(self):
        params = SynthSpec().signature
        for cls in CLASSES:
            sig = class_signature(cls, 40, 12, 100.0, params)
            mean = sig.mean(axis=0)
            hot = np.arange(12) % 5 == int(cls)
            assert mean[hot].min() > 0.5
            assert np.abs(mean[~hot]).max() < 0.5

    def test_segments_of_same_class_share_phase(self):
        params = SynthSpec().signature
        a = class_signature(PrimitiveClass.IDLE, 30, 8, 100.0, params)
        b = class_signature(PrimitiveClass.IDLE, 50, 8, 100.0, params)
        np.testing.assert_allclose(a, b[:30])


class TestSynthesize:
    def test_shapes_and_determinism(self):
        spec = SynthSpec(n_subjects=3, trials_per_subject=2, duration_s=5.0,
                         sample_rate_hz=50.0, n_channels=7)
        a = synthesize_dataset(spec, seed=9)
        b = synthesize_dataset(spec, seed=9)
        assert len(a.recordings) == 6
        assert len(a.subjects) == 3
        for ra, rb in zip(a.recordings, b.recordings):
            np.testing.assert_array_equal(ra.recording.frames, rb.recording.frames)
            assert ra.segments == rb.segments
            assert ra.recording.frames.shape == (250, 7)

    def test_different_seeds_differ(self):
        spec = SynthSpec(n_subjects=1, trials_per_subject=1, duration_s=5.0,
                         sample_rate_hz=50.0, n_channels=7)
        a = synthesize_dataset(spec, seed=1)
        b = synthesize_dataset(spec, seed=2)
        assert not np.array_equal(
            a.recordings[0].recording.frames, b.recordings[0].recording.frames
        )

    def test_noise_free_frames_match_signature_exactly(self):
        spec = SynthSpec(
            n_subjects=1, trials_per_subject=1, duration_s=5.0,
            sample_rate_hz=50.0, n_channels=7,
            signature=ClassSignatureParams(noise_std=0.0),
        )
        ds = synthesize_dataset(spec, seed=4)
        labeled = ds.recordings[0]
        for seg in labeled.segments:
            expected = class_signature(seg.cls, seg.length, 7, 50.0, spec.signature)
            np.testing.assert_allclose(
                labeled.recording.frames[seg.start:seg.end], expected
            )


class TestSplit:
    def test_partition_and_balance(self):
        subjects = [f"s{i:02d}" for i in range(33)]
        splits = split_subjects(subjects, n_folds=4, seed=0)
        assert len(splits) == 4
        val_sets = [s.val_subjects for s in splits]
        assert sorted(len(v) for v in val_sets) == [8, 8, 8, 9]
        union = frozenset().union(*val_sets)
        assert union == frozenset(subjects)
        assert sum(len(v) for v in val_sets) == 33
        for s in splits:
            assert s.train_subjects | s.val_subjects == frozenset(subjects)
            assert not (s.train_subjects & s.val_subjects)

    def test_deterministic(self):
        subjects = [f"s{i}" for i in range(10)]
        a = split_subjects(subjects, n_folds=3, seed=5)
        b = split_subjects(subjects, n_folds=3, seed=5)
        assert a == b

    def test_too_few_subjects_rejected(self):
        with pytest.raises(DataError, match="too few subjects"):
            split_subjects(["a", "b"], n_folds=4)
