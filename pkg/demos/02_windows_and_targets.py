"""Window geometry and per-window target sequences.

Recordings are cut into 6 s windows whose central 4 s core is the part
a prediction is charged with; the 1 s flanks on either side are context
only. Training slides by 0.5 s for a dense crop, testing slides by the
core length so the cores tile the recording exactly once.
"""

from primcount.dataset import SynthSpec, synthesize_dataset
from primcount.preprocess import WindowSpec, make_windows, derive_target_sequence

FS = 20.0

spec = SynthSpec(n_subjects=1, trials_per_subject=1, duration_s=30.0,
                 sample_rate_hz=FS, n_channels=6)
labeled = synthesize_dataset(spec, seed=3).recordings[0]
rec = labeled.recording

ws = WindowSpec(sample_rate_hz=FS)
print(f"window {ws.window_s:g} s, core {ws.core_s:g} s, "
      f"flank {ws.flank_frames} frames")

# ---- test mode: cores tile [0, n) ----

test_windows = make_windows(rec, ws, mode="test")
print(f"\n{len(test_windows)} test windows over {rec.n_frames} frames")
for w in test_windows[:3]:
    print(f"  frames [{w.abs_core_start:4d}, {w.abs_core_end:4d}) core, "
          f"array shape {w.frames.shape}")

covered = [(w.abs_core_start, w.abs_core_end) for w in test_windows]
assert covered[0][0] == 0 and covered[-1][1] == rec.n_frames
assert all(a[1] == b[0] for a, b in zip(covered, covered[1:]))
print("cores tile the recording with no gap or overlap")

# windows that would run past an edge are padded by repeating the
# boundary frame, so every window has the same shape
first = test_windows[0]
assert (first.frames[0] == first.frames[ws.flank_frames]).all()
print(f"every window is {first.frames.shape[0]} frames "
      f"(virtual flank padding at the edges)")

# ---- train mode: dense slide ----

train_windows = make_windows(rec, ws, mode="train")
step = train_windows[1].abs_core_start - train_windows[0].abs_core_start
print(f"\n{len(train_windows)} train windows, slide {step} frames "
      f"({step / FS:g} s)")

# ---- targets: what the decoder should emit for one window ----

print("\nper-window targets (segments overlapping the core by >= 5 frames):")
for w in test_windows[:5]:
    target = derive_target_sequence(labeled.segments, w)
    labels = " ".join(t.label for t in target.tokens)
    print(f"  core [{w.abs_core_start:4d}, {w.abs_core_end:4d})  ->  {labels}")
