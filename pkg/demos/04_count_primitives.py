"""Stitching window predictions into a session count.

Counting needs no model at all to demonstrate: windows built from the
ground-truth labels already show the one subtle step, which is merging
duplicate tokens where a primitive straddles two adjacent cores. One
token of lookback at each boundary is enough because test cores are
4 s and segments are longer than the minimum overlap.
"""

from dataclasses import replace

from primcount.dataset import PrimitiveClass, SynthSpec, synthesize_dataset
from primcount.decoding import count, counting_error, from_target, stitch_windows
from primcount.preprocess import WindowSpec, derive_target_sequence, make_windows

FS = 20.0

spec = SynthSpec(n_subjects=2, trials_per_subject=2, duration_s=60.0,
                 sample_rate_hz=FS, n_channels=6)
data = synthesize_dataset(spec, seed=7)
ws = WindowSpec(sample_rate_hz=FS)

labeled = data.recordings[0]
windows = make_windows(labeled.recording, ws, mode="test")
preds = [from_target(w, derive_target_sequence(labeled.segments, w))
         for w in windows]

# show a boundary merge on the first pair of windows
left, right = preds[0], preds[1]
print(f"window 0 tokens: {[t.label for t in left.tokens]}")
print(f"window 1 tokens: {[t.label for t in right.tokens]}")

session = stitch_windows(preds)
print(f"\nstitched session: {len(session.tokens)} tokens "
      f"(raw sum {sum(len(p.tokens) for p in preds)})")

# ---- counts vs ground truth ----

predicted = count(session)
true = labeled.true_counts()
print(f"\n{'class':10s} {'true':>5s} {'pred':>5s}")
for cls in PrimitiveClass:
    print(f"{cls.label:10s} {true[cls]:5d} {predicted[cls]:5d}")

err = counting_error(true, predicted)
print(f"\npooled counting error: {err.pooled:+.1f}%")
print("(sign convention: positive = undercount, negative = overcount)")

# oracle windows must round-trip exactly
assert predicted.counts == true

# an overcounting example: a model that fragments one primitive into
# two tokens ("reach reach" cannot happen in truth, so the extra token
# survives stitching)
broken = list(preds)
p = broken[3]
broken[3] = replace(p, tokens=(p.tokens[0],) + p.tokens)
err2 = counting_error(true, count(stitch_windows(broken)))
print(f"after fragmenting one token in window 3: {err2.pooled:+.1f}%")
