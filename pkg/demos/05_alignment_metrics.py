"""Scoring predicted primitive sequences against ground truth.

Sequences are compared by Levenshtein alignment, and every aligned
position lands in exactly one bucket: a match is a true positive, a
substitution is a swap (one FN for the class swapped out, one FP for
the class swapped in), a deletion is a plain FN, an insertion a plain
FP. Sensitivity, FDR, F1 and AER all fall out of those tallies.
"""

import numpy as np

from primcount.dataset import PrimitiveClass
from primcount.evaluation import (
    AlignmentRecord,
    aggregate,
    align,
    confusion_matrix,
    f1_score,
    metrics,
    tally,
)

R, P, T, S, I = PrimitiveClass  # reach, reposition, transport, stabilize, idle

gt = [R, T, S, I, R, T]
pred = [R, S, S, I, P, R, T]

print("gt:  ", " ".join(t.label for t in gt))
print("pred:", " ".join(t.label for t in pred))

ops = align(gt, pred)
print("\nalignment:")
for op in ops:
    g = op.gt.label if op.gt is not None else "-"
    p = op.pred.label if op.pred is not None else "-"
    print(f"  {op.kind:12s} {g:12s} {p}")

t = tally(ops)
print(f"\nTP {t.total_tp}, FN {t.total_fn} "
      f"(deletions {t.fn_deletion.sum()}, swapped out {t.fn_swap_out.sum()}), "
      f"FP {t.total_fp} "
      f"(insertions {t.fp_insertion.sum()}, swapped in {t.fp_swap_in.sum()})")

m = metrics(t)
print(f"sensitivity {m.sensitivity:.3f}  fdr {m.fdr:.3f}  "
      f"f1 {m.f1:.3f}  aer {m.aer:.3f}")

# f1 can also be read as the harmonic mean of sensitivity and 1 - FDR
print(f"f1_score(sens, fdr) = {f1_score(m.sensitivity, m.fdr):.3f}")

# ---- confusion structure of the swaps ----

cm = confusion_matrix(t)
print("\nconfusion (rows gt, cols pred, diagonal = per-class sensitivity):")
with np.printoptions(precision=2, suppress=True):
    print(cm.matrix)

# ---- aggregating many scored units ----

records = [
    AlignmentRecord("s01", "desk", tally(align([R, T], [R, T]))),
    AlignmentRecord("s01", "shelf", tally(align([S, I, S], [S, S]))),
    AlignmentRecord("s02", "desk", tally(align([R, T, R], [R, P, R]))),
]
by_subject = aggregate(records, group_by="subject")
for key, gm in by_subject.items():
    print(f"subject {key}: micro f1 {gm.micro.f1:.3f}")
