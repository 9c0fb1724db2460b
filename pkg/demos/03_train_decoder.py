"""Train a small window-to-sequence ensemble and save it.

Each ensemble member sees a different subject fold, early-stops on its
validation alignment error rate, and carries its own normalization
stats. Kept deliberately tiny (4 subjects, hidden 32, 2 folds) so the
script finishes in about a minute; expect validation AER around 0.4 at
this scale, and see configs/desk.json for a more serious setup.
"""

from pathlib import Path

from primcount.dataset import (
    ClassSignatureParams,
    PrimitiveClass,
    SynthSpec,
    synthesize_dataset,
)
from primcount.model import (
    ModelConfig,
    TrainConfig,
    TrainingData,
    train_ensemble,
    save_ensemble,
    load_ensemble,
)
from primcount.preprocess import WindowSpec

FS = 20.0

spec = SynthSpec(n_subjects=4, trials_per_subject=2, duration_s=30.0,
                 sample_rate_hz=FS, n_channels=12,
                 signature=ClassSignatureParams(offset_scale=2.0, noise_std=0.05),
                 duration_ranges_s={c: (2.0, 3.5) for c in PrimitiveClass})
data = synthesize_dataset(spec, seed=1)
ws = WindowSpec(sample_rate_hz=FS)

mc = ModelConfig(input_dim=12, hidden_dim=32, embed_dim=16)
tc = TrainConfig(learning_rate=2e-3, batch_size=32, max_epochs=40, patience=15)

ensemble, logs = train_ensemble(
    TrainingData(data.recordings, ws), mc, tc, n_folds=2, seed=1
)

for i, log in enumerate(logs):
    best = min(log, key=lambda e: e.val_aer)
    print(f"member {i}: {len(log)} epochs, best val AER {best.val_aer:.3f} "
          f"at epoch {best.epoch} "
          f"(sens {best.val_sensitivity:.2f}, fdr {best.val_fdr:.2f})")

# ---- persistence round trip ----

out = Path("/tmp/primcount_demo_models")
paths = save_ensemble(out, ensemble)
print(f"\nsaved {len(paths)} members to {out}")

again = load_ensemble(paths)
a = ensemble.members[0][0].arrays()
b = again.members[0][0].arrays()
same = all((a[k] == b[k]).all() for k in a)
print(f"reloaded weights identical = {same}")
