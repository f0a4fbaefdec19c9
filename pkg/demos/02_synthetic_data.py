"""
Synthetic recordings, windows and folds
=======================================

The generator gives each subject its own background rhythm.  Seizure blocks
add 3 Hz spike-and-wave bursts on 13 channels around T5.
"""

import numpy as np

from advseizure.dataset import (
    DEFAULT_SEIZURE_CHANNELS,
    build_loo_splits,
    class_balance,
    generate_synthetic,
    make_window_set,
    split_fold,
)
from advseizure.montage import CHANNELS

recs = generate_synthetic(4, seconds=20.0, seed=1)
print("seizure channels:", ", ".join(DEFAULT_SEIZURE_CHANNELS))

# how much louder the seizure half is, per channel
rec = recs[0]
half = rec.n_samples // 2
ratio = rec.samples[half:].std(axis=0) / rec.samples[:half].std(axis=0)
for ch, r in sorted(zip(CHANNELS, ratio), key=lambda t: -t[1])[:5]:
    print(f"  {ch:4s} x{r:.1f}")

# 250-sample windows with 50% overlap; a window is seizure when > 12 channels
# are annotated for at least half of it
ws = make_window_set(recs)
print(len(ws), "windows; (normal, seizure) per subject:", class_balance(ws))

plan = build_loo_splits(np.unique(ws.subjects))
fold = plan.fold_for(2)
train, test = split_fold(ws, fold)
print(f"fold {fold.test_subject}: train on {fold.train_subjects}, {len(train)} / {len(test)} windows")
