"""From synthetic recordings to Siamese pair batches.

Generates a small corpus, z-scores each recording, cuts 2 s windows with 75%
overlap, splits subjects into development/evaluation and draws balanced
genuine/impostor pairs.
"""

import numpy as np

from gaitprivacy.data import SyntheticConfig, build_windows, generate_synthetic, sample_pairs, split_by_subject

config = SyntheticConfig(n_subjects=10, samples_per_subject_per_activity=500)
streams = generate_synthetic(config)
print(f"{len(streams)} recordings, each {streams[0].channels.shape} at {config.sample_rate_hz:g} Hz")

windows = build_windows(streams)
print(f"{len(windows)} windows of shape {windows.values.shape[1:]}")
print("per-window channel means (should be near 0):", np.round(windows.values[0].mean(axis=1), 2))

dev, ev = split_by_subject(windows, 0.8, seed=0, balance_gender=True)
print(f"development subjects {dev.subjects}")
print(f"evaluation subjects  {ev.subjects} (male, female) = {ev.gender_counts()}")

pairs = sample_pairs(dev, 5, 5, seed=1)
for a, b, y in list(pairs)[:4]:
    print(f"  {a.subject_id} vs {b.subject_id} -> {'genuine' if y else 'impostor'}")
