"""Stage 1: train the Siamese CNN-BiLSTM verifier on raw synthetic windows.

A short run on a small corpus; the acceptance suite runs the full-size
version.
"""

import logging

from gaitprivacy.data import SyntheticConfig
from gaitprivacy.evaluation import evaluate_verification
from gaitprivacy.pipeline import ExperimentConfig, load_corpus, split_corpus, train_stage1

logging.basicConfig(level=logging.INFO, format="%(message)s")

config = ExperimentConfig(n_eval_subjects=4, verifier_epochs=8, verifier_pairs_per_epoch=1024, val_pairs=500,
                          eval_genuine_pairs=2000, eval_impostor_pairs=2000)
corpus = load_corpus(synthetic=SyntheticConfig(n_subjects=20, samples_per_subject_per_activity=600))
dev, ev = split_corpus(corpus, config.n_eval_subjects, config.seed)

verifier, history = train_stage1(dev, config, ev)
print(history.to_csv())
_, auc, n = evaluate_verification(verifier, None, ev, config.eval_pairs, train_subjects=dev.subjects)
print(f"evaluation pair AUC on {len(ev.subjects)} unseen subjects ({n} pairs): {auc:.3f}")
