"""Stage 2 and the gamma sweep, end to end on a small corpus.

Trains a verifier, then for each gamma a fresh privatizer plus fresh gender
and activity attackers, and writes report.csv/json and three ROC figures.
"""

import logging
import sys

from gaitprivacy.data import SyntheticConfig
from gaitprivacy.evaluation import report_csv
from gaitprivacy.pipeline import ExperimentConfig, best_tradeoff, load_corpus, run_experiment, split_corpus

logging.basicConfig(level=logging.INFO, format="%(message)s")
out = sys.argv[1] if len(sys.argv) > 1 else "demo-sweep"

config = ExperimentConfig(n_eval_subjects=4, verifier_epochs=8, verifier_pairs_per_epoch=1024, val_pairs=500,
                          privatizer_epochs=3, privatizer_pairs_per_epoch=512, attacker_epochs=5,
                          eval_genuine_pairs=2000, eval_impostor_pairs=2000)
corpus = load_corpus(synthetic=SyntheticConfig(n_subjects=20, samples_per_subject_per_activity=600))
dev, ev = split_corpus(corpus, config.n_eval_subjects, config.seed)

result = run_experiment(dev, ev, config, run_dir=out)
print(report_csv(result.reports))
row = best_tradeoff(result)
if row is not None:
    print(f"lowest gender AUC within 0.10 of raw verification: gamma={row.weights.gamma} {row.tag}")
print("figures:", ", ".join(str(result.paths[k]) for k in ("verification", "gender", "activity")))
