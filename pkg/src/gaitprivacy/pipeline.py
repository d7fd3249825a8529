"""End-to-end experiment: corpus, stage 1, raw attackers, the gamma sweep and the report.

Everything is driven by one :class:`ExperimentConfig` whose fields can be read
from a flat config file (see :mod:`gaitprivacy.config`).
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attackers import AttackerConfig
from .checkpoint import parameter_checksum
from .data import SyntheticConfig, WindowDataset, build_windows, generate_synthetic, load_csv, split_by_subject
from .evaluation import EvalReport, build_report
from .losses import NOISE_BOUND
from .privatizer import AutoencoderConfig
from .seeding import derive_seed
from .trainer import SweepRow, TrainConfig, evaluate_domain, gamma_grid, run_sweep, train_verifier_stage1
from .verifier import VerifierConfig, build_verifier

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    n_eval_subjects: int = 10
    batch_size: int = 64
    val_pairs: int = 2000
    verifier_epochs: int = 30
    verifier_pairs_per_epoch: int = 4096
    verifier_learning_rate: float = 1e-3
    verifier_patience: int = 8
    privatizer_epochs: int = 15
    privatizer_pairs_per_epoch: int = 2048
    privatizer_learning_rate: float = 1e-3
    privatizer_patience: int = 5
    attacker_epochs: int = 15
    attacker_learning_rate: float = 1e-3
    attacker_patience: int = 5
    noise_bound: float = NOISE_BOUND
    gammas: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3)
    eval_genuine_pairs: int = 10_000
    eval_impostor_pairs: int = 10_000

    def stage(self, name: str) -> TrainConfig:
        """Training config of ``verifier``, ``privatizer`` or ``attacker``."""
        pairs = getattr(self, f"{name}_pairs_per_epoch", 4096)
        return TrainConfig(epochs=getattr(self, f"{name}_epochs"), batch_size=self.batch_size,
                           learning_rate=getattr(self, f"{name}_learning_rate"),
                           seed=derive_seed(self.seed, name), early_stop_patience=getattr(self, f"{name}_patience"),
                           pairs_per_epoch=pairs, val_pairs=self.val_pairs)

    @property
    def eval_pairs(self) -> tuple[int, int]:
        return self.eval_genuine_pairs, self.eval_impostor_pairs


def load_corpus(dataset=None, synthetic: SyntheticConfig | None = None, normalize: bool = True) -> WindowDataset:
    """Windows from a CSV file, or from the synthetic generator when ``dataset`` is None."""
    streams = load_csv(dataset) if dataset is not None else generate_synthetic(synthetic or SyntheticConfig())
    return build_windows(streams, normalize=normalize)


def split_corpus(corpus: WindowDataset, n_eval_subjects: int, seed: int) -> tuple[WindowDataset, WindowDataset]:
    """Subject-disjoint development/evaluation split with a gender-balanced evaluation side."""
    n = len(corpus.subjects)
    if not 0 < n_eval_subjects < n:
        raise ValueError(f"n_eval_subjects must be in (0, {n}), got {n_eval_subjects}")
    return split_by_subject(corpus, 1 - n_eval_subjects / n, derive_seed(seed, "split"), balance_gender=True)


def train_stage1(dev: WindowDataset, config: ExperimentConfig, ev: WindowDataset | None = None, run_dir=None):
    verifier = build_verifier(VerifierConfig(), derive_seed(config.seed, "verifier-init"))
    verifier, history = train_verifier_stage1(
        verifier, dev, config.stage("verifier"),
        checkpoint_dir=Path(run_dir) / "verifier" if run_dir else None,
        exclude_subjects=ev.subjects if ev is not None else None)
    if run_dir:
        history.write_csv(Path(run_dir) / "verifier" / "history.csv")
    return verifier.freeze(), history


@dataclass
class ExperimentResult:
    raw: EvalReport
    rows: list[SweepRow]
    verifier_checksum: tuple[str, str]
    paths: dict[str, Path] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)

    @property
    def reports(self) -> list[EvalReport]:
        return [self.raw, *(r.report for r in self.rows)]


def evaluate_raw(verifier, dev, ev, config: ExperimentConfig, run_dir=None) -> EvalReport:
    report, _ = evaluate_domain(verifier, None, dev, ev, config.stage("attacker"), derive_seed(config.seed, "raw"),
                                eval_pairs=config.eval_pairs, run_dir=Path(run_dir) / "raw" if run_dir else None,
                                pair_seed=config.seed)
    return report


def sweep(verifier, dev, ev, config: ExperimentConfig, run_dir=None) -> list[SweepRow]:
    base = config.stage("privatizer")
    return run_sweep(gamma_grid(config.gammas), verifier, dev, ev, base, config.stage("attacker"),
                     AutoencoderConfig(), config.noise_bound, config.eval_pairs,
                     run_dir=Path(run_dir) / "sweep" if run_dir else None)


def run_experiment(dev: WindowDataset, ev: WindowDataset, config: ExperimentConfig = ExperimentConfig(),
                   run_dir=None, verifier=None) -> ExperimentResult:
    """Stage 1 (unless ``verifier`` is given), raw evaluation, sweep and report."""
    seconds = {}
    t0 = time.perf_counter()
    if verifier is None:
        verifier, _ = train_stage1(dev, config, ev, run_dir)
    elif not verifier.frozen:
        verifier.freeze()
    seconds["stage1"] = time.perf_counter() - t0
    before = parameter_checksum(verifier)

    t0 = time.perf_counter()
    raw = evaluate_raw(verifier, dev, ev, config, run_dir)
    seconds["raw"] = time.perf_counter() - t0
    log.info("raw: verification %.4f gender %.4f activity %.4f",
             raw.verification_auc, raw.gender_auc, raw.activity_auc)

    t0 = time.perf_counter()
    rows = sweep(verifier, dev, ev, config, run_dir)
    seconds["sweep"] = time.perf_counter() - t0
    for r in rows:
        log.info("gamma %.2f: verification %.4f gender %.4f activity %.4f",
                 r.weights.gamma, r.verification_auc, r.gender_auc, r.activity_auc)

    result = ExperimentResult(raw, rows, (before, parameter_checksum(verifier)), seconds=seconds)
    if run_dir:
        result.paths = build_report(raw, [r.report for r in rows], run_dir)
    return result


def best_tradeoff(result: ExperimentResult, verification_margin: float = 0.10):
    """The sweep row with the lowest gender AUC among those whose verification
    AUC stays within ``verification_margin`` of raw."""
    ok = [r for r in result.rows if r.verification_auc >= result.raw.verification_auc - verification_margin]
    return min(ok, key=lambda r: (r.gender_auc, r.activity_auc), default=None)


def config_echo(config) -> dict:
    out = {}
    for k, v in dataclasses.asdict(config).items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def gamma_gender_spearman(rows) -> float:
    """Spearman rank correlation between gamma and transformed gender AUC."""
    from scipy.stats import spearmanr

    if len(rows) < 2:
        return float("nan")
    g = np.array([r.weights.gamma for r in rows])
    a = np.array([r.gender_auc for r in rows])
    if np.ptp(a) == 0:
        return 0.0
    return float(spearmanr(g, a).statistic)
