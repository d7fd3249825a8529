"""Two-stage training, attacker training and the loss-weight sweep.

Stage 1 fits the verifier on raw development pairs with binary cross-entropy.
Stage 2 freezes it and fits the privatizer on ``alpha*task + beta*content +
gamma*style``. Every epoch draws a fresh balanced genuine/impostor pair set
whose seed is derived from ``(config.seed, stage, epoch)``.
"""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .attackers import ACTIVITY_CLASSES, GENDER_CLASSES, AttackerConfig, build_attacker
from .checkpoint import parameter_checksum, save_checkpoint
from .data import WindowDataset, sample_pairs, split_by_subject
from .evaluation import (EvalReport, auc_score, evaluate_attacker,
                         evaluate_verification, macro_ovr_auc, transform_values)
from .losses import (NOISE_BOUND, LossError, LossWeights, content_loss, gram, gram_distance, noise_like,
                     task_loss, total_loss)
from .privatizer import AutoencoderConfig, build_privatizer
from .seeding import derive_seed, torch_generator
from .verifier import CONTENT_TAP, STYLE_TAP

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "l_total", "l_task", "l_content", "l_style", "val_loss", "val_auc", "seconds")
TRAIN_FRACTION = 0.85


class ContractError(RuntimeError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    early_stop_patience: int = 10
    pairs_per_epoch: int = 4096
    val_pairs: int = 2000
    debug: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.pairs_per_epoch < 2 or self.val_pairs < 2:
            raise ValueError("epochs >= 0, batch_size >= 1, pairs_per_epoch >= 2 and val_pairs >= 2 required")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    l_total: float
    l_task: float
    l_content: float
    l_style: float
    val_loss: float
    val_auc: float
    seconds: float = field(default=0.0, compare=False)


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    # (l_total, l_task, l_content, l_style) per optimisation step
    steps: list[tuple[float, float, float, float]] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:-1]] + [f"{r.seconds:.3f}"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_csv())


def _optimizer(params, config: TrainConfig):
    if config.optimizer == "adam":
        return torch.optim.Adam(params, lr=config.learning_rate)
    return torch.optim.SGD(params, lr=config.learning_rate)


def _check_exclusion(dataset: WindowDataset, exclude_subjects) -> None:
    if exclude_subjects is None:
        return
    leaked = set(dataset.subjects) & set(exclude_subjects)
    if leaked:
        raise ContractError(f"evaluation subjects present in training data: {sorted(leaked)}")


def _train_val_split(dataset: WindowDataset, seed: int, balance_gender: bool = False):
    if len(dataset.subjects) < 3:
        raise ContractError(f"need >= 3 development subjects for a train/validation split, "
                            f"got {len(dataset.subjects)}")
    # validation needs two subjects to form impostor pairs
    fraction = min(TRAIN_FRACTION, 1 - 2 / len(dataset.subjects))
    try:
        return split_by_subject(dataset, fraction, seed, balance_gender=balance_gender,
                                roles=("train", "validation"))
    except ValueError:
        if not balance_gender:
            raise
        return split_by_subject(dataset, fraction, seed, roles=("train", "validation"))


def _balanced_pairs(dataset: WindowDataset, n: int, seed: int):
    n_gen = n // 2
    return sample_pairs(dataset, n_gen, n - n_gen, seed)


class _BestKeeper:
    def __init__(self, model, patience: int):
        self.model = model
        self.patience = patience
        self.best = math.inf
        self.best_epoch = None
        self.state = copy.deepcopy(model.state_dict())
        self.bad = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad = val_loss, epoch, 0
            self.state = copy.deepcopy(self.model.state_dict())
            return False
        self.bad += 1
        return self.bad > self.patience

    def restore(self):
        self.model.load_state_dict(self.state)


def _save(ckpt_dir, name, model, stage, seed, metadata=None):
    if ckpt_dir is not None:
        save_checkpoint(Path(ckpt_dir) / name, model, stage, seed, metadata)


def _finite(value: float, where: str, keeper: _BestKeeper, ckpt_dir):
    if not math.isfinite(value):
        ref = f"{Path(ckpt_dir) / 'best.ckpt'}" if ckpt_dir else f"in-memory best state (epoch {keeper.best_epoch})"
        keeper.restore()
        raise TrainingDiverged(f"non-finite loss during {where}; last good checkpoint: {ref}")


# -- stage 1 -------------------------------------------------------------------

def _verifier_val(verifier, val_values, pairs) -> tuple[float, float]:
    verifier.eval()
    with torch.no_grad():
        xa = torch.as_tensor(val_values[pairs.idx_a])
        xb = torch.as_tensor(val_values[pairs.idx_b])
        p = torch.cat([verifier(xa[i:i + 512], xb[i:i + 512]) for i in range(0, len(xa), 512)])
        y = torch.as_tensor(pairs.labels)
        return float(task_loss(y, p)), auc_score(p.numpy(), pairs.labels)


def train_verifier_stage1(verifier, dev_dataset: WindowDataset, config: TrainConfig = TrainConfig(),
                          checkpoint_dir=None, exclude_subjects=None):
    """Fit the verifier on raw development data; returns ``(verifier, history)``.

    The best-validation-loss weights are restored at the end.
    """
    if getattr(verifier, "frozen", False):
        raise ContractError("stage 1 needs an unfrozen verifier")
    if len(dev_dataset.subjects) < 2:
        raise ContractError("stage 1 needs >= 2 development subjects")
    _check_exclusion(dev_dataset, exclude_subjects)
    history = TrainHistory()
    if config.epochs == 0:
        return verifier, history

    train, val = _train_val_split(dev_dataset, derive_seed(config.seed, "stage1", "split"))
    val_pairs = _balanced_pairs(val, config.val_pairs, derive_seed(config.seed, "stage1", "val"))
    torch.manual_seed(derive_seed(config.seed, "stage1", "torch"))
    opt = _optimizer(verifier.parameters(), config)
    keeper = _BestKeeper(verifier, config.early_stop_patience)
    allowed = set(train.subjects)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        verifier.train()
        pairs = _balanced_pairs(train, config.pairs_per_epoch, derive_seed(config.seed, "stage1", "pairs", epoch))
        losses = []
        for i in range(0, len(pairs), config.batch_size):
            ia, ib = pairs.idx_a[i:i + config.batch_size], pairs.idx_b[i:i + config.batch_size]
            if config.debug:
                assert set(train.subject_ids[ia]) | set(train.subject_ids[ib]) <= allowed
            y = torch.as_tensor(pairs.labels[i:i + config.batch_size], dtype=torch.float32)
            p = verifier(torch.as_tensor(train.values[ia]), torch.as_tensor(train.values[ib]))
            loss = task_loss(y, p)
            _finite(loss.item(), f"stage 1 epoch {epoch}", keeper, checkpoint_dir)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            history.steps.append((losses[-1], losses[-1], 0.0, 0.0))
        val_loss, val_auc = _verifier_val(verifier, val.values, val_pairs)
        _finite(val_loss, f"stage 1 validation epoch {epoch}", keeper, checkpoint_dir)
        mean = float(np.mean(losses))
        history.records.append(EpochRecord(epoch, mean, mean, 0.0, 0.0, val_loss, val_auc,
                                           time.perf_counter() - t0))
        log.info("stage1 epoch %d loss %.4f val_loss %.4f val_auc %.4f", epoch, mean, val_loss, val_auc)
        stop = keeper.update(epoch, val_loss)
        if keeper.best_epoch == epoch:
            _save(checkpoint_dir, "best.ckpt", verifier, "verifier", config.seed)
        _save(checkpoint_dir, "last.ckpt", verifier, "verifier", config.seed)
        if stop:
            break
    keeper.restore()
    history.best_epoch = keeper.best_epoch
    verifier.eval()
    return verifier, history


# -- stage 2 -------------------------------------------------------------------

def privacy_losses(privatizer, verifier, xa, xb, y, noise_a, noise_b):
    """``(l_task, l_content, l_style)`` for one batch of raw pairs.

    Content and style are averaged over both branches.
    """
    x = torch.cat([xa, xb])
    x_hat = privatizer(x)
    with torch.no_grad():
        content_ref = verifier.conv_features(x, CONTENT_TAP)[CONTENT_TAP]
        style_ref = gram(verifier.conv_features(torch.cat([noise_a, noise_b]), STYLE_TAP)[STYLE_TAP])
    feats = verifier.conv_features(x_hat, CONTENT_TAP)
    emb = verifier.embed_from_conv(feats[CONTENT_TAP])
    n = len(xa)
    p = verifier.score_embeddings(emb[:n], emb[n:])
    l_task = task_loss(y, p)
    l_content = content_loss(content_ref, feats[CONTENT_TAP])
    l_style = gram_distance(gram(feats[STYLE_TAP]), style_ref)
    return l_task, l_content, l_style, p


def train_privatizer_stage2(privatizer, frozen_verifier, dev_dataset: WindowDataset, weights: LossWeights,
                            config: TrainConfig = TrainConfig(), noise_bound: float = NOISE_BOUND,
                            checkpoint_dir=None, exclude_subjects=None):
    """Fit the privatizer against the frozen verifier; returns ``(privatizer, history)``."""
    if not getattr(frozen_verifier, "frozen", False):
        raise ContractError("stage 2 requires a frozen verifier (call .freeze() first)")
    if not isinstance(weights, LossWeights):
        raise LossError("weights must be a LossWeights instance")
    _check_exclusion(dev_dataset, exclude_subjects)
    verifier = frozen_verifier
    verifier.eval()
    checksum = parameter_checksum(verifier)
    history = TrainHistory()
    if config.epochs == 0:
        return privatizer, history

    train, val = _train_val_split(dev_dataset, derive_seed(config.seed, "stage2", "split"))
    val_pairs = _balanced_pairs(val, config.val_pairs, derive_seed(config.seed, "stage2", "val"))
    torch.manual_seed(derive_seed(config.seed, "stage2", "torch"))
    noise_gen = torch_generator(config.seed, "stage2", "noise")
    opt = _optimizer(privatizer.parameters(), config)
    keeper = _BestKeeper(privatizer, config.early_stop_patience)
    meta = {"alpha": weights.alpha, "beta": weights.beta, "gamma": weights.gamma, "noise_bound": noise_bound}
    allowed = set(train.subjects)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        privatizer.train()
        pairs = _balanced_pairs(train, config.pairs_per_epoch, derive_seed(config.seed, "stage2", "pairs", epoch))
        sums = np.zeros(4)
        n_steps = 0
        for i in range(0, len(pairs), config.batch_size):
            ia, ib = pairs.idx_a[i:i + config.batch_size], pairs.idx_b[i:i + config.batch_size]
            if config.debug:
                assert set(train.subject_ids[ia]) | set(train.subject_ids[ib]) <= allowed
            xa, xb = torch.as_tensor(train.values[ia]), torch.as_tensor(train.values[ib])
            y = torch.as_tensor(pairs.labels[i:i + config.batch_size], dtype=torch.float32)
            na, nb = noise_like(xa, noise_gen, noise_bound), noise_like(xb, noise_gen, noise_bound)
            lt, lc, ls, _ = privacy_losses(privatizer, verifier, xa, xb, y, na, nb)
            total = total_loss(weights, lt, lc, ls)
            _finite(total.item(), f"stage 2 epoch {epoch}", keeper, checkpoint_dir)
            opt.zero_grad()
            total.backward()
            opt.step()
            step = (total.item(), lt.item(), lc.item(), ls.item())
            history.steps.append(step)
            sums += step
            n_steps += 1
        val_loss, val_auc = _privatizer_val(privatizer, verifier, val, val_pairs, weights, noise_bound,
                                            derive_seed(config.seed, "stage2", "val-noise"))
        _finite(val_loss, f"stage 2 validation epoch {epoch}", keeper, checkpoint_dir)
        if parameter_checksum(verifier) != checksum:
            raise ContractError(f"verifier parameters changed during stage 2 epoch {epoch}")
        m = sums / n_steps
        history.records.append(EpochRecord(epoch, *m, val_loss, val_auc, time.perf_counter() - t0))
        log.info("stage2 %s epoch %d total %.4f task %.4f content %.4f style %.4f val_loss %.4f val_auc %.4f",
                 weights.as_tuple(), epoch, *m, val_loss, val_auc)
        stop = keeper.update(epoch, val_loss)
        if keeper.best_epoch == epoch:
            _save(checkpoint_dir, "best.ckpt", privatizer, "privatizer", config.seed, meta)
        _save(checkpoint_dir, "last.ckpt", privatizer, "privatizer", config.seed, meta)
        if stop:
            break
    keeper.restore()
    history.best_epoch = keeper.best_epoch
    privatizer.eval()
    return privatizer, history


def _privatizer_val(privatizer, verifier, val, pairs, weights, noise_bound, seed):
    privatizer.eval()
    gen = torch_generator(seed)
    totals, probs = [], []
    with torch.no_grad():
        for i in range(0, len(pairs), 256):
            xa = torch.as_tensor(val.values[pairs.idx_a[i:i + 256]])
            xb = torch.as_tensor(val.values[pairs.idx_b[i:i + 256]])
            y = torch.as_tensor(pairs.labels[i:i + 256], dtype=torch.float32)
            lt, lc, ls, p = privacy_losses(privatizer, verifier, xa, xb, y,
                                           noise_like(xa, gen, noise_bound), noise_like(xb, gen, noise_bound))
            totals.append(float(total_loss(weights, lt, lc, ls)) * len(y))
            probs.append(p)
    return sum(totals) / len(pairs), auc_score(torch.cat(probs).numpy(), pairs.labels)


# -- attackers -----------------------------------------------------------------

ATTRIBUTES = {"gender": GENDER_CLASSES, "activity": ACTIVITY_CLASSES}


def _attacker_loss(attacker, logits, y):
    if attacker.config.binary:
        return F.binary_cross_entropy_with_logits(logits[:, 1] - logits[:, 0], y.float())
    return F.cross_entropy(logits, y)


def _attacker_score(attacker, values, labels) -> tuple[float, float]:
    attacker.eval()
    with torch.no_grad():
        logits = torch.cat([attacker(torch.as_tensor(values[i:i + 512])) for i in range(0, len(values), 512)])
        loss = float(_attacker_loss(attacker, logits, torch.as_tensor(labels)))
        probs = attacker.probabilities(logits).numpy()
    if attacker.config.binary:
        return loss, auc_score(probs, labels)
    return loss, macro_ovr_auc(probs, labels)


def train_attacker(attacker, dataset: WindowDataset, attribute: str, config: TrainConfig = TrainConfig(),
                   privatizer=None, checkpoint_dir=None, exclude_subjects=None):
    """Fit an attribute attacker from scratch on raw (``privatizer=None``) or
    transformed windows; returns ``(attacker, history)``."""
    if attribute not in ATTRIBUTES:
        raise ValueError(f"attribute must be one of {sorted(ATTRIBUTES)}, got {attribute!r}")
    if attacker.config.n_classes != ATTRIBUTES[attribute]:
        raise ContractError(f"{attribute} attacker needs {ATTRIBUTES[attribute]} classes, "
                            f"model has {attacker.config.n_classes}")
    if attribute == "gender":
        males, females = dataset.gender_counts()
        if males != females:
            raise ContractError(f"gender attacker needs a gender-balanced dataset, got "
                                f"{males} male / {females} female subjects")
    _check_exclusion(dataset, exclude_subjects)
    history = TrainHistory()
    if config.epochs == 0:
        return attacker, history

    stage = f"attacker:{attribute}:{'raw' if privatizer is None else 'transformed'}"
    train, val = _train_val_split(dataset, derive_seed(config.seed, stage, "split"), balance_gender=True)
    label_of = (lambda d: d.gender) if attribute == "gender" else (lambda d: d.activity)
    x_train = transform_values(privatizer, train.values)
    x_val = transform_values(privatizer, val.values)
    y_train, y_val = label_of(train), label_of(val)
    torch.manual_seed(derive_seed(config.seed, stage, "torch"))
    opt = _optimizer(attacker.parameters(), config)
    keeper = _BestKeeper(attacker, config.early_stop_patience)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        attacker.train()
        order = np.random.default_rng(derive_seed(config.seed, stage, "order", epoch)).permutation(len(x_train))
        losses = []
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            if len(idx) < 2:
                continue  # batch-norm needs more than one row
            logits = attacker(torch.as_tensor(x_train[idx]))
            loss = _attacker_loss(attacker, logits, torch.as_tensor(y_train[idx]))
            _finite(loss.item(), f"{stage} epoch {epoch}", keeper, checkpoint_dir)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            history.steps.append((losses[-1], losses[-1], 0.0, 0.0))
        val_loss, val_auc = _attacker_score(attacker, x_val, y_val)
        mean = float(np.mean(losses))
        history.records.append(EpochRecord(epoch, mean, mean, 0.0, 0.0, val_loss, val_auc,
                                           time.perf_counter() - t0))
        log.info("%s epoch %d loss %.4f val_loss %.4f val_auc %.4f", stage, epoch, mean, val_loss, val_auc)
        stop = keeper.update(epoch, val_loss)
        if keeper.best_epoch == epoch:
            _save(checkpoint_dir, "best.ckpt", attacker, stage, config.seed)
        _save(checkpoint_dir, "last.ckpt", attacker, stage, config.seed)
        if stop:
            break
    keeper.restore()
    history.best_epoch = keeper.best_epoch
    attacker.eval()
    return attacker, history


# -- sweep ---------------------------------------------------------------------

REFERENCE_OPTIMA = {
    (0.40, 0.40, 0.20): "reference optimum: MotionSense+MobiAct",
    (0.40, 0.50, 0.10): "reference optimum: OU-ISIR",
}


def gamma_grid(gammas=(0.0, 0.1, 0.2, 0.3)) -> list[LossWeights]:
    """Triples with alpha = beta = (1 - gamma) / 2."""
    return [LossWeights((1 - g) / 2, (1 - g) / 2, g) for g in gammas]


def validate_grid(grid) -> list[LossWeights]:
    out = []
    for w in grid:
        out.append(w if isinstance(w, LossWeights) else LossWeights(*w))
    return out


@dataclass
class SweepRow:
    weights: LossWeights
    verification_auc: float
    gender_auc: float
    activity_auc: float
    tag: str = ""
    report: EvalReport | None = field(default=None, repr=False)
    histories: dict[str, TrainHistory] = field(default_factory=dict, repr=False)


def _tag(w: LossWeights) -> str:
    for key, tag in REFERENCE_OPTIMA.items():
        if np.allclose(w.as_tuple(), key, atol=1e-9):
            return tag
    return ""


def run_sweep(grid, verifier, dev_dataset: WindowDataset, eval_dataset: WindowDataset,
              base_config: TrainConfig = TrainConfig(), attacker_config: TrainConfig | None = None,
              autoencoder_config: AutoencoderConfig = AutoencoderConfig(), noise_bound: float = NOISE_BOUND,
              eval_pairs=(10_000, 10_000), run_dir=None) -> list[SweepRow]:
    """Train a fresh privatizer and fresh attackers per weight triple and
    evaluate all three tasks on the transformed evaluation set.

    Rows come back sorted by gamma.
    """
    grid = validate_grid(grid)
    if not grid:
        return []
    if not getattr(verifier, "frozen", False):
        raise ContractError("run_sweep needs the stage-1 verifier, frozen")
    attacker_config = attacker_config or base_config
    _check_exclusion(dev_dataset, eval_dataset.subjects)
    rows = []
    for w in grid:
        key = f"a{w.alpha:g}_b{w.beta:g}_g{w.gamma:g}"
        sub = Path(run_dir) / key if run_dir else None
        seed = derive_seed(base_config.seed, "sweep", key)
        privatizer = build_privatizer(autoencoder_config, seed)
        privatizer, h2 = train_privatizer_stage2(
            privatizer, verifier, dev_dataset, w, _reseed(base_config, seed), noise_bound,
            checkpoint_dir=sub / "privatizer" if sub else None)
        report, hists = evaluate_domain(verifier, privatizer, dev_dataset, eval_dataset, attacker_config,
                                        seed, weights=w, eval_pairs=eval_pairs, run_dir=sub,
                                        pair_seed=base_config.seed)
        hists["privatizer"] = h2
        rows.append(SweepRow(w, report.verification_auc, report.gender_auc, report.activity_auc,
                             _tag(w), report, hists))
    rows.sort(key=lambda r: r.weights.gamma)
    return rows


def _reseed(config: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig(**{**config.__dict__, "seed": seed})


def evaluate_domain(verifier, privatizer, dev_dataset, eval_dataset, attacker_config: TrainConfig, seed: int,
                    weights: LossWeights | None = None, eval_pairs=(10_000, 10_000), run_dir=None,
                    pair_seed: int = 0):
    """Retrain both attackers on the (raw or transformed) development set and
    evaluate verification/gender/activity on the evaluation set.

    Verification pairs depend only on ``pair_seed`` so that raw and transformed
    domains are scored on the same pairs.
    """
    domain = "raw" if privatizer is None else "transformed"
    curves, aucs, hists = {}, {}, {}
    curves["verification"], aucs["verification"], n_pairs = evaluate_verification(
        verifier, privatizer, eval_dataset, eval_pairs, derive_seed(pair_seed, "eval-pairs"),
        train_subjects=dev_dataset.subjects)
    for attribute, n_classes in ATTRIBUTES.items():
        att = build_attacker(AttackerConfig(n_classes), derive_seed(seed, "attacker", attribute))
        att, hists[attribute] = train_attacker(
            att, dev_dataset, attribute, _reseed(attacker_config, derive_seed(seed, "attacker-train", attribute)),
            privatizer=privatizer,
            checkpoint_dir=Path(run_dir) / f"attacker-{attribute}" if run_dir else None,
            exclude_subjects=eval_dataset.subjects)
        curves[attribute], aucs[attribute] = evaluate_attacker(att, eval_dataset, attribute, privatizer)
    report = EvalReport(domain, aucs["verification"], aucs["gender"], aucs["activity"], weights,
                        n_pairs, len(eval_dataset), curves)
    return report, hists
