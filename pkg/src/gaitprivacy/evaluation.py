"""ROC/AUC metrics, verification and attribute evaluation, and report emission."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy.stats import rankdata

from .data import WindowDataset, sample_pairs
from .losses import LossWeights

EVAL_PAIRS = (10_000, 10_000)
REPORT_COLUMNS = ("domain", "alpha", "beta", "gamma", "verification_auc", "gender_auc",
                  "activity_auc", "n_pairs", "n_windows")
TASKS = ("verification", "gender", "activity")


class MetricError(ValueError):
    pass


class LeakageError(RuntimeError):
    pass


@dataclass
class ROCCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray = field(default=None, repr=False)

    def area(self) -> float:
        """Trapezoidal area under the curve."""
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2))

    def to_dict(self) -> dict:
        return {"fpr": self.fpr.tolist(), "tpr": self.tpr.tolist()}


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise MetricError(f"{len(s)} scores but {len(y)} labels")
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("labels must be 0 or 1")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise MetricError("AUC undefined: need both positive and negative examples")
    return s, y


def roc_curve(scores, labels) -> ROCCurve:
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of tied scores
    cut = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[cut]
    fp = (cut + 1) - tp
    tpr = np.r_[0.0, tp / y.sum()]
    fpr = np.r_[0.0, fp / (~y).sum()]
    return ROCCurve(fpr, tpr, np.r_[np.inf, s[cut]])


def auc_score(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via the Mann-Whitney rank sum."""
    s, y = _check_binary(scores, labels)
    ranks = rankdata(s, method="average")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_and_auc(scores, labels) -> tuple[ROCCurve, float]:
    return roc_curve(scores, labels), auc_score(scores, labels)


def macro_ovr_auc(probability_vectors, labels) -> float:
    """Unweighted mean of one-vs-rest AUCs over the classes present."""
    p = np.asarray(probability_vectors, dtype=np.float64)
    y = np.asarray(labels).ravel()
    present = np.unique(y)
    if len(present) < 2:
        raise MetricError("macro AUC undefined: fewer than two classes present")
    return float(np.mean([auc_score(p[:, k], y == k) for k in present]))


def macro_ovr_roc(probability_vectors, labels, grid: int = 201) -> ROCCurve:
    """Per-class ROC curves averaged on a common FPR grid (for plotting)."""
    p = np.asarray(probability_vectors, dtype=np.float64)
    y = np.asarray(labels).ravel()
    fpr = np.linspace(0, 1, grid)
    curves = []
    for k in np.unique(y):
        c = roc_curve(p[:, k], y == k)
        # right-continuous staircase: take the highest TPR reached at each FPR
        curves.append(np.interp(fpr, c.fpr, c.tpr, right=1.0))
    tpr = np.mean(curves, axis=0)
    tpr[0] = 0.0
    return ROCCurve(np.r_[0.0, fpr], np.r_[0.0, tpr])


# -- batched inference ---------------------------------------------------------

def _batched(fn, values: np.ndarray, batch_size: int) -> torch.Tensor:
    outs = [fn(torch.as_tensor(values[i:i + batch_size])) for i in range(0, len(values), batch_size)]
    return torch.cat(outs) if outs else torch.zeros(0)


@torch.no_grad()
def transform_values(privatizer, values: np.ndarray, batch_size: int = 512) -> np.ndarray:
    if privatizer is None:
        return values
    was = privatizer.training
    privatizer.eval()
    try:
        return _batched(privatizer, values, batch_size).numpy()
    finally:
        privatizer.train(was)


@torch.no_grad()
def embed_values(verifier, values: np.ndarray, batch_size: int = 512) -> torch.Tensor:
    was = verifier.training
    verifier.eval()
    try:
        return _batched(verifier.embed, values, batch_size)
    finally:
        verifier.train(was)


@torch.no_grad()
def score_pairs(verifier, values: np.ndarray, idx_a, idx_b, batch_size: int = 512) -> np.ndarray:
    """Embed every window once, then score the indexed pairs."""
    emb = embed_values(verifier, values, batch_size)
    return verifier.score_embeddings(emb[torch.as_tensor(idx_a)], emb[torch.as_tensor(idx_b)]).numpy()


def _pair_budget(dataset: WindowDataset, n_genuine: int, n_impostor: int) -> tuple[int, int]:
    sizes = np.unique(dataset.subject_ids, return_counts=True)[1]
    gen_total = int((sizes * (sizes - 1) // 2).sum())
    n = len(dataset)
    return min(n_genuine, gen_total), min(n_impostor, n * (n - 1) // 2 - gen_total)


def evaluate_verification(verifier, privatizer, eval_dataset: WindowDataset, pair_spec=EVAL_PAIRS,
                          seed: int = 0, train_subjects=None) -> tuple[ROCCurve, float, int]:
    """Pair-level ROC/AUC on ``eval_dataset``; ``privatizer=None`` is the raw domain.

    Returns ``(curve, auc, n_pairs)``.
    """
    if train_subjects is not None:
        leaked = set(eval_dataset.subjects) & set(train_subjects)
        if leaked:
            raise LeakageError(f"evaluation subjects seen in training: {sorted(leaked)}")
    n_gen, n_imp = _pair_budget(eval_dataset, *pair_spec)
    pairs = sample_pairs(eval_dataset, n_gen, n_imp, seed)
    values = transform_values(privatizer, eval_dataset.values)
    scores = score_pairs(verifier, values, pairs.idx_a, pairs.idx_b)
    curve, auc = roc_and_auc(scores, pairs.labels)
    return curve, auc, len(pairs)


@torch.no_grad()
def attacker_probabilities(attacker, values: np.ndarray, batch_size: int = 512) -> np.ndarray:
    was = attacker.training
    attacker.eval()
    try:
        return _batched(lambda x: attacker.probabilities(attacker(x)), values, batch_size).numpy()
    finally:
        attacker.train(was)


def evaluate_attacker(attacker, dataset: WindowDataset, attribute: str, privatizer=None) -> tuple[ROCCurve, float]:
    values = transform_values(privatizer, dataset.values)
    probs = attacker_probabilities(attacker, values)
    if attribute == "gender":
        return roc_and_auc(probs, dataset.gender)
    if attribute == "activity":
        return macro_ovr_roc(probs, dataset.activity), macro_ovr_auc(probs, dataset.activity)
    raise ValueError(f"unknown attribute {attribute!r}")


# -- reports -------------------------------------------------------------------

@dataclass
class EvalReport:
    domain: str
    verification_auc: float
    gender_auc: float
    activity_auc: float
    weights: LossWeights | None = None
    n_pairs: int = 0
    n_windows: int = 0
    curves: dict[str, ROCCurve] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("verification_auc", "gender_auc", "activity_auc"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise MetricError(f"{name} must lie in [0, 1], got {v}")

    @property
    def label(self) -> str:
        if self.weights is None:
            return self.domain
        a, b, g = self.weights.as_tuple()
        return f"{self.domain} (a={a:g}, b={b:g}, g={g:g})"

    def row(self) -> dict:
        w = self.weights.as_tuple() if self.weights else ("", "", "")
        return dict(zip(REPORT_COLUMNS, (self.domain, *w, self.verification_auc, self.gender_auc,
                                         self.activity_auc, self.n_pairs, self.n_windows)))


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def report_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow([_fmt(v) for v in r.row().values()])
    return buf.getvalue()


def read_report_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def plot_roc(task: str, reports: Sequence[EvalReport], path) -> int:
    """Overlay the ROC curves of one task; returns the number of curves drawn."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "gaitprivacy"
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], color="0.8", lw=0.8)
    drawn = 0
    for i, r in enumerate(reports):
        c = r.curves.get(task)
        if c is None:
            continue
        drawn += 1
        style = "-" if i == 0 else "--"
        auc = getattr(r, f"{task}_auc")
        ax.plot(c.fpr, c.tpr, style, label=f"{r.label}: {100 * auc:.1f}% AUC")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(task.capitalize())
    ax.legend(loc="lower right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return drawn


def build_report(raw_eval: EvalReport, transformed_evals: Sequence[EvalReport], out_dir) -> dict[str, Path]:
    """Write ``report.csv``, ``report.json`` and ``roc_<task>.svg`` into ``out_dir``.

    The raw curve is drawn solid, transformed curves dashed.
    """
    if raw_eval is None:
        raise ValueError("raw-domain report is required")
    out = Path(out_dir)
    reports = [raw_eval, *transformed_evals]
    paths = {"csv": out / "report.csv", "json": out / "report.json"}
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths["csv"].write_text(report_csv(reports))
        payload = [{**r.row(), "roc": {k: c.to_dict() for k, c in r.curves.items()}} for r in reports]
        paths["json"].write_text(json.dumps(payload, indent=1))
        for task in TASKS:
            paths[task] = out / f"roc_{task}.svg"
            plot_roc(task, reports, paths[task])
    except OSError as exc:
        raise OSError(f"failed writing report to {out}: {exc}") from exc
    return paths
