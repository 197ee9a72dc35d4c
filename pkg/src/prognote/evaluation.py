"""Evaluation: dataset splits, ranking metrics, and a lexical baseline.

The ROC AUC here is the exact Mann-Whitney statistic computed with
midranks, so tied scores contribute half a concordant pair.  The
baseline is a bag-of-words logistic regression trained by deterministic
full-batch gradient descent, giving the contextual model something
non-trivial to beat.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolation, InputError, MetricError

TEST_FRACTION = 0.2
VAL_FRACTION_OF_REMAINDER = 0.2
MIN_PER_CLASS = 5


@dataclass(frozen=True)
class SplitPlan:
    """Index triples into an example list, disjoint and exhaustive."""

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def __post_init__(self):
        all_idx = list(self.train) + list(self.val) + list(self.test)
        if len(set(all_idx)) != len(all_idx):
            raise ContractViolation("split parts overlap")


def split_dataset(labels: Sequence[int], seed: int) -> SplitPlan:
    """Stratified train/val/test split, rounded half-up per class.

    For each class, ``int(n * 0.2 + 0.5)`` examples go to test; a fifth
    of what remains (same rounding) goes to validation; the rest train.
    """
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(seed))
    train: list[int] = []
    val: list[int] = []
    test: list[int] = []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < MIN_PER_CLASS:
            raise InputError(
                f"class {cls} has {len(idx)} examples; need at least {MIN_PER_CLASS}"
            )
        shuffled = idx.copy()
        rng.shuffle(shuffled)
        n_test = int(len(shuffled) * TEST_FRACTION + 0.5)
        remainder = len(shuffled) - n_test
        n_val = int(remainder * VAL_FRACTION_OF_REMAINDER + 0.5)
        test.extend(int(i) for i in shuffled[:n_test])
        val.extend(int(i) for i in shuffled[n_test : n_test + n_val])
        train.extend(int(i) for i in shuffled[n_test + n_val :])
    plan = SplitPlan(
        train=tuple(sorted(train)), val=tuple(sorted(val)), test=tuple(sorted(test))
    )
    if len(plan.train) + len(plan.val) + len(plan.test) != len(labels):
        raise ContractViolation("split does not cover the dataset")
    return plan


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """ROC AUC via midranks (exact Mann-Whitney, ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined with a single class")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        midrank = 0.5 * (i + j) + 1.0
        ranks[order[i : j + 1]] = midrank
        i = j + 1
    rank_sum_pos = float(ranks[labels == 1].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def f1_at(
    scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5
) -> tuple[float, float, float, dict[str, int]]:
    """Precision, recall, F1 and the confusion counts at a threshold.

    Predictions are ``score >= threshold``.  Empty denominators yield
    0.0 rather than an error so degenerate epochs stay comparable.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    preds = (scores >= threshold).astype(np.int64)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1, {"tp": tp, "fp": fp, "fn": fn, "tn": tn}


@dataclass(frozen=True)
class Metrics:
    auc: float
    f1: float
    precision: float
    recall: float
    confusion: dict[str, int]

    def as_dict(self) -> dict:
        return {
            "auc": self.auc,
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "confusion": dict(self.confusion),
        }


def evaluate(
    scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5
) -> Metrics:
    precision, recall, f1, confusion = f1_at(scores, labels, threshold)
    return Metrics(
        auc=auc(scores, labels),
        f1=f1,
        precision=precision,
        recall=recall,
        confusion=confusion,
    )


# ---------------------------------------------------------------------------
# Bag-of-words logistic regression baseline
# ---------------------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z]+")

BOW_MIN_FREQ = 5
BOW_MAX_FEATURES = 5000


def build_bow_vocab(
    texts: Sequence[str],
    min_freq: int = BOW_MIN_FREQ,
    max_features: int = BOW_MAX_FEATURES,
) -> list[str]:
    """Frequency-ordered lowercase word list (ties alphabetical)."""
    counts: dict[str, int] = {}
    for text in texts:
        for word in _WORD_RE.findall(text.lower()):
            counts[word] = counts.get(word, 0) + 1
    kept = [w for w, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda w: (-counts[w], w))
    return kept[:max_features]


def bow_features(texts: Sequence[str], vocab: Sequence[str]) -> np.ndarray:
    """Raw count matrix, one row per text."""
    index = {w: i for i, w in enumerate(vocab)}
    mat = np.zeros((len(texts), len(vocab)), dtype=np.float64)
    for row, text in enumerate(texts):
        for word in _WORD_RE.findall(text.lower()):
            col = index.get(word)
            if col is not None:
                mat[row, col] += 1.0
    return mat


@dataclass
class LogRegModel:
    vocab: list[str]
    weights: np.ndarray  # (D + 1,), bias last
    n_iterations: int = 0
    final_grad_norm: float = 0.0


def _logreg_loss_grad(
    weights: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    sample_weights: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray]:
    z = features @ weights[:-1] + weights[-1]
    # log(1 + exp(z)) - y*z, computed stably
    losses = np.logaddexp(0.0, z) - labels * z
    total_w = sample_weights.sum()
    loss = float((sample_weights * losses).sum() / total_w)
    loss += 0.5 * l2 * float(weights[:-1] @ weights[:-1])
    probs = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    residual = sample_weights * (probs - labels) / total_w
    grad = np.empty_like(weights)
    grad[:-1] = features.T @ residual + l2 * weights[:-1]
    grad[-1] = residual.sum()
    return loss, grad


def train_logreg(
    features: np.ndarray,
    labels: Sequence[int],
    l2: float = 1e-3,
    max_iterations: int = 500,
    tolerance: float = 1e-6,
) -> np.ndarray:
    """Full-batch gradient descent with a backtracking line search.

    Class-balanced sample weights ``n / (2 * n_c)`` mirror the weighting
    used by the contextual model, and the bias stays unregularized.
    Returns the ``(D + 1,)`` weight vector with the bias last.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    n_pos = float((labels == 1).sum())
    n_neg = float((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("baseline training needs both classes")
    sample_weights = np.where(labels == 1, n / (2 * n_pos), n / (2 * n_neg))

    weights = np.zeros(features.shape[1] + 1, dtype=np.float64)
    step = 1.0
    loss, grad = _logreg_loss_grad(weights, features, labels, sample_weights, l2)
    for _ in range(max_iterations):
        grad_norm = float(np.sqrt(grad @ grad))
        if grad_norm < tolerance:
            break
        # Backtracking Armijo search from the last accepted step size.
        step = min(step * 2.0, 1e4)
        while True:
            candidate = weights - step * grad
            new_loss, new_grad = _logreg_loss_grad(
                candidate, features, labels, sample_weights, l2
            )
            if new_loss <= loss - 1e-4 * step * grad_norm**2 or step < 1e-12:
                break
            step *= 0.5
        weights, loss, grad = candidate, new_loss, new_grad
    return weights


def predict_logreg(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    z = np.asarray(features, dtype=np.float64) @ weights[:-1] + weights[-1]
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def train_bow_baseline(texts: Sequence[str], labels: Sequence[int]) -> LogRegModel:
    """Fit the lexical baseline on training texts only."""
    vocab = build_bow_vocab(texts)
    if not vocab:
        raise InputError("baseline vocabulary is empty; corpus too small")
    features = bow_features(texts, vocab)
    weights = train_logreg(features, labels)
    _, grad = _logreg_loss_grad(
        weights,
        features,
        np.asarray(labels, dtype=np.float64),
        _balanced_weights(labels),
        1e-3,
    )
    return LogRegModel(
        vocab=vocab,
        weights=weights,
        final_grad_norm=float(np.sqrt(grad @ grad)),
    )


def _balanced_weights(labels: Sequence[int]) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    n_pos = float((labels == 1).sum())
    n_neg = float((labels == 0).sum())
    return np.where(labels == 1, n / (2 * n_pos), n / (2 * n_neg))


def score_bow_baseline(model: LogRegModel, texts: Sequence[str]) -> np.ndarray:
    return predict_logreg(bow_features(texts, model.vocab), model.weights)


# ---------------------------------------------------------------------------
# Comparison report
# ---------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    """Model-by-setting metric grid for the final summary."""

    settings: list[str] = field(default_factory=list)
    rows: dict[str, dict[str, Metrics]] = field(default_factory=dict)

    def add(self, model: str, setting: str, metrics: Metrics) -> None:
        if setting not in self.settings:
            self.settings.append(setting)
        self.rows.setdefault(model, {})[setting] = metrics

    def to_csv(self) -> str:
        header = ["model"]
        for s in self.settings:
            header.extend([f"{s}_f1", f"{s}_auc"])
        lines = [",".join(header)]
        for model in sorted(self.rows):
            cells = [model]
            for s in self.settings:
                m = self.rows[model].get(s)
                if m is None:
                    cells.extend(["", ""])
                else:
                    cells.extend([repr(m.f1), repr(m.auc)])
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max([len(m) for m in self.rows] + [5])
        header = "model".ljust(width)
        for s in self.settings:
            header += f"  {s + ' F1':>16}  {s + ' AUC':>16}"
        lines = [header, "-" * len(header)]
        for model in sorted(self.rows):
            line = model.ljust(width)
            for s in self.settings:
                m = self.rows[model].get(s)
                if m is None:
                    line += f"  {'-':>16}  {'-':>16}"
                else:
                    line += f"  {m.f1:>16.4f}  {m.auc:>16.4f}"
            lines.append(line)
        return "\n".join(lines) + "\n"
