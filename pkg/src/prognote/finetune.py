"""Patient-level fine-tuning of the pretrained encoder.

Every section of a patient is encoded separately; the pooled vectors are
max-pooled elementwise into one patient embedding, fed to a single-logit
head with a sigmoid.  Batches are stratified so each carries the cohort
case/control ratio (never less than one case), and the binary
cross-entropy is weighted per class inversely to its count in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import encoder as enc
from .errors import ConfigError, ContractViolation, InputError
from .evaluation import auc as compute_auc
from .evaluation import f1_at
from .tokenizer import TokenSequence
from .pretrain import stack_sequences


@dataclass(frozen=True)
class PatientInput:
    """One classification example: a patient's encoded sections and label."""

    patient_id: str
    sections: tuple[TokenSequence, ...]
    label: int

    def __post_init__(self):
        if not self.sections:
            raise InputError(f"patient {self.patient_id} has no sections")
        if self.label not in (0, 1):
            raise InputError(f"patient {self.patient_id} label must be 0 or 1")


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int
    batch_size: int = 4
    learning_rate: float = 3e-4
    threshold: float = 0.5
    seed: int = 0
    freeze_layers: int = 0
    clip_norm: float | None = 1.0

    def validate(self) -> None:
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be positive")
        if self.batch_size < 2:
            problems.append("batch_size must be at least 2")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        if not 0.0 < self.threshold < 1.0:
            problems.append("threshold must lie in (0, 1)")
        if self.freeze_layers < 0:
            problems.append("freeze_layers must be non-negative")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class SamplerPlan:
    """Index batches with a fixed per-batch case count ``k``."""

    batch_size: int
    cases_per_batch: int
    batches: list[list[int]]


def stratified_batches(
    labels: Sequence[int], batch_size: int, seed: int
) -> SamplerPlan:
    """Partition controls over batches and cycle cases through them.

    ``k = clamp(round(batch_size * n_case / n), 1, batch_size - 1)`` cases
    join every batch.  Controls are shuffled and split without
    replacement into ``floor(n_control / (batch_size - k))`` batches (the
    remainder is dropped); cases come from a shuffled cycle that
    reshuffles on wraparound, so every batch holds exactly ``k`` cases
    and ``batch_size - k`` controls.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if batch_size < 2:
        raise ConfigError("batch_size must be at least 2")
    case_idx = np.flatnonzero(labels == 1)
    control_idx = np.flatnonzero(labels == 0)
    if len(case_idx) == 0 or len(control_idx) == 0:
        raise ContractViolation("stratified batching needs both classes present")
    n = len(labels)
    k = int(round(batch_size * len(case_idx) / n))
    k = max(1, min(k, batch_size - 1))
    controls_per_batch = batch_size - k
    n_batches = len(control_idx) // controls_per_batch
    if n_batches == 0:
        raise ContractViolation(
            "not enough controls for a single batch at this batch size"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    shuffled_controls = control_idx.copy()
    rng.shuffle(shuffled_controls)
    case_cycle = case_idx.copy()
    rng.shuffle(case_cycle)
    cursor = 0
    batches = []
    for b in range(n_batches):
        chunk = shuffled_controls[b * controls_per_batch : (b + 1) * controls_per_batch]
        picks = []
        for _ in range(k):
            if cursor == len(case_cycle):
                rng.shuffle(case_cycle)
                cursor = 0
            picks.append(int(case_cycle[cursor]))
            cursor += 1
        batches.append(picks + [int(i) for i in chunk])
    return SamplerPlan(batch_size=batch_size, cases_per_batch=k, batches=batches)


def batch_weights(labels: Sequence[int]) -> tuple[float, float]:
    """Per-class weights inversely proportional to batch counts.

    Returns (case weight, control weight) with ``w_c = B / (2 * n_c)``,
    so each class contributes half the total weight mass.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_case = int((labels == 1).sum())
    n_control = int((labels == 0).sum())
    if n_case == 0 or n_control == 0:
        raise ContractViolation("batch weights need both classes in the batch")
    total = len(labels)
    return total / (2.0 * n_case), total / (2.0 * n_control)


def weighted_bce(
    probs: np.ndarray, labels: np.ndarray, weights: tuple[float, float]
) -> float:
    """Weighted binary cross-entropy with probabilities clamped away from 0/1."""
    probs = np.clip(np.asarray(probs, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    labels = np.asarray(labels, dtype=np.float64)
    w_case, w_control = weights
    w = np.where(labels == 1.0, w_case, w_control)
    terms = -(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs))
    return float((w * terms).mean())


def _forward_patients(params, patients: Sequence[PatientInput]):
    """One encoder pass over all sections of all patients in the batch."""
    seqs = [seq for p in patients for seq in p.sections]
    ids, segs, mask = stack_sequences(seqs)
    out = enc.forward(params, ids, segs, mask)
    offsets = np.cumsum([0] + [len(p.sections) for p in patients])
    return out, offsets


def embed_patient(params: enc.EncoderParams, patient: PatientInput) -> np.ndarray:
    """Max-pooled patient embedding over the pooled section vectors."""
    out, _ = _forward_patients(params, [patient])
    return enc.max_pool(out.pooled)


def predict_patient(params: enc.EncoderParams, patient: PatientInput) -> float:
    """Conversion probability for one patient."""
    vec = embed_patient(params, patient)
    z = enc.classifier_forward(params, vec[None, :])[0]
    return float(enc.sigmoid(z))


def predict_patients(
    params: enc.EncoderParams, patients: Sequence[PatientInput], chunk: int = 8
) -> np.ndarray:
    """Probabilities for many patients, batching sections for speed."""
    scores = np.empty(len(patients), dtype=np.float64)
    for start in range(0, len(patients), chunk):
        group = patients[start : start + chunk]
        out, offsets = _forward_patients(params, group)
        for j in range(len(group)):
            vec = enc.max_pool(out.pooled[offsets[j] : offsets[j + 1]])
            z = enc.classifier_forward(params, vec[None, :])[0]
            scores[start + j] = enc.sigmoid(z)
    return scores


def _frozen_prefixes(freeze_layers: int) -> tuple[str, ...]:
    if freeze_layers <= 0:
        return ()
    prefixes = ["embed."]
    prefixes.extend(f"layer{i}." for i in range(freeze_layers))
    return tuple(prefixes)


def train_step(
    params: enc.EncoderParams,
    patients: Sequence[PatientInput],
    state: enc.AdamState,
    hyper: enc.AdamHyper,
    frozen: tuple[str, ...] = (),
) -> float:
    """One weighted-BCE step over a stratified patient batch."""
    labels = np.array([p.label for p in patients], dtype=np.float64)
    weights = batch_weights([p.label for p in patients])
    out, offsets = _forward_patients(params, patients)

    vecs = np.stack(
        [
            enc.max_pool(out.pooled[offsets[j] : offsets[j + 1]])
            for j in range(len(patients))
        ]
    )
    z = enc.classifier_forward(params, vecs)
    probs = enc.sigmoid(z)
    loss = weighted_bce(probs, labels, weights)

    w_case, w_control = weights
    w = np.where(labels == 1.0, w_case, w_control)
    dz = w * (probs - labels) / len(patients)

    grads = enc.zero_grads(params)
    dvecs = enc.classifier_backward(params, vecs, dz, grads)
    d_pooled = np.zeros_like(out.pooled)
    for j in range(len(patients)):
        segment = out.pooled[offsets[j] : offsets[j + 1]]
        d_pooled[offsets[j] : offsets[j + 1]] = enc.max_pool_backward(
            segment, dvecs[j]
        )
    enc_grads = enc.backward(params, out.cache, d_pooled=d_pooled)
    for name in grads:
        grads[name] += enc_grads[name]
    for name in grads:
        if any(name.startswith(p) for p in frozen):
            grads[name][:] = 0.0
    enc.adam_step(params, grads, state, hyper)
    return loss


@dataclass
class EpochRecord:
    epoch: int
    mean_train_loss: float
    val_auc: float
    val_f1: float
    selected: bool = False


@dataclass
class FinetuneResult:
    params: enc.EncoderParams
    best_epoch: int
    best_val_auc: float
    best_val_f1: float
    history: list[EpochRecord] = field(default_factory=list)


def run_finetune(
    train_patients: Sequence[PatientInput],
    val_patients: Sequence[PatientInput],
    params: enc.EncoderParams,
    cfg: FinetuneConfig,
) -> FinetuneResult:
    """Fine-tune with per-epoch validation selection.

    The model snapshot with the best validation AUC wins; ties fall to
    the better F1 at the configured threshold, then to the earlier epoch.
    ``params`` is consumed (trained in place); the returned params are an
    independent copy of the winning snapshot.
    """
    cfg.validate()
    if not train_patients or not val_patients:
        raise InputError("fine-tuning needs non-empty train and validation sets")
    labels = [p.label for p in train_patients]
    state = enc.AdamState(params)
    hyper = enc.AdamHyper(learning_rate=cfg.learning_rate, clip_norm=cfg.clip_norm)
    frozen = _frozen_prefixes(cfg.freeze_layers)
    val_labels = np.array([p.label for p in val_patients], dtype=np.int64)

    best: Optional[FinetuneResult] = None
    history: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        plan = stratified_batches(labels, cfg.batch_size, seed=cfg.seed + epoch)
        losses = []
        for batch in plan.batches:
            batch_patients = [train_patients[i] for i in batch]
            losses.append(train_step(params, batch_patients, state, hyper, frozen))
        val_scores = predict_patients(params, val_patients)
        val_auc = compute_auc(val_scores, val_labels)
        _, _, val_f1, _ = f1_at(val_scores, val_labels, cfg.threshold)
        record = EpochRecord(
            epoch=epoch,
            mean_train_loss=float(np.mean(losses)),
            val_auc=val_auc,
            val_f1=val_f1,
        )
        history.append(record)
        if (
            best is None
            or (val_auc, val_f1) > (best.best_val_auc, best.best_val_f1)
        ):
            best = FinetuneResult(
                params=params.copy(),
                best_epoch=epoch,
                best_val_auc=val_auc,
                best_val_f1=val_f1,
            )
    assert best is not None
    for record in history:
        record.selected = record.epoch == best.best_epoch
    best.history = history
    return best


def history_to_csv(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch,mean_train_loss,val_auc,val_f1,selected"]
    for r in history:
        lines.append(
            f"{r.epoch},{r.mean_train_loss!r},{r.val_auc!r},{r.val_f1!r},{int(r.selected)}"
        )
    return "\n".join(lines) + "\n"
