"""Masked-token and next-section pretraining on the note corpus.

Sections are the sequence unit.  The masked-token objective corrupts a
random 15% of content positions per draw (80% to ``[MASK]``, 10% to a
random token, 10% kept), with fresh corruption every step.  The
next-section objective classifies whether two sections were adjacent in
the same note.  Both losses share one encoder; gradients from the two
batches are summed before each Adam step.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import encoder as enc
from .errors import ConfigError, InputError
from .tokenizer import (
    MASK_ID,
    TokenSequence,
    Vocab,
    encode_pair,
    encode_section,
)

N_RESERVED = 5


@dataclass(frozen=True)
class PretrainConfig:
    steps: int
    batch_size: int = 8
    learning_rate: float = 1e-3
    mask_fraction: float = 0.15
    corrupt_split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    nsp_positive_fraction: float = 0.5
    seed: int = 0
    checkpoint_every: int = 0
    clip_norm: float | None = 1.0

    def validate(self) -> None:
        problems = []
        if self.steps < 0:
            problems.append("steps must be non-negative")
        if self.batch_size < 1:
            problems.append("batch_size must be positive")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        if not 0.0 < self.mask_fraction <= 1.0:
            problems.append("mask_fraction must lie in (0, 1]")
        if len(self.corrupt_split) != 3 or abs(sum(self.corrupt_split) - 1.0) > 1e-9:
            problems.append("corrupt_split must be three fractions summing to 1")
        if any(c < 0 for c in self.corrupt_split):
            problems.append("corrupt_split fractions must be non-negative")
        if not 0.0 <= self.nsp_positive_fraction <= 1.0:
            problems.append("nsp_positive_fraction must lie in [0, 1]")
        if self.checkpoint_every < 0:
            problems.append("checkpoint_every must be non-negative")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class MlmInstance:
    """One corrupted sequence plus its recovery labels (-1 = unlabeled)."""

    sequence: TokenSequence
    labels: np.ndarray


@dataclass
class NspInstance:
    sequence: TokenSequence
    is_adjacent: bool


def make_mlm_instance(
    sequence: TokenSequence,
    vocab: Vocab,
    rng: np.random.Generator,
    mask_fraction: float = 0.15,
    corrupt_split: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> MlmInstance:
    """Corrupt one encoded sequence for the masked-token objective.

    Only content positions (unpadded, token id past the reserved block)
    are eligible.  Each eligible position is selected independently with
    ``mask_fraction``; a selected position records its original id as the
    label, then becomes ``[MASK]``, a random non-reserved token, or stays
    put, per ``corrupt_split``.
    """
    if len(vocab) <= N_RESERVED:
        raise InputError("vocabulary has no content tokens to sample")
    ids = sequence.ids.copy()
    labels = np.full(ids.shape, -1, dtype=np.int64)
    eligible = (sequence.mask == 1) & (ids >= N_RESERVED)
    selected = np.flatnonzero(eligible & (rng.random(ids.shape) < mask_fraction))
    p_mask, p_random = corrupt_split[0], corrupt_split[1]
    for pos in selected:
        labels[pos] = ids[pos]
        roll = rng.random()
        if roll < p_mask:
            ids[pos] = MASK_ID
        elif roll < p_mask + p_random:
            ids[pos] = int(rng.integers(N_RESERVED, len(vocab)))
        # else: keep the original token
    corrupted = TokenSequence(
        ids=ids, segment_ids=sequence.segment_ids.copy(), mask=sequence.mask.copy()
    )
    return MlmInstance(sequence=corrupted, labels=labels)


def make_nsp_instances(
    note_sections: Sequence[Sequence[str]],
    count: int,
    vocab: Vocab,
    rng: np.random.Generator,
    max_len: int = 32,
    positive_fraction: float = 0.5,
) -> list[NspInstance]:
    """Sample adjacent/non-adjacent section pairs across notes.

    ``note_sections`` holds the section texts of each note.  Positives
    take two consecutive sections of one note; negatives pair sections
    from two different notes.  Requires at least two notes and at least
    one note with two sections.
    """
    multi = [i for i, secs in enumerate(note_sections) if len(secs) >= 2]
    nonempty = [i for i, secs in enumerate(note_sections) if len(secs) >= 1]
    if len(nonempty) < 2 or not multi:
        raise InputError(
            "next-section sampling needs two notes and one multi-section note"
        )
    instances = []
    for _ in range(count):
        if rng.random() < positive_fraction:
            note = multi[int(rng.integers(len(multi)))]
            secs = note_sections[note]
            j = int(rng.integers(len(secs) - 1))
            pair = encode_pair(secs[j], secs[j + 1], vocab, max_len)
            instances.append(NspInstance(sequence=pair, is_adjacent=True))
        else:
            a = nonempty[int(rng.integers(len(nonempty)))]
            b = nonempty[int(rng.integers(len(nonempty)))]
            while b == a:
                b = nonempty[int(rng.integers(len(nonempty)))]
            sec_a = note_sections[a][int(rng.integers(len(note_sections[a])))]
            sec_b = note_sections[b][int(rng.integers(len(note_sections[b])))]
            pair = encode_pair(sec_a, sec_b, vocab, max_len)
            instances.append(NspInstance(sequence=pair, is_adjacent=False))
    return instances


def stack_sequences(sequences: Sequence[TokenSequence]):
    ids = np.stack([s.ids for s in sequences])
    segs = np.stack([s.segment_ids for s in sequences])
    mask = np.stack([s.mask for s in sequences])
    return ids, segs, mask


@dataclass
class PretrainLoss:
    total: float
    mlm: float
    nsp: float


def pretrain_loss(
    params: enc.EncoderParams,
    mlm_batch: Sequence[MlmInstance],
    nsp_batch: Sequence[NspInstance],
) -> tuple[PretrainLoss, dict[str, np.ndarray]]:
    """Combined loss and summed gradients for one pretraining step."""
    if not mlm_batch or not nsp_batch:
        raise InputError("pretraining batches must be non-empty")
    grads = enc.zero_grads(params)

    ids, segs, mask = stack_sequences([inst.sequence for inst in mlm_batch])
    labels = np.stack([inst.labels for inst in mlm_batch])
    out = enc.forward(params, ids, segs, mask)
    logits, head_cache = enc.mlm_head_forward(params, out.hidden)
    mlm_loss, dlogits = enc.softmax_xent(logits, labels)
    if (labels != -1).any():
        d_hidden = enc.mlm_head_backward(params, head_cache, dlogits, grads)
        enc_grads = enc.backward(params, out.cache, d_hidden=d_hidden)
        for name in grads:
            grads[name] += enc_grads[name]

    ids, segs, mask = stack_sequences([inst.sequence for inst in nsp_batch])
    nsp_labels = np.array([int(inst.is_adjacent) for inst in nsp_batch], dtype=np.int64)
    out = enc.forward(params, ids, segs, mask)
    nsp_logits = enc.nsp_forward(params, out.pooled)
    nsp_loss, dnsp = enc.softmax_xent(nsp_logits, nsp_labels)
    d_pooled = enc.nsp_backward(params, out.pooled, dnsp, grads)
    enc_grads = enc.backward(params, out.cache, d_pooled=d_pooled)
    for name in grads:
        grads[name] += enc_grads[name]

    return PretrainLoss(total=mlm_loss + nsp_loss, mlm=mlm_loss, nsp=nsp_loss), grads


@dataclass
class PretrainResult:
    params: enc.EncoderParams
    opt_state: enc.AdamState
    curve: list[tuple[int, float, float, float]] = field(default_factory=list)


def curve_to_csv(curve: Sequence[tuple[int, float, float, float]]) -> str:
    lines = ["step,mlm_loss,nsp_loss,total_loss"]
    for step, mlm, nsp, total in curve:
        lines.append(f"{step},{mlm!r},{nsp!r},{total!r}")
    return "\n".join(lines) + "\n"


def run_pretraining(
    note_sections: Sequence[Sequence[str]],
    vocab: Vocab,
    encoder_config: enc.EncoderConfig,
    cfg: PretrainConfig,
    out_dir: str | None = None,
) -> PretrainResult:
    """Initialize an encoder and pretrain it on the sectioned corpus.

    The whole run is a function of the corpus, the vocabulary, and the
    two configs; repeating it reproduces the same parameters bit for bit.
    Checkpoints land under ``out_dir`` when given ("checkpoint_final"
    plus periodic "checkpoint_<step>" when ``checkpoint_every`` is set).
    """
    cfg.validate()
    if encoder_config.vocab_size != len(vocab):
        raise ConfigError(
            f"encoder vocab_size {encoder_config.vocab_size} does not match "
            f"the vocabulary ({len(vocab)} tokens)"
        )
    sections = [sec for note in note_sections for sec in note]
    if not sections:
        raise InputError("pretraining corpus has no sections")
    encoded = [encode_section(sec, vocab, encoder_config.max_len) for sec in sections]

    params = enc.init_params(encoder_config, cfg.seed)
    state = enc.AdamState(params)
    hyper = enc.AdamHyper(learning_rate=cfg.learning_rate, clip_norm=cfg.clip_norm)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    curve: list[tuple[int, float, float, float]] = []

    for step in range(1, cfg.steps + 1):
        picks = rng.integers(0, len(encoded), size=cfg.batch_size)
        mlm_batch = [
            make_mlm_instance(
                encoded[int(i)], vocab, rng, cfg.mask_fraction, cfg.corrupt_split
            )
            for i in picks
        ]
        nsp_batch = make_nsp_instances(
            note_sections,
            cfg.batch_size,
            vocab,
            rng,
            encoder_config.max_len,
            cfg.nsp_positive_fraction,
        )
        loss, grads = pretrain_loss(params, mlm_batch, nsp_batch)
        enc.adam_step(params, grads, state, hyper)
        curve.append((step, loss.mlm, loss.nsp, loss.total))
        if (
            out_dir
            and cfg.checkpoint_every
            and step % cfg.checkpoint_every == 0
            and step < cfg.steps
        ):
            enc.save_checkpoint(params, os.path.join(out_dir, f"checkpoint_{step:06d}"), state)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        enc.save_checkpoint(params, os.path.join(out_dir, "checkpoint_final"), state)
        with open(os.path.join(out_dir, "loss_curve.csv"), "w", encoding="ascii") as fh:
            fh.write(curve_to_csv(curve))
    return PretrainResult(params=params, opt_state=state, curve=curve)
