"""Attention inspection: where the classifier looks inside a section.

Weights come from the last encoder layer, averaged over heads, reading
the [CLS] query row.  Special and padded positions are zeroed and the
rest renormalized, so the weights describe content tokens only.  The
report writer emits a self-contained XHTML page (no scripts, no external
assets) that a standard XML parser can load, which keeps it testable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from html import escape
from typing import Iterable, Optional, Sequence

import numpy as np

from . import encoder as enc
from .errors import InputError
from .tokenizer import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    SEP_ID,
    TokenSequence,
    Vocab,
    encode_section,
)

SPECIAL_IDS = frozenset({PAD_ID, CLS_ID, SEP_ID, MASK_ID})


def attention_weights(
    params: enc.EncoderParams, sequence: TokenSequence
) -> np.ndarray:
    """Normalized [CLS]-to-content weights for one encoded section."""
    out = enc.forward(
        params,
        sequence.ids[None, :],
        sequence.segment_ids[None, :],
        sequence.mask[None, :],
    )
    last = out.attention[-1][0]  # (heads, L, L)
    row = last.mean(axis=0)[0]  # [CLS] query over all keys
    weights = row.copy()
    for pos, token_id in enumerate(sequence.ids):
        if int(token_id) in SPECIAL_IDS or sequence.mask[pos] == 0:
            weights[pos] = 0.0
    total = weights.sum()
    if total > 0.0:
        weights /= total
    return weights


@dataclass
class SectionAttribution:
    """Tokens of one section paired with their attention weights."""

    heading: str
    tokens: list[str]
    weights: list[float]

    def __post_init__(self):
        if len(self.tokens) != len(self.weights):
            raise InputError("tokens and weights must align")


def attribute_section(
    params: enc.EncoderParams,
    text: str,
    vocab: Vocab,
    heading: str,
    max_len: int = 32,
) -> SectionAttribution:
    """Encode a section and keep only content positions with weights."""
    sequence = encode_section(text, vocab, max_len)
    weights = attention_weights(params, sequence)
    tokens = []
    kept = []
    for pos, token_id in enumerate(sequence.ids):
        tid = int(token_id)
        if tid in SPECIAL_IDS or sequence.mask[pos] == 0:
            continue
        tokens.append(vocab.tokens[tid])
        kept.append(float(weights[pos]))
    return SectionAttribution(heading=heading, tokens=tokens, weights=kept)


def _merged(token: str) -> str:
    return token[2:] if token.startswith("##") else token


def highlight_comparison(
    attributions: Sequence[SectionAttribution], terms: Iterable[str]
) -> tuple[float, float]:
    """Mean weight on tokens matching ``terms`` versus all other tokens."""
    term_set = {t.lower() for t in terms}
    matched: list[float] = []
    rest: list[float] = []
    for attribution in attributions:
        for token, weight in zip(attribution.tokens, attribution.weights):
            if _merged(token).lower() in term_set:
                matched.append(weight)
            else:
                rest.append(weight)
    mean_matched = float(np.mean(matched)) if matched else 0.0
    mean_rest = float(np.mean(rest)) if rest else 0.0
    return mean_matched, mean_rest


_STYLE = (
    "body { font-family: sans-serif; margin: 2em; max-width: 60em; }\n"
    "h2 { font-size: 1.0em; margin-bottom: 0.2em; }\n"
    "p.text { line-height: 1.9; }\n"
    "span.tok { padding: 0.1em 0.15em; border-radius: 0.2em; }\n"
)


def render_report(
    title: str,
    attributions: Sequence[SectionAttribution],
    highlight_terms: Optional[Iterable[str]] = None,
) -> str:
    """Build the XHTML document as a string."""
    lines = [
        '<html xmlns="http://www.w3.org/1999/xhtml">',
        "<head>",
        f"<title>{escape(title)}</title>",
        f"<style>{_STYLE}</style>",
        "</head>",
        "<body>",
        f"<h1>{escape(title)}</h1>",
        "<p>Shading is proportional to [CLS] attention from the last "
        "encoder layer, head-averaged and renormalized over content "
        "tokens.</p>",
    ]
    if highlight_terms is not None:
        terms = sorted({t.lower() for t in highlight_terms})
        mean_matched, mean_rest = highlight_comparison(attributions, terms)
        lines.append(
            '<p class="comparison">Mean weight on highlighted terms ('
            + escape(", ".join(terms))
            + f"): <b>{mean_matched:.4f}</b> versus {mean_rest:.4f} "
            "elsewhere.</p>"
        )
    for i, attribution in enumerate(attributions):
        peak = max(attribution.weights, default=0.0)
        lines.append(f'<div class="section" id="sec{i}">')
        lines.append(f"<h2>{escape(attribution.heading)}</h2>")
        spans = []
        for token, weight in zip(attribution.tokens, attribution.weights):
            alpha = weight / peak if peak > 0 else 0.0
            style = f"background-color: rgba(214, 88, 40, {alpha:.3f})"
            spans.append(
                f'<span class="tok" style="{style}" '
                f'data-weight="{weight!r}">{escape(token)}</span>'
            )
        lines.append('<p class="text">' + " ".join(spans) + "</p>")
        lines.append("</div>")
    lines.extend(["</body>", "</html>"])
    return "\n".join(lines) + "\n"


def export_attention_report(
    path: str,
    title: str,
    attributions: Sequence[SectionAttribution],
    highlight_terms: Optional[Iterable[str]] = None,
) -> None:
    """Write the report; parent directories are created as needed."""
    document = render_report(title, attributions, highlight_terms)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(document)
