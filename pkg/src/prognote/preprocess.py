"""Note preprocessing: de-identification, character cleanup, sectioning.

Every raw note goes through three stages, in order:

1. ``deidentify`` replaces spans that look like protected health
   information with the literal token ``<phi>``.
2. ``clean`` reduces the text to printable ASCII and collapses runs of
   horizontal whitespace, keeping newlines intact.
3. ``split_sections`` cuts the note on newlines and drops blank fragments.

``preprocess_note`` chains the three.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

PHI_TOKEN = "<phi>"

_MONTHS = (
    "January|February|March|April|May|June|July|August|September|"
    "October|November|December|Jan|Feb|Mar|Apr|Jun|Jul|Aug|Sep|Sept|Oct|Nov|Dec"
)

# One capitalized word, optionally followed by one or two more ("Alice
# Hartman", "Mary Jo Baker").  Used for the title-anchored name rules only;
# bare capitalized words are not treated as names.
_NAME_SPAN = r"[A-Z][a-z]+(?:\s+[A-Z][a-z]+){0,2}"

# Ordered PHI rules.  Order matters: dates are rewritten before the bare
# digit-run rules so that "03/04/2019" is removed as one date instead of
# leaking fragments, and separated phone numbers go before the plain
# identifier rule.  Each entry is (rule name, pattern, replacement).
PHI_RULES = (
    (
        "date_numeric",
        re.compile(r"\b\d{4}-\d{1,2}-\d{1,2}\b|\b\d{1,2}[/-]\d{1,2}[/-]\d{2,4}\b"),
        PHI_TOKEN,
    ),
    (
        "date_month_name",
        re.compile(
            r"\b(?:%s)\.?\s+\d{1,2}(?:st|nd|rd|th)?(?:,\s*\d{2,4})?\b"
            r"|\b\d{1,2}\s+(?:%s)\.?\s+\d{2,4}\b" % (_MONTHS, _MONTHS)
        ),
        PHI_TOKEN,
    ),
    (
        "email",
        re.compile(r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b"),
        PHI_TOKEN,
    ),
    (
        "phone",
        re.compile(
            r"\(\d{3}\)\s*\d{3}[-. ]\d{4}\b"
            r"|\b\d{3}[-. ]\d{3}[-. ]\d{4}\b"
            r"|\b\d{3}[-.]\d{4}\b"
        ),
        PHI_TOKEN,
    ),
    ("long_identifier", re.compile(r"\b\d{6,}\b"), PHI_TOKEN),
    ("zip", re.compile(r"\b\d{5}\b"), PHI_TOKEN),
    # Names anchored to a preceding title.  The title survives, the name
    # span is replaced: "Dr. Alice Hartman" -> "Dr. <phi>".
    (
        "titled_name",
        re.compile(r"\b((?:Dr|Mr|Mrs|Ms)\.?\s+|(?:MD|RN)\s+)(%s)\b" % _NAME_SPAN),
        r"\1" + PHI_TOKEN,
    ),
    # Names anchored to a trailing credential: "Alice Hartman, MD".
    (
        "credentialed_name",
        re.compile(r"\b(%s)(,?\s+(?:MD|RN))\b" % _NAME_SPAN),
        PHI_TOKEN + r"\2",
    ),
)

# Control characters to delete outright.  Horizontal whitespace forms
# (\t \r \v \f) survive until the collapse step; \n is kept as the section
# separator.
_CONTROL_RE = re.compile(r"[\x00-\x08\x0e-\x1f\x7f]")
_HSPACE_RE = re.compile(r"[ \t\r\x0b\x0c]+")


@dataclass(frozen=True)
class Section:
    """One newline-delimited fragment of a preprocessed note."""

    text: str
    note_index: int
    section_index: int


def deidentify(text: str) -> str:
    """Replace every span matching a PHI rule with ``<phi>``.

    Rules are applied in a fixed order; the replacement token contains no
    digits, capitals, or ``@``, so a second pass is a no-op.
    """
    out = text
    for _name, pattern, repl in PHI_RULES:
        out = pattern.sub(repl, out)
    return out


def clean(text: str) -> str:
    """Drop non-ASCII and non-printable characters, collapse blank runs.

    Newlines are preserved; every other whitespace run becomes a single
    space.  The result contains only printable ASCII and ``\\n``, and the
    function is idempotent.
    """
    out = text.encode("ascii", "ignore").decode("ascii")
    out = _CONTROL_RE.sub("", out)
    out = _HSPACE_RE.sub(" ", out)
    return out


def split_sections(text: str, note_index: int = 0) -> list[Section]:
    """Split a cleaned note on newlines, dropping whitespace-only fragments.

    Kept fragments are not trimmed, so joining them with ``\\n`` restores
    the original text minus the dropped blanks.
    """
    sections = []
    for fragment in text.split("\n"):
        if not fragment.strip():
            continue
        sections.append(
            Section(text=fragment, note_index=note_index, section_index=len(sections))
        )
    return sections


def preprocess_note(raw_text: str, note_index: int = 0) -> list[Section]:
    """Run deidentify -> clean -> split_sections on one raw note."""
    return split_sections(clean(deidentify(raw_text)), note_index=note_index)
