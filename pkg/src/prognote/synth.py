"""Synthetic EHR roster generator with a ledger of planted facts.

Patients carry encounter histories with ICD codes, visit dates (integer
days), and raw note text.  Case patients progress from MCI to AD after a
random delay; controls keep MCI through varied follow-up.  Notes written
at or before the first MCI date carry the classification signal.

The signal is contextual by construction.  Case notes affirm a single
cognitive complaint ("patient reports memory loss"); control notes, when
they mention cognitive complaints at all, negate a four-item enumeration
("denies memory loss , word finding difficulty , ...").  Affirmation and
negation sections over somatic complaints are planted in both groups at
rates chosen so that the expected count of every word family (complaint
terms, affirmation leads, negation leads) is identical between groups.
A unigram model therefore sees two groups with matching word statistics,
while a context-sensitive model can separate them from word order.

Raw notes also carry planted PHI spans and non-ASCII characters, all
recorded in the ledger so downstream scrubbing can be audited.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError

SYMPTOM_PHRASES = (
    "memory loss",
    "short term memory loss",
    "difficulty recalling dates",
    "conversational repetitiveness",
    "word finding difficulty",
    "disorientation to time",
    "misplacing household objects",
    "trouble following recipes",
)

SOMATIC_PHRASES = (
    "chest pain",
    "joint stiffness",
    "shortness of breath",
    "lower back pain",
    "intermittent headaches",
    "ankle swelling",
    "night sweats",
    "abdominal discomfort",
)

NEUTRAL_PHRASES = (
    "blood pressure well controlled",
    "medication list reviewed and reconciled",
    "no acute distress noted on exam",
    "lungs clear to auscultation",
    "follow up scheduled in three months",
    "reports good appetite",
    "sleep pattern unremarkable",
    "routine laboratory panel ordered",
    "memory clinic referral discussed with family",
    "reviewed brochure on memory aids",
    "gait steady with cane",
    "immunizations up to date",
)

AFFIRM_LEADS = ("patient reports", "presents with", "notable for")
NEGATE_LEADS = ("denies", "no evidence of", "does not report")

# Complaints per section: affirmations state one complaint, negations
# enumerate four.  Together with the group-dependent section rates below,
# this keeps expected unigram counts equal across groups.
NEGATED_LIST_LEN = 4

DEFAULT_THEMES: Mapping[str, Sequence[str]] = {
    "symptom": SYMPTOM_PHRASES,
    "somatic": SOMATIC_PHRASES,
    "neutral": NEUTRAL_PHRASES,
}

MCI_CODES = ("331.83", "G31.84")
AD_CODES = ("331.0", "G30.0", "G30.1", "G30.8", "G30.9")
FILLER_CODES = (
    "I10",
    "E11.9",
    "272.4",
    "M54.5",
    "J45.909",
    "K21.9",
    "Z00.00",
    "E78.5",
)

FIRST_NAMES = (
    "Alice", "Brian", "Carla", "David", "Elena", "Frank", "Grace", "Henry",
    "Irene", "Jonas", "Karen", "Louis", "Mara", "Nolan", "Opal", "Peter",
    "Quinn", "Rosa", "Samuel", "Tessa",
)
LAST_NAMES = (
    "Hartman", "Iverson", "Jacobs", "Keller", "Lindqvist", "Moreno", "Novak",
    "Osborne", "Pruitt", "Quintero", "Ramsey", "Solberg", "Turner", "Udell",
    "Vance", "Whitfield", "Xiong", "Yates", "Zimmer", "Abbott",
)
MONTH_NAMES = (
    "January", "February", "March", "April", "May", "June", "July",
    "August", "September", "October", "November", "December",
)

NONASCII_SNIPPETS = (
    "temperature 37.2°C recorded at triage",
    "café au lait macule unchanged",
    "levothyroxine 88 µg daily continued",
    "résumé of prior imaging reviewed",
    "patient’s daughter attended the visit",
)

PHI_SECTION_RATE = 0.35
NONASCII_SECTION_RATE = 0.12
SEXES = ("F", "M")
RACES = ("white", "black", "asian", "hispanic", "other")
RACE_WEIGHTS = (0.58, 0.17, 0.10, 0.10, 0.05)


@dataclass(frozen=True)
class Note:
    time: int
    text: str


@dataclass(frozen=True)
class Encounter:
    date: int
    icd_codes: tuple[str, ...]
    notes: tuple[Note, ...]

    def __post_init__(self):
        for note in self.notes:
            if note.time != self.date:
                raise ConfigError("note time must equal its encounter date")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    birth_year: int
    sex: str
    race: str
    encounters: tuple[Encounter, ...]

    def __post_init__(self):
        dates = [e.date for e in self.encounters]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ConfigError("encounters must be strictly ordered by date")


@dataclass(frozen=True)
class PhiSpan:
    """Literal PHI text planted in one note, for scrub audits."""

    patient_id: str
    encounter_index: int
    note_index: int
    text: str


@dataclass
class SynthLedger:
    """Ground truth recorded while generating, keyed by patient id."""

    intended_labels: dict[str, str] = field(default_factory=dict)
    mci_day: dict[str, int] = field(default_factory=dict)
    ad_day: dict[str, int | None] = field(default_factory=dict)
    last_day: dict[str, int] = field(default_factory=dict)
    phi_spans: list[PhiSpan] = field(default_factory=list)
    nonascii_notes: list[tuple[str, int, int]] = field(default_factory=list)
    symptom_note_counts: dict[str, int] = field(default_factory=dict)
    n_notes: int = 0

    def phi_note_fraction(self) -> float:
        noted = {(s.patient_id, s.encounter_index, s.note_index) for s in self.phi_spans}
        return len(noted) / self.n_notes if self.n_notes else 0.0

    def nonascii_note_fraction(self) -> float:
        return len(set(self.nonascii_notes)) / self.n_notes if self.n_notes else 0.0


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int
    case_fraction: float
    seed: int
    signal_strength: float = 0.8
    date_range: tuple[int, int] = (0, 4000)
    vocab_themes: Mapping[str, Sequence[str]] = field(default_factory=lambda: DEFAULT_THEMES)

    def validate(self) -> None:
        problems = []
        if self.n_patients < 1:
            problems.append("n_patients must be positive")
        if not 0.0 <= self.case_fraction <= 1.0:
            problems.append("case_fraction must lie in [0, 1]")
        if not 0.0 < self.signal_strength <= 1.0:
            problems.append("signal_strength must lie in (0, 1]")
        if self.seed < 0:
            problems.append("seed must be non-negative")
        lo, hi = self.date_range
        if hi - lo < 2200:
            problems.append("date_range must span at least 2200 days")
        for key in ("symptom", "somatic", "neutral"):
            pool = self.vocab_themes.get(key, ())
            need = NEGATED_LIST_LEN if key != "neutral" else 1
            if len(pool) < max(need, 1):
                problems.append(f"vocab theme '{key}' needs at least {need} phrases")
        if problems:
            raise ConfigError("; ".join(problems))


def _choice(rng: np.random.Generator, pool: Sequence[str]) -> str:
    return pool[int(rng.integers(len(pool)))]


def _sample_phrases(rng, pool: Sequence[str], k: int) -> list[str]:
    idx = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
    return [pool[int(i)] for i in sorted(idx)]


def _negated_section(rng, lead: str, pool: Sequence[str]) -> str:
    phrases = _sample_phrases(rng, pool, NEGATED_LIST_LEN)
    return f"{lead} " + " , ".join(phrases)


def _phi_section(rng) -> tuple[str, str]:
    """Return (section text, the literal span a scrubber must remove)."""
    first = _choice(rng, FIRST_NAMES)
    last = _choice(rng, LAST_NAMES)
    kind = int(rng.integers(9))
    if kind == 0:
        span = "%02d/%02d/%d" % (rng.integers(1, 13), rng.integers(1, 29), rng.integers(2005, 2022))
        return f"note dated {span}", span
    if kind == 1:
        span = "%d-%02d-%02d" % (rng.integers(2005, 2022), rng.integers(1, 13), rng.integers(1, 29))
        return f"visit recorded {span}", span
    if kind == 2:
        span = "%s %d, %d" % (_choice(rng, MONTH_NAMES), rng.integers(1, 29), rng.integers(2005, 2022))
        return f"seen in clinic {span}", span
    if kind == 3:
        span = "%03d-%03d-%04d" % (rng.integers(200, 990), rng.integers(200, 990), rng.integers(0, 10000))
        return f"contact number {span}", span
    if kind == 4:
        span = str(int(rng.integers(10**7, 10**9)))
        return f"medical record number {span}", span
    if kind == 5:
        span = f"{first.lower()}.{last.lower()}@mailhost.org"
        return f"portal messages sent to {span}", span
    if kind == 6:
        span = "%05d" % rng.integers(10000, 100000)
        return f"resides near zip {span}", span
    if kind == 7:
        name = f"{first} {last}"
        return f"reviewed by Dr. {name}", name
    name = f"{first} {last}"
    return f"signed by {name}, MD", name


def _section_rates(signal_strength: float, is_case: bool) -> tuple[float, float]:
    """Affirmed/negated somatic section rates balancing group word counts.

    Cases add ``s`` affirmation leads per note through their symptom
    sections and controls add ``s/4`` negation leads, so somatic sections
    are planted at offset rates that cancel both gaps.  The four-item
    negated enumerations then cancel the complaint-term gap as well.
    """
    s = signal_strength
    base_affirm = max(0.0, min(0.15, 1.0 - s))
    base_negate = 0.35
    if is_case:
        return base_affirm, min(1.0, base_negate + s / 4.0)
    return min(1.0, base_affirm + s), base_negate


def _compose_note(
    rng,
    themes: Mapping[str, Sequence[str]],
    is_case: bool,
    symptomatic: bool,
    signal_strength: float,
) -> tuple[str, list[str], bool]:
    """Build one raw note; returns (text, phi spans, has non-ascii)."""
    symptoms = themes["symptom"]
    somatic = themes["somatic"]
    neutral = themes["neutral"]
    sections: list[str] = []
    phi_spans: list[str] = []

    if rng.random() < PHI_SECTION_RATE:
        for _ in range(int(rng.integers(1, 3))):
            text, span = _phi_section(rng)
            sections.append(text)
            phi_spans.append(span)

    if symptomatic:
        if is_case:
            sections.append(f"{_choice(rng, AFFIRM_LEADS)} {_choice(rng, symptoms)}")
        else:
            sections.append(_negated_section(rng, _choice(rng, NEGATE_LEADS), symptoms))

    affirm_rate, negate_rate = _section_rates(signal_strength, is_case)
    if rng.random() < affirm_rate:
        sections.append(f"{_choice(rng, AFFIRM_LEADS)} {_choice(rng, somatic)}")
    if rng.random() < negate_rate:
        sections.append(_negated_section(rng, _choice(rng, NEGATE_LEADS), somatic))

    for phrase in _sample_phrases(rng, neutral, 1 + int(rng.integers(3))):
        sections.append(phrase)

    has_nonascii = rng.random() < NONASCII_SECTION_RATE
    if has_nonascii:
        sections.append(_choice(rng, NONASCII_SNIPPETS))

    rng.shuffle(sections)
    return "\n".join(sections), phi_spans, has_nonascii


def _neutral_note(rng, themes) -> tuple[str, list[str], bool]:
    """A post-MCI note: neutral content only, PHI and non-ASCII still possible."""
    return _compose_note(rng, themes, is_case=False, symptomatic=False,
                         signal_strength=0.0)


def _pick_days(rng, low: int, high: int, count: int) -> list[int]:
    """Sample ``count`` distinct days from [low, high), sorted ascending."""
    span = high - low
    count = min(count, span)
    if count <= 0:
        return []
    days = rng.choice(span, size=count, replace=False)
    return sorted(int(d) + low for d in days)


def _build_patient(rng, cfg: SynthConfig, patient_id: str, is_case: bool,
                   ledger: SynthLedger) -> PatientRecord:
    themes = cfg.vocab_themes
    lo, hi = cfg.date_range
    mci_day = int(rng.integers(lo + 150, hi - 1600))

    n_pre = int(rng.integers(2, 7))
    pre_days = _pick_days(rng, max(lo, mci_day - 900), mci_day, n_pre - 1) + [mci_day]

    if is_case:
        ad_day = mci_day + int(rng.integers(30, 1501))
        between = _pick_days(rng, mci_day + 1, ad_day, int(rng.integers(3)))
        after = _pick_days(rng, ad_day + 1, ad_day + 90, int(rng.integers(2)))
        post_days = between + [ad_day] + after
        last_day = post_days[-1]
    else:
        ad_day = None
        last_day = mci_day + int(rng.integers(30, 1501))
        post_days = _pick_days(rng, mci_day + 1, last_day, int(rng.integers(3))) + [last_day]

    # Per-note symptom flags for the pre-MCI notes; cases always get at
    # least one symptomatic note so the planted label stays recoverable.
    notes_per_pre = [int(rng.integers(1, 3)) for _ in pre_days]
    total_pre_notes = sum(notes_per_pre)
    rate = cfg.signal_strength if is_case else cfg.signal_strength / 4.0
    flags = list(rng.random(total_pre_notes) < rate)
    if is_case and not any(flags):
        flags[int(rng.integers(total_pre_notes))] = True

    encounters = []
    flag_cursor = 0
    for enc_idx, day in enumerate(pre_days):
        notes = []
        for _ in range(notes_per_pre[enc_idx]):
            text, spans, nonascii = _compose_note(
                rng, themes, is_case, flags[flag_cursor], cfg.signal_strength
            )
            note_idx = len(notes)
            notes.append(Note(time=day, text=text))
            for span in spans:
                ledger.phi_spans.append(PhiSpan(patient_id, enc_idx, note_idx, span))
            if nonascii:
                ledger.nonascii_notes.append((patient_id, enc_idx, note_idx))
            ledger.n_notes += 1
            flag_cursor += 1
        codes = []
        if day == mci_day:
            codes.append(_choice(rng, MCI_CODES))
        if rng.random() > 0.12:
            codes.extend(_sample_phrases(rng, FILLER_CODES, int(rng.integers(1, 3))))
        encounters.append(Encounter(date=day, icd_codes=tuple(codes), notes=tuple(notes)))
    ledger.symptom_note_counts[patient_id] = int(sum(flags))

    for day in post_days:
        enc_idx = len(encounters)
        notes = []
        if rng.random() < 0.7:
            text, spans, nonascii = _neutral_note(rng, themes)
            notes.append(Note(time=day, text=text))
            for span in spans:
                ledger.phi_spans.append(PhiSpan(patient_id, enc_idx, 0, span))
            if nonascii:
                ledger.nonascii_notes.append((patient_id, enc_idx, 0))
            ledger.n_notes += 1
        codes = []
        if is_case and day == ad_day:
            codes.append(_choice(rng, AD_CODES))
        if rng.random() > 0.12:
            codes.extend(_sample_phrases(rng, FILLER_CODES, int(rng.integers(1, 3))))
        encounters.append(Encounter(date=day, icd_codes=tuple(codes), notes=tuple(notes)))

    ledger.intended_labels[patient_id] = "case" if is_case else "control"
    ledger.mci_day[patient_id] = mci_day
    ledger.ad_day[patient_id] = ad_day
    ledger.last_day[patient_id] = last_day

    race = RACES[int(rng.choice(len(RACES), p=RACE_WEIGHTS))]
    return PatientRecord(
        patient_id=patient_id,
        birth_year=int(rng.integers(1925, 1961)),
        sex=_choice(rng, SEXES),
        race=race,
        encounters=tuple(encounters),
    )


def generate_roster_with_ledger(cfg: SynthConfig) -> tuple[list[PatientRecord], SynthLedger]:
    """Generate the roster plus the ledger of planted ground truth."""
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n_cases = int(round(cfg.n_patients * cfg.case_fraction))
    roles = ["case"] * n_cases + ["control"] * (cfg.n_patients - n_cases)
    rng.shuffle(roles)
    ledger = SynthLedger()
    roster = []
    for i, role in enumerate(roles):
        patient_id = f"P{i:04d}"
        roster.append(_build_patient(rng, cfg, patient_id, role == "case", ledger))
    return roster, ledger


def generate_roster(cfg: SynthConfig) -> list[PatientRecord]:
    """Generate the roster alone; same records as the ledgered variant."""
    roster, _ = generate_roster_with_ledger(cfg)
    return roster


def patient_to_dict(p: PatientRecord) -> dict:
    return {
        "patient_id": p.patient_id,
        "birth_year": p.birth_year,
        "sex": p.sex,
        "race": p.race,
        "encounters": [
            {
                "date": e.date,
                "icd_codes": list(e.icd_codes),
                "notes": [{"time": n.time, "text": n.text} for n in e.notes],
            }
            for e in p.encounters
        ],
    }


def patient_from_dict(d: dict) -> PatientRecord:
    return PatientRecord(
        patient_id=d["patient_id"],
        birth_year=d["birth_year"],
        sex=d["sex"],
        race=d["race"],
        encounters=tuple(
            Encounter(
                date=e["date"],
                icd_codes=tuple(e["icd_codes"]),
                notes=tuple(Note(time=n["time"], text=n["text"]) for n in e["notes"]),
            )
            for e in d["encounters"]
        ),
    )


def save_roster(roster: Sequence[PatientRecord], path) -> None:
    """Write one JSON object per line, sorted keys, ASCII-escaped."""
    with open(path, "w", encoding="ascii") as fh:
        for p in roster:
            fh.write(json.dumps(patient_to_dict(p), sort_keys=True, ensure_ascii=True))
            fh.write("\n")


def load_roster(path) -> list[PatientRecord]:
    roster = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            if line.strip():
                roster.append(patient_from_dict(json.loads(line)))
    return roster


def ledger_to_dict(ledger: SynthLedger) -> dict:
    return {
        "intended_labels": ledger.intended_labels,
        "mci_day": ledger.mci_day,
        "ad_day": ledger.ad_day,
        "last_day": ledger.last_day,
        "phi_spans": [
            {
                "patient_id": s.patient_id,
                "encounter_index": s.encounter_index,
                "note_index": s.note_index,
                "text": s.text,
            }
            for s in ledger.phi_spans
        ],
        "nonascii_notes": [list(t) for t in ledger.nonascii_notes],
        "symptom_note_counts": ledger.symptom_note_counts,
        "n_notes": ledger.n_notes,
    }


def save_ledger(ledger: SynthLedger, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(ledger_to_dict(ledger), fh, sort_keys=True, ensure_ascii=True, indent=1)
        fh.write("\n")
