"""Cohort construction: code matching, exclusions, window labeling.

Diagnosis phenotyping works on ICD code sets where a trailing ``*`` means
prefix match ("G30.*" covers every G30. subcode).  Patients pass four
exclusion rules, then receive a label per observation setting: the
no-restrict setting labels every eligible patient by AD presence, and an
x-month window setting labels conversion speed relative to the window,
excluding controls whose follow-up is too short to rule a conversion out.
"""

from __future__ import annotations

import enum
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigError, InputError
from .synth import Note, PatientRecord

MONTHS_6 = 182
YEAR_1 = 365
YEAR_2 = 730
WINDOW_PRESETS = {"6mo": MONTHS_6, "1yr": YEAR_1, "2yr": YEAR_2}

DEFAULT_MCI_CODES = frozenset({"331.83", "G31.84"})
DEFAULT_AD_CODES = frozenset({"331.0", "G30.*"})


@dataclass(frozen=True)
class CodeSets:
    mci: frozenset[str] = DEFAULT_MCI_CODES
    ad: frozenset[str] = DEFAULT_AD_CODES


DEFAULT_CODE_SETS = CodeSets()


class LabelValue(enum.Enum):
    CASE = "case"
    CONTROL = "control"
    EXCLUDED = "excluded"


@dataclass(frozen=True)
class Label:
    value: LabelValue
    reason: str = ""

    def __post_init__(self):
        if self.value is LabelValue.EXCLUDED and not self.reason:
            raise ConfigError("an excluded label needs a reason")


NO_MCI = "no-mci-code"
AD_NOT_AFTER_MCI = "ad-on-or-before-mci"
SINGLE_ENCOUNTER = "single-encounter"
NO_PRIOR_NOTES = "no-notes-at-or-before-mci"
INSUFFICIENT_FOLLOW_UP = "insufficient-follow-up"
LATE_CONVERTER = "late-converter"

EXCLUSION_ORDER = (NO_MCI, AD_NOT_AFTER_MCI, SINGLE_ENCOUNTER, NO_PRIOR_NOTES)


def code_matches(code: str, patterns: Iterable[str]) -> bool:
    """True when the code equals a pattern or matches a ``*`` prefix."""
    for pat in patterns:
        if pat.endswith("*"):
            if code.startswith(pat[:-1]):
                return True
        elif code == pat:
            return True
    return False


def first_diagnosis_date(patient: PatientRecord, patterns: Iterable[str]) -> int | None:
    """Date of the earliest encounter carrying a matching code, else None."""
    patterns = tuple(patterns)
    for enc in patient.encounters:
        if any(code_matches(c, patterns) for c in enc.icd_codes):
            return enc.date
    return None


def _exclusion_reason(patient: PatientRecord, codes: CodeSets) -> str | None:
    """First exclusion rule the patient trips, in the fixed rule order."""
    mci = first_diagnosis_date(patient, codes.mci)
    if mci is None:
        return NO_MCI
    ad = first_diagnosis_date(patient, codes.ad)
    if ad is not None and ad <= mci:
        return AD_NOT_AFTER_MCI
    if len(patient.encounters) == 1:
        return SINGLE_ENCOUNTER
    if not collect_notes(patient, codes):
        return NO_PRIOR_NOTES
    return None


@dataclass
class ExclusionReport:
    excluded: list[tuple[str, str]] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    eligible_count: int = 0


def apply_exclusions(
    roster: Sequence[PatientRecord], codes: CodeSets = DEFAULT_CODE_SETS
) -> tuple[list[PatientRecord], ExclusionReport]:
    """Filter the roster, reporting which rule removed each patient."""
    report = ExclusionReport(counts={reason: 0 for reason in EXCLUSION_ORDER})
    eligible = []
    for patient in roster:
        reason = _exclusion_reason(patient, codes)
        if reason is None:
            eligible.append(patient)
        else:
            report.excluded.append((patient.patient_id, reason))
            report.counts[reason] += 1
    report.eligible_count = len(eligible)
    return eligible, report


def collect_notes(
    patient: PatientRecord, codes: CodeSets = DEFAULT_CODE_SETS
) -> list[Note]:
    """All nonempty notes timed at or before the first MCI date.

    The boundary is inclusive: notes written on the MCI encounter date
    belong to the history.  Encounter order makes the result time-ordered.
    """
    mci = first_diagnosis_date(patient, codes.mci)
    if mci is None:
        raise InputError(f"patient {patient.patient_id} has no MCI diagnosis")
    notes = []
    for enc in patient.encounters:
        if enc.date > mci:
            break
        for note in enc.notes:
            if note.text.strip():
                notes.append(note)
    return notes


def conversion_days(
    patient: PatientRecord, codes: CodeSets = DEFAULT_CODE_SETS
) -> int:
    """Days from first MCI to first AD, or to the last encounter if no AD."""
    mci = first_diagnosis_date(patient, codes.mci)
    if mci is None:
        raise InputError(f"patient {patient.patient_id} has no MCI diagnosis")
    ad = first_diagnosis_date(patient, codes.ad)
    if ad is not None:
        return ad - mci
    return patient.encounters[-1].date - mci


def label_no_restrict(
    patient: PatientRecord, codes: CodeSets = DEFAULT_CODE_SETS
) -> Label:
    """Case iff an AD diagnosis exists anywhere after the first MCI."""
    ad = first_diagnosis_date(patient, codes.ad)
    if ad is None:
        return Label(LabelValue.CONTROL)
    return Label(LabelValue.CASE)


def label_window(
    patient: PatientRecord,
    window_days: int,
    codes: CodeSets = DEFAULT_CODE_SETS,
    late_converter: str = "control",
) -> Label:
    """Label conversion within a window of days after the first MCI.

    Case: converted inside the window.  Control: observed beyond the
    window without converting inside it.  A patient whose follow-up ends
    inside the window without an AD code cannot be ruled either way and
    is excluded.  Patients who convert after the window count as controls
    by default; pass ``late_converter="excluded"`` to drop them instead.
    """
    if window_days <= 0:
        raise ConfigError("window_days must be positive")
    if late_converter not in ("control", "excluded"):
        raise ConfigError("late_converter must be 'control' or 'excluded'")
    mci = first_diagnosis_date(patient, codes.mci)
    if mci is None:
        raise InputError(f"patient {patient.patient_id} has no MCI diagnosis")
    ad = first_diagnosis_date(patient, codes.ad)
    if ad is not None and ad - mci <= window_days:
        return Label(LabelValue.CASE)
    if ad is not None:
        if late_converter == "control":
            return Label(LabelValue.CONTROL)
        return Label(LabelValue.EXCLUDED, LATE_CONVERTER)
    last = patient.encounters[-1].date
    if last - mci > window_days:
        return Label(LabelValue.CONTROL)
    return Label(LabelValue.EXCLUDED, INSUFFICIENT_FOLLOW_UP)


@dataclass(frozen=True)
class Setting:
    """One observation setting: no restriction, or a window in days."""

    window_days: int | None = None

    @property
    def name(self) -> str:
        if self.window_days is None:
            return "no_restrict"
        return f"window_{self.window_days}"


@dataclass(frozen=True)
class CohortEntry:
    patient_id: str
    label: Label
    conversion_days: int


@dataclass
class LabeledCohort:
    setting: Setting
    entries: list[CohortEntry]

    def counts(self) -> dict[str, int]:
        out = {"case": 0, "control": 0, "excluded": 0}
        for e in self.entries:
            out[e.label.value.value] += 1
        out["total"] = len(self.entries)
        return out


def build_cohort(
    eligible: Sequence[PatientRecord],
    setting: Setting,
    codes: CodeSets = DEFAULT_CODE_SETS,
    late_converter: str = "control",
) -> LabeledCohort:
    """Label every eligible patient under one observation setting."""
    entries = []
    for patient in eligible:
        if setting.window_days is None:
            label = label_no_restrict(patient, codes)
        else:
            label = label_window(patient, setting.window_days, codes, late_converter)
        entries.append(
            CohortEntry(
                patient_id=patient.patient_id,
                label=label,
                conversion_days=conversion_days(patient, codes),
            )
        )
    return LabeledCohort(setting=setting, entries=entries)


def _group_stats(values: list[float]) -> dict:
    if not values:
        return {"n": 0, "mean": None, "sd": None}
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return {"n": len(values), "mean": mean, "sd": sd}


def cohort_summary(
    labeled: LabeledCohort,
    roster: Sequence[PatientRecord],
    report: ExclusionReport,
    reference_year: int = 2020,
) -> dict:
    """Demographic and timing summary by label group.

    Counts cover the whole roster: labeled case/control/excluded plus the
    patients the exclusion rules removed, so the totals always reconcile.
    """
    by_id = {p.patient_id: p for p in roster}
    groups: dict[str, list[PatientRecord]] = {"case": [], "control": []}
    conv: dict[str, list[float]] = {"case": [], "control": []}
    excluded_in_setting = 0
    for entry in labeled.entries:
        key = entry.label.value.value
        if key == "excluded":
            excluded_in_setting += 1
            continue
        patient = by_id[entry.patient_id]
        groups[key].append(patient)
        conv[key].append(float(entry.conversion_days))

    summary: dict = {"setting": labeled.setting.name, "groups": {}}
    for key, members in groups.items():
        ages = [float(reference_year - p.birth_year) for p in members]
        sexes = {s: sum(1 for p in members if p.sex == s) for s in ("F", "M")}
        races: dict[str, int] = {}
        for p in members:
            races[p.race] = races.get(p.race, 0) + 1
        summary["groups"][key] = {
            "age": _group_stats(ages),
            "sex_counts": sexes,
            "race_counts": races,
            "days_to_event": _group_stats(conv[key]),
        }
    summary["counts"] = {
        "case": len(groups["case"]),
        "control": len(groups["control"]),
        "excluded_in_setting": excluded_in_setting,
        "excluded_by_rules": len(report.excluded),
        "roster_total": len(roster),
    }
    n_accounted = (
        summary["counts"]["case"]
        + summary["counts"]["control"]
        + excluded_in_setting
        + len(report.excluded)
    )
    if n_accounted != len(roster):
        raise InputError("cohort summary does not account for every patient")
    return summary
