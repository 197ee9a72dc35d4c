import pytest

from prognote import cohort as coh
from prognote import synth
from prognote.errors import ConfigError, InputError

from _oracles import oracle_label


def _patient(pid, encounters):
    return synth.PatientRecord(
        patient_id=pid, birth_year=1950, sex="F", race="white",
        encounters=tuple(encounters),
    )


def _enc(date, codes, note_texts=()):
    return synth.Encounter(
        date=date,
        icd_codes=tuple(codes),
        notes=tuple(synth.Note(time=date, text=t) for t in note_texts),
    )


class TestCodeMatching:
    @pytest.mark.parametrize(
        "code,patterns,expected",
        [
            ("331.83", {"331.83"}, True),
            ("G30.1", {"G30.*"}, True),
            ("G30.", {"G30.*"}, True),
            ("G31.84", {"G30.*"}, False),
            ("331.830", {"331.83"}, False),
        ],
    )
    def test_exact_and_prefix(self, code, patterns, expected):
        assert coh.code_matches(code, patterns) is expected

    def test_first_diagnosis_takes_earliest_encounter(self):
        p = _patient("x", [
            _enc(10, ["E11.9"], ["note"]),
            _enc(20, ["G31.84"], ["note"]),
            _enc(30, ["G31.84"]),
        ])
        assert coh.first_diagnosis_date(p, {"G31.84"}) == 20


class TestExclusions:
    def test_no_mci_code(self):
        p = _patient("x", [_enc(0, ["E11.9"], ["n"]), _enc(10, [], ["n"])])
        _, report = coh.apply_exclusions([p])
        assert report.excluded == [("x", coh.NO_MCI)]

    def test_ad_on_or_before_mci(self):
        p = _patient("x", [
            _enc(0, ["331.0"], ["n"]),
            _enc(10, ["331.83"], ["n"]),
        ])
        _, report = coh.apply_exclusions([p])
        assert report.excluded == [("x", coh.AD_NOT_AFTER_MCI)]

    def test_single_encounter(self):
        p = _patient("x", [_enc(0, ["331.83"], ["n"])])
        _, report = coh.apply_exclusions([p])
        assert report.excluded == [("x", coh.SINGLE_ENCOUNTER)]

    def test_no_notes_at_or_before_mci(self):
        p = _patient("x", [
            _enc(0, ["331.83"]),
            _enc(10, [], ["later note"]),
        ])
        _, report = coh.apply_exclusions([p])
        assert report.excluded == [("x", coh.NO_PRIOR_NOTES)]

    def test_blank_notes_do_not_count(self):
        p = _patient("x", [
            _enc(0, ["331.83"], ["   "]),
            _enc(10, [], ["later"]),
        ])
        _, report = coh.apply_exclusions([p])
        assert report.excluded == [("x", coh.NO_PRIOR_NOTES)]

    def test_rule_order_reports_first_trip(self):
        # no MCI code and only one encounter: the MCI rule wins
        p = _patient("x", [_enc(0, ["E11.9"])])
        _, report = coh.apply_exclusions([p])
        assert report.excluded == [("x", coh.NO_MCI)]


class TestCollectNotes:
    def test_boundary_is_inclusive(self):
        p = _patient("x", [
            _enc(0, [], ["before"]),
            _enc(10, ["331.83"], ["at mci"]),
            _enc(20, [], ["after"]),
        ])
        texts = [n.text for n in coh.collect_notes(p)]
        assert texts == ["before", "at mci"]

    def test_requires_mci(self):
        p = _patient("x", [_enc(0, [], ["n"]), _enc(10, [], ["n"])])
        with pytest.raises(InputError):
            coh.collect_notes(p)


class TestWindowLabels:
    def _converter(self, gap, follow_up_past_ad=60):
        return _patient("x", [
            _enc(0, ["331.83"], ["n"]),
            _enc(gap, ["331.0"]),
            _enc(gap + follow_up_past_ad, []),
        ])

    def _nonconverter(self, follow_up):
        return _patient("x", [
            _enc(0, ["331.83"], ["n"]),
            _enc(follow_up, []),
        ])

    def test_fast_converter_is_case(self):
        label = coh.label_window(self._converter(100), 365)
        assert label.value is coh.LabelValue.CASE

    def test_boundary_day_is_case(self):
        label = coh.label_window(self._converter(365), 365)
        assert label.value is coh.LabelValue.CASE

    def test_late_converter_defaults_to_control(self):
        label = coh.label_window(self._converter(400), 365)
        assert label.value is coh.LabelValue.CONTROL

    def test_late_converter_can_be_excluded(self):
        label = coh.label_window(self._converter(400), 365,
                                 late_converter="excluded")
        assert label.value is coh.LabelValue.EXCLUDED
        assert label.reason == coh.LATE_CONVERTER

    def test_short_follow_up_is_excluded(self):
        label = coh.label_window(self._nonconverter(200), 365)
        assert label.value is coh.LabelValue.EXCLUDED
        assert label.reason == coh.INSUFFICIENT_FOLLOW_UP

    def test_long_follow_up_is_control(self):
        label = coh.label_window(self._nonconverter(400), 365)
        assert label.value is coh.LabelValue.CONTROL

    def test_bad_window_rejected(self):
        with pytest.raises(ConfigError):
            coh.label_window(self._converter(10), 0)


class TestAgainstOracle:
    @pytest.mark.parametrize("window", [182, 365, 730, None])
    @pytest.mark.parametrize("late", ["control", "excluded"])
    def test_labels_match_brute_force(self, small_roster, window, late):
        eligible, report = coh.apply_exclusions(small_roster)
        excluded_ids = {pid for pid, _ in report.excluded}
        for p in small_roster:
            expected = oracle_label(p, window, late)
            if p.patient_id in excluded_ids:
                assert expected == "excluded"
                continue
            if window is None:
                got = coh.label_no_restrict(p)
            else:
                got = coh.label_window(p, window, late_converter=late)
            assert got.value.value == expected, p.patient_id

    def test_case_sets_nest_with_window_growth(self, small_roster):
        eligible, _ = coh.apply_exclusions(small_roster)
        case_sets = []
        for window in (182, 365, 730, None):
            setting = coh.Setting(window)
            labeled = coh.build_cohort(eligible, setting)
            case_sets.append({
                e.patient_id for e in labeled.entries
                if e.label.value is coh.LabelValue.CASE
            })
        for smaller, larger in zip(case_sets, case_sets[1:]):
            assert smaller <= larger


class TestSummary:
    def test_counts_reconcile(self, small_roster):
        eligible, report = coh.apply_exclusions(small_roster)
        labeled = coh.build_cohort(eligible, coh.Setting(365))
        counts = labeled.counts()
        assert counts["case"] + counts["control"] + counts["excluded"] == counts["total"]
        assert counts["total"] == len(eligible)

    def test_summary_has_every_group(self, small_roster):
        eligible, report = coh.apply_exclusions(small_roster)
        labeled = coh.build_cohort(eligible, coh.Setting(365))
        summary = coh.cohort_summary(labeled, small_roster, report)
        assert "case" in summary["groups"]
        assert "control" in summary["groups"]
        counts = summary["counts"]
        accounted = (counts["case"] + counts["control"]
                     + counts["excluded_in_setting"] + counts["excluded_by_rules"])
        assert accounted == counts["roster_total"] == len(small_roster)
