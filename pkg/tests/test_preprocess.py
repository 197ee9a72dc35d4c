import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prognote import preprocess as pp


class TestDeidentify:
    def test_numeric_dates_are_scrubbed(self):
        out = pp.deidentify("Seen on 03/14/2019 for follow-up.")
        assert "03/14/2019" not in out
        assert pp.PHI_TOKEN in out

    def test_month_name_dates_are_scrubbed(self):
        out = pp.deidentify("Admitted January 3, 2020 after a fall.")
        assert "January 3" not in out

    @pytest.mark.parametrize(
        "text,gone",
        [
            ("Contact: jdoe@example.org", "jdoe@example.org"),
            ("Call 555-867-5309 with results.", "555-867-5309"),
            ("MRN 12345678 on file.", "12345678"),
            ("Lives at ZIP 60614.", "60614"),
        ],
    )
    def test_identifier_patterns(self, text, gone):
        out = pp.deidentify(text)
        assert gone not in out
        assert pp.PHI_TOKEN in out

    def test_titled_name_keeps_title(self):
        out = pp.deidentify("Referred by Dr. Alice Morgan today.")
        assert "Alice Morgan" not in out
        assert "Dr." in out

    def test_credentialed_name_keeps_credential(self):
        out = pp.deidentify("Signed by Raymond Ortiz, MD")
        assert "Raymond Ortiz" not in out
        assert ", MD" in out

    def test_plain_prose_untouched(self):
        text = "patient reports no new complaints this visit"
        assert pp.deidentify(text) == text


class TestClean:
    def test_removes_control_characters(self):
        assert "\x07" not in pp.clean("alert\x07sound")

    def test_ascii_only_output(self):
        out = pp.clean("café visit — stable")
        assert all(ord(ch) < 128 for ch in out)

    def test_collapses_horizontal_whitespace(self):
        assert pp.clean("a  \t  b") == "a b"

    def test_newlines_survive(self):
        assert pp.clean("one\ntwo") == "one\ntwo"

    @given(st.text(max_size=300))
    @settings(max_examples=200, deadline=None)
    def test_idempotent(self, text):
        """Cleaning a cleaned string changes nothing."""
        once = pp.clean(text)
        assert pp.clean(once) == once

    @given(st.text(max_size=300))
    @settings(max_examples=200, deadline=None)
    def test_output_charset(self, text):
        out = pp.clean(text)
        allowed = set(string.printable) - set("\t\r\x0b\x0c")
        assert set(out) <= allowed


class TestSplitSections:
    def test_blank_lines_dropped(self):
        secs = pp.split_sections("first\n\n\nsecond\n")
        assert [s.text for s in secs] == ["first", "second"]

    def test_indices_are_positional(self):
        secs = pp.split_sections("a\nb\nc")
        assert [s.section_index for s in secs] == [0, 1, 2]

    def test_empty_note_gives_no_sections(self):
        assert pp.split_sections("") == []
        assert pp.split_sections("\n\n") == []


class TestPreprocessNote:
    def test_pipeline_output_is_clean_and_deidentified(self):
        note = "Seen 01/02/2020\tby Dr. Jane Smith\nplan → continue"
        secs = pp.preprocess_note(note)
        joined = "\n".join(s.text for s in secs)
        assert "01/02/2020" not in joined
        assert "Jane Smith" not in joined
        assert "\t" not in joined
        assert all(ord(c) < 128 for c in joined)

    def test_sections_contain_no_newlines(self):
        for sec in pp.preprocess_note("a\nb\nc"):
            assert "\n" not in sec.text
