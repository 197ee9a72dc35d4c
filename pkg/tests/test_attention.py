import xml.etree.ElementTree as ET

import numpy as np
import pytest

from prognote import attention as attn
from prognote import tokenizer as tok
from prognote.errors import InputError

XHTML = "{http://www.w3.org/1999/xhtml}"


class TestWeights:
    def test_normalized_over_content_positions(self, small_vocab, tiny_params):
        seq = tok.encode_section("patient reports memory lapses", small_vocab, 16)
        w = attn.attention_weights(tiny_params, seq)
        assert w.sum() == pytest.approx(1.0)
        for pos, tid in enumerate(seq.ids):
            if int(tid) in attn.SPECIAL_IDS or seq.mask[pos] == 0:
                assert w[pos] == 0.0

    def test_attribution_drops_structure_tokens(self, small_vocab, tiny_params):
        text = "denies chest pain"
        attribution = attn.attribute_section(
            tiny_params, text, small_vocab, "s0", max_len=16
        )
        assert tok.CLS not in attribution.tokens
        assert tok.SEP not in attribution.tokens
        assert len(attribution.tokens) == len(attribution.weights)

    def test_token_weight_alignment_enforced(self):
        with pytest.raises(InputError):
            attn.SectionAttribution("h", ["a", "b"], [0.5])


class TestReport:
    def _attributions(self, params, vocab):
        texts = [
            "patient reports memory lapses",
            "seen by <phi> , md",
            "lungs clear to auscultation",
        ]
        return [
            attn.attribute_section(params, t, vocab, f"section {i}", 16)
            for i, t in enumerate(texts)
        ]

    def test_document_is_well_formed_xml(self, small_vocab, tiny_params):
        doc = attn.render_report("demo", self._attributions(tiny_params, small_vocab))
        root = ET.fromstring(doc)
        assert root.tag == f"{XHTML}html"

    def test_spans_carry_weights_that_match(self, small_vocab, tiny_params):
        attributions = self._attributions(tiny_params, small_vocab)
        doc = attn.render_report("demo", attributions)
        root = ET.fromstring(doc)
        sections = root.findall(f".//{XHTML}div")
        assert len(sections) == len(attributions)
        for div, attribution in zip(sections, attributions):
            spans = div.findall(f".//{XHTML}span")
            got = [float(s.get("data-weight")) for s in spans]
            np.testing.assert_array_equal(got, attribution.weights)
            assert [s.text for s in spans] == attribution.tokens

    def test_phi_token_is_escaped_text(self, small_vocab, tiny_params):
        doc = attn.render_report("demo", self._attributions(tiny_params, small_vocab))
        assert "&lt;phi&gt;" in doc
        root = ET.fromstring(doc)
        texts = [s.text for s in root.findall(f".//{XHTML}span")]
        assert "<phi>" in texts

    def test_highlight_paragraph_present_and_consistent(self, small_vocab,
                                                        tiny_params):
        attributions = self._attributions(tiny_params, small_vocab)
        mean_hit, mean_rest = attn.highlight_comparison(attributions, ["memory"])
        doc = attn.render_report("demo", attributions, highlight_terms=["memory"])
        assert f"{mean_hit:.4f}" in doc
        assert f"{mean_rest:.4f}" in doc

    def test_highlight_mean_over_matching_tokens(self):
        a = attn.SectionAttribution("h", ["memory", "loss", "##s"],
                                    [0.6, 0.3, 0.1])
        hit, rest = attn.highlight_comparison([a], ["memory", "s"])
        assert hit == pytest.approx((0.6 + 0.1) / 2)
        assert rest == pytest.approx(0.3)

    def test_export_creates_parents(self, small_vocab, tiny_params, tmp_path):
        target = tmp_path / "deep" / "nested" / "report.html"
        attn.export_attention_report(
            str(target), "t", self._attributions(tiny_params, small_vocab)
        )
        assert target.exists()
        ET.fromstring(target.read_text())
