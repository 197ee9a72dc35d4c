import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prognote import tokenizer as tok
from prognote.errors import ConfigError, InputError


def make_vocab(words, pieces=()):
    tokens = list(tok.RESERVED) + list(words) + list(pieces)
    return tok.Vocab(tokens)


class TestPretokenize:
    def test_lowercases_and_splits_punctuation(self):
        assert tok.pretokenize("Denies chest pain.") == [
            "denies", "chest", "pain", "."
        ]

    def test_phi_token_stays_atomic(self):
        assert tok.pretokenize("seen by <phi> today") == [
            "seen", "by", "<phi>", "today"
        ]

    def test_commas_separate(self):
        assert tok.pretokenize("a,b") == ["a", ",", "b"]

    @given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126),
                   max_size=120))
    @settings(max_examples=150, deadline=None)
    def test_tokens_never_mix_word_and_punctuation(self, text):
        for token in tok.pretokenize(text):
            if token == "<phi>":
                continue
            kinds = {ch.isalnum() for ch in token}
            assert len(kinds) == 1


class TestWordpiece:
    def test_greedy_longest_match(self):
        vocab = make_vocab(["fore", "forget"], ["##ful", "##get"])
        assert tok.wordpiece("forgetful", vocab) == ["forget", "##ful"]

    def test_unmatchable_word_becomes_unk(self):
        vocab = make_vocab(["fore"])
        assert tok.wordpiece("zzz", vocab) == [tok.UNK]

    def test_partial_tail_failure_collapses_to_unk(self):
        # "fore" matches but nothing can continue, so the whole word is UNK
        vocab = make_vocab(["fore", "forget"])
        assert tok.wordpiece("forever", vocab) == [tok.UNK]

    def test_single_known_word(self):
        vocab = make_vocab(["memory"])
        assert tok.wordpiece("memory", vocab) == ["memory"]


class TestBuildVocab:
    def test_reserved_block_leads(self):
        vocab = tok.build_vocab(["one two", "two three"], max_size=64)
        assert tuple(vocab.tokens[:5]) == tok.RESERVED

    def test_frequency_then_alphabetical_order(self):
        vocab = tok.build_vocab(["beta beta apex", "apex beta cusp"], max_size=500)
        words = [t for t in vocab.tokens if len(t) > 2 and not t.startswith("##")]
        assert words.index("beta") < words.index("apex") < words.index("cusp")

    def test_max_size_caps_the_word_block(self):
        corpus = ["alpha beta gamma delta"] * 3
        unique_chars = sorted(set("alphabetagammadelta"))
        floor = len(tok.RESERVED) + 2 * len(unique_chars)
        vocab = tok.build_vocab(corpus, max_size=floor + 2)
        assert len(vocab) == floor + 2

    def test_alphabet_block_survives_tiny_max_size(self):
        vocab = tok.build_vocab(["hi ho"], max_size=6)
        for ch in "hio":
            assert ch in vocab.index
            assert "##" + ch in vocab.index
        assert "hi" not in vocab.index

    def test_rejects_max_size_inside_reserved_block(self):
        with pytest.raises(ConfigError):
            tok.build_vocab(["a"], max_size=4)


class TestEncode:
    def test_section_layout(self, small_vocab):
        seq = tok.encode_section("patient reports memory lapses", small_vocab, 16)
        assert seq.ids[0] == tok.CLS_ID
        sep_positions = np.flatnonzero(seq.ids == tok.SEP_ID)
        assert len(sep_positions) == 1
        assert seq.mask[: sep_positions[0] + 1].all()
        assert not seq.mask[sep_positions[0] + 1 :].any()
        assert (seq.segment_ids == 0).all()

    def test_truncation_keeps_structure(self, small_vocab):
        long_text = " ".join(["memory"] * 50)
        seq = tok.encode_section(long_text, small_vocab, 16)
        assert len(seq.ids) == 16
        assert seq.ids[0] == tok.CLS_ID
        assert seq.ids[seq.mask.sum() - 1] == tok.SEP_ID

    def test_pair_segments_and_truncation(self, small_vocab):
        a = " ".join(["memory"] * 30)
        b = " ".join(["denies"] * 30)
        seq = tok.encode_pair(a, b, small_vocab, 32)
        assert len(seq.ids) == 32
        seps = np.flatnonzero(seq.ids == tok.SEP_ID)
        assert len(seps) == 2
        # side lengths balanced within one token after longest-first trimming
        len_a = seps[0] - 1
        len_b = seps[1] - seps[0] - 1
        assert abs(int(len_a) - int(len_b)) <= 1
        assert (seq.segment_ids[: seps[0] + 1] == 0).all()
        assert (seq.segment_ids[seps[0] + 1 : seps[1] + 1] == 1).all()

    def test_padding_is_zero_id(self, small_vocab):
        seq = tok.encode_section("stable", small_vocab, 16)
        assert (seq.ids[seq.mask == 0] == tok.PAD_ID).all()

    def test_decode_inverts_simple_sections(self, small_vocab):
        text = "patient reports memory lapses"
        seq = tok.encode_section(text, small_vocab, 32)
        assert tok.decode(seq.ids, small_vocab) == text

    def test_decode_rejects_out_of_range(self, small_vocab):
        with pytest.raises(InputError):
            tok.decode([0, 2, len(small_vocab) + 5], small_vocab)

    @given(st.integers(min_value=6, max_value=20))
    @settings(max_examples=30, deadline=None)
    def test_mask_is_a_prefix(self, max_len):
        vocab = make_vocab(["alpha", "beta"])
        seq = tok.encode_section("alpha beta alpha", vocab, max_len)
        changes = np.diff(seq.mask)
        assert (changes <= 0).all()


class TestVocabIO:
    def test_save_load_roundtrip(self, small_vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        small_vocab.save(path)
        loaded = tok.Vocab.load(path)
        assert loaded.tokens == small_vocab.tokens

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ConfigError):
            tok.Vocab(list(tok.RESERVED) + ["a", "a"])

    def test_missing_reserved_block_rejected(self):
        with pytest.raises(ConfigError):
            tok.Vocab(["a", "b", "c", "d", "e"])
