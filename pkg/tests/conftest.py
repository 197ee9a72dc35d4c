import numpy as np
import pytest

from prognote import cohort, preprocess, synth, tokenizer
from prognote import encoder as enc


@pytest.fixture(scope="session")
def small_roster():
    cfg = synth.SynthConfig(n_patients=40, case_fraction=0.35, seed=101)
    return synth.generate_roster(cfg)


@pytest.fixture(scope="session")
def corpus(small_roster):
    """Preprocessed sections of every eligible pre-MCI note."""
    eligible, _ = cohort.apply_exclusions(small_roster)
    note_sections = []
    for patient in eligible:
        for note in cohort.collect_notes(patient):
            secs = [s.text for s in preprocess.preprocess_note(note.text)]
            if secs:
                note_sections.append(secs)
    return note_sections


@pytest.fixture(scope="session")
def small_vocab(corpus):
    texts = [sec for note in corpus for sec in note]
    return tokenizer.build_vocab(texts, max_size=300)


@pytest.fixture(scope="session")
def tiny_config(small_vocab):
    return enc.EncoderConfig(
        vocab_size=len(small_vocab), max_len=16, hidden=16, layers=1, heads=2, ffn=32
    )


@pytest.fixture(scope="session")
def tiny_params(tiny_config):
    return enc.init_params(tiny_config, seed=7)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
