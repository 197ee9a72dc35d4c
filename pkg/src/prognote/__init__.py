"""prognote: predict MCI-to-AD progression from clinical progress notes.

The pipeline runs end to end on a single desk machine: synthesize a small
EHR roster, phenotype it into case/control cohorts, scrub and section the
notes, tokenize with WordPiece, pretrain a compact transformer encoder on
the note text, fine-tune a patient-level classifier on top of max-pooled
section embeddings, and compare it against a bag-of-words baseline.
"""

__version__ = "0.1.0"
