"""Independent reference implementations the tests compare against.

Everything here is written the slow, obvious way on purpose: pairwise
AUC in O(n^2), cohort labels straight from their definitions, gradients
by finite differences.  None of it shares code with the package.
"""

from __future__ import annotations

import numpy as np


def pairwise_auc(scores, labels) -> float:
    """AUC as the fraction of concordant case/control pairs, ties half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def confusion_by_hand(scores, labels, threshold):
    tp = fp = fn = tn = 0
    for s, y in zip(scores, labels):
        pred = 1 if s >= threshold else 0
        if pred == 1 and y == 1:
            tp += 1
        elif pred == 1 and y == 0:
            fp += 1
        elif pred == 0 and y == 1:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def _first_code_date(patient, patterns):
    for enc in patient.encounters:
        for code in enc.icd_codes:
            for pat in patterns:
                if pat.endswith("*"):
                    if code.startswith(pat[:-1]):
                        return enc.date
                elif code == pat:
                    return enc.date
    return None


MCI_PATTERNS = ("331.83", "G31.84")
AD_PATTERNS = ("331.0", "G30.*")


def oracle_label(patient, window_days, late_converter="control"):
    """Label one patient from first principles.

    Returns "case", "control", or "excluded".  ``window_days=None``
    means no restriction.  Mirrors the written labeling rules, not the
    package code.
    """
    mci = _first_code_date(patient, MCI_PATTERNS)
    if mci is None:
        return "excluded"
    ad = _first_code_date(patient, AD_PATTERNS)
    if ad is not None and ad <= mci:
        return "excluded"
    if len(patient.encounters) == 1:
        return "excluded"
    has_prior_note = any(
        note.text.strip()
        for enc in patient.encounters
        if enc.date <= mci
        for note in enc.notes
    )
    if not has_prior_note:
        return "excluded"

    if window_days is None:
        return "case" if ad is not None else "control"
    if ad is not None:
        if ad - mci <= window_days:
            return "case"
        return "control" if late_converter == "control" else "excluded"
    if patient.encounters[-1].date - mci > window_days:
        return "control"
    return "excluded"


def fd_gradient(loss_fn, weights, h=1e-6):
    """Central-difference gradient of a scalar function of a vector."""
    weights = np.asarray(weights, dtype=np.float64)
    grad = np.zeros_like(weights)
    for i in range(len(weights)):
        bumped = weights.copy()
        bumped[i] += h
        up = loss_fn(bumped)
        bumped[i] -= 2 * h
        down = loss_fn(bumped)
        grad[i] = (up - down) / (2 * h)
    return grad
