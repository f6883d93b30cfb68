"""Shared enums, label conventions and seed derivation."""

from __future__ import annotations

import enum

import numpy as np

BACKGROUND = 0
STRUCTURE = 1
DISTRACTOR = 2
LABEL_CLASSES = (BACKGROUND, STRUCTURE, DISTRACTOR)
LABEL_NAMES = {BACKGROUND: "background", STRUCTURE: "structure", DISTRACTOR: "distractor"}


class PhantomKind(str, enum.Enum):
    KNEE_STATIC = "KneeStatic"
    CARDIAC_TWO_PHASE = "CardiacTwoPhase"


def derive_seed(*entropy: int) -> int:
    """Deterministic 64-bit sub-seed from a tuple of non-negative integers."""
    ss = np.random.SeedSequence([int(e) for e in entropy])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
