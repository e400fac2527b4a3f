"""Canonicalized-alignment rewards and planning for garment manipulation."""
from __future__ import annotations

from .errors import ClothAlignError
from .geometry import PlanarTransform, TrimmedPlanarAligner, trimmed_align
from .rewards import (
    CanonicalizedAlignmentReward,
    canonicalization_reward,
    reward_factorized,
    reward_unfactorized,
)

__version__ = "0.1.0"

__all__ = [
    "ClothAlignError",
    "PlanarTransform",
    "TrimmedPlanarAligner",
    "trimmed_align",
    "CanonicalizedAlignmentReward",
    "canonicalization_reward",
    "reward_factorized",
    "reward_unfactorized",
]
