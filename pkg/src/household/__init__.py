"""Household speaker recognition: scoring back-ends, speaker-model adaptation,
passive enrollment and evaluation on synthetic PLDA-generated protocols."""

from .core import Embedding, Household, HouseholdProtocol, SpeakerModel, Trial, TrialScore
from .plda import PldaModel, SphericalPlda, fit_spherical, llr_by_the_book, posterior
from .scoring import BackendConfig, score, score_all

__all__ = [
    "BackendConfig",
    "Embedding",
    "Household",
    "HouseholdProtocol",
    "PldaModel",
    "SpeakerModel",
    "SphericalPlda",
    "Trial",
    "TrialScore",
    "fit_spherical",
    "llr_by_the_book",
    "posterior",
    "score",
    "score_all",
]
__version__ = "0.1.0"
