"""Scoring back-ends over (SpeakerModel, test embedding) pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Embedding, SpeakerModel
from .plda import PldaModel, SphericalPlda, length_normalize, llr_batch

CSEA = "cosine_embedding_avg"
CSSA = "cosine_score_avg"
SPHERICAL_PLDA = "spherical_plda"
FULL_PLDA = "full_plda"
KINDS = (CSEA, CSSA, SPHERICAL_PLDA, FULL_PLDA)

# command-line names
CLI_NAMES = {"csea": CSEA, "cssa": CSSA, "sph-plda": SPHERICAL_PLDA, "full-plda": FULL_PLDA}


class BackendConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    """Back-end selection.

    ``count_scale`` multiplies the enrollment zero-order statistic before PLDA
    scoring (1.0 leaves counts untouched).
    """

    kind: str
    model: PldaModel | SphericalPlda | None = None
    normalize_inputs: bool = True
    count_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BackendConfigError(f"unknown back-end {self.kind!r}; expected one of {KINDS}")
        if self.is_plda:
            if self.model is None:
                raise BackendConfigError(f"{self.kind} requires a PLDA model")
            expected = SphericalPlda if self.kind == SPHERICAL_PLDA else PldaModel
            if not isinstance(self.model, expected):
                raise BackendConfigError(
                    f"{self.kind} requires a {expected.__name__}, got {type(self.model).__name__}"
                )
        elif not self.normalize_inputs:
            raise BackendConfigError("cosine back-ends require normalize_inputs=True")
        if not self.count_scale > 0:
            raise BackendConfigError("count_scale must be positive")

    @property
    def is_plda(self) -> bool:
        return self.kind in (SPHERICAL_PLDA, FULL_PLDA)

    @property
    def is_cosine(self) -> bool:
        return not self.is_plda

    def prepare(self, x: np.ndarray) -> np.ndarray:
        """Ingestion transform applied to every embedding before use."""
        x = np.asarray(x, dtype=np.float64)
        return length_normalize(x) if self.normalize_inputs else x

    def finalize_centroid(self, c: np.ndarray) -> np.ndarray:
        """Cosine back-ends keep unit-length centroids; PLDA keeps raw means."""
        return length_normalize(c) if self.is_cosine else np.asarray(c, dtype=np.float64)


def cosine_backend() -> BackendConfig:
    return BackendConfig(CSEA)


def _vector(test) -> np.ndarray:
    return test.vector if isinstance(test, Embedding) else np.asarray(test, dtype=np.float64)


def _score_rows(backend: BackendConfig, models: Sequence[SpeakerModel], x: np.ndarray) -> np.ndarray:
    # Row-wise reductions so that a batch of one gives bit-identical results
    # to the same model inside a larger batch.
    x = backend.prepare(x)
    if backend.kind == CSEA:
        C = np.stack([m.centroid for m in models])
        C = C / np.sqrt((C * C).sum(axis=1))[:, None]
        return (C * x).sum(axis=1)
    if backend.kind == CSSA:
        out = np.empty(len(models))
        for i, m in enumerate(models):
            if m.raw_set is None:
                raise BackendConfigError(
                    f"cosine score averaging needs the enrolled vectors of model {m.model_id}"
                )
            R = m.raw_set / np.sqrt((m.raw_set * m.raw_set).sum(axis=1))[:, None]
            out[i] = (R * x).sum(axis=1).mean()
        return out
    C = np.stack([m.centroid for m in models])
    counts = np.array([m.effective_count for m in models]) * backend.count_scale
    return llr_batch(backend.model, C, counts, x, 1.0)


def score(backend: BackendConfig, model: SpeakerModel, test: Embedding | np.ndarray) -> float:
    x = _vector(test)
    if x.shape[0] != model.dim:
        raise ValueError(f"dimension mismatch: model {model.dim}, test {x.shape[0]}")
    return float(_score_rows(backend, [model], x)[0])


def score_all(
    backend: BackendConfig, models: Sequence[SpeakerModel], test: Embedding | np.ndarray
) -> list[float]:
    if not models:
        raise ValueError("score_all needs at least one model")
    x = _vector(test)
    for m in models:
        if m.dim != x.shape[0]:
            raise ValueError(f"dimension mismatch: model {m.model_id} has {m.dim}, test {x.shape[0]}")
    return [float(s) for s in _score_rows(backend, models, x)]


def score_matrix(backend: BackendConfig, models: Sequence[SpeakerModel], X: np.ndarray) -> np.ndarray:
    """(n_tests, n_models) score matrix; row i equals score_all(models, X[i])."""
    X = np.atleast_2d(X)
    return np.array([_score_rows(backend, models, x) for x in X]).reshape(len(X), len(models))
