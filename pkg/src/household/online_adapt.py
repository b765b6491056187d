"""Active enrollment followed by threshold-gated online centroid updates."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Embedding, ProtocolError, SpeakerModel
from .scoring import BackendConfig, score_all

HARMONIC = "harmonic"


@dataclass(frozen=True)
class OnlineConfig:
    """``alpha`` is a constant smoothing factor in [0, 1] or ``"harmonic"``,
    which uses 1/(n+1) with n the number of items already in the centroid."""

    tau: float
    alpha: float | str = HARMONIC

    def __post_init__(self):
        if isinstance(self.alpha, str):
            if self.alpha != HARMONIC:
                raise ValueError(f"unknown smoothing policy {self.alpha!r}")
        elif not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    def factor(self, n_absorbed: int) -> float:
        if self.alpha == HARMONIC:
            return 1.0 / (n_absorbed + 1)
        return float(self.alpha)


@dataclass(frozen=True)
class LogEntry:
    utt_id: str
    accepted: bool
    model_id: str | None
    score: float


@dataclass(frozen=True)
class OnlineState:
    models: tuple[SpeakerModel, ...]
    weights: tuple[np.ndarray, ...]
    update_log: tuple[LogEntry, ...] = ()

    def model(self, model_id: str) -> SpeakerModel:
        for m in self.models:
            if m.model_id == model_id:
                return m
        raise KeyError(model_id)

    @property
    def n_accepted(self) -> int:
        return sum(e.accepted for e in self.update_log)


def effective_count(weights: Sequence[float] | np.ndarray) -> float:
    """exp of the Shannon entropy (nats) of a weight vector on the simplex."""
    p = np.asarray(weights, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("weights must be finite and non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {p.sum()!r}")
    nz = p[p > 0]
    return math.exp(-float(np.sum(nz * np.log(nz))))


def _mean_model(model_id, vectors, backend, keep_raw):
    vectors = np.atleast_2d(vectors)
    return SpeakerModel(
        model_id=model_id,
        centroid=backend.finalize_centroid(vectors.mean(axis=0)),
        effective_count=float(len(vectors)),
        raw_set=vectors if keep_raw else None,
    )


def enroll(
    members: Mapping[str, Sequence[Embedding] | np.ndarray],
    backend: BackendConfig,
    keep_raw: bool | None = None,
) -> OnlineState:
    """One model per member from its labeled enrollment vectors.

    Vectors go through the back-end's ingestion transform first; raw member
    vectors are retained for score averaging back-ends.
    """
    if keep_raw is None:
        keep_raw = backend.kind == "cosine_score_avg"
    models, weights = [], []
    for model_id, items in members.items():
        if len(items) == 0:
            raise ProtocolError(f"member {model_id} has no enrollment utterances")
        X = np.stack([e.vector if isinstance(e, Embedding) else np.asarray(e, float) for e in items])
        X = backend.prepare(X)
        models.append(_mean_model(model_id, X, backend, keep_raw))
        weights.append(np.full(len(X), 1.0 / len(X)))
    return OnlineState(tuple(models), tuple(weights))


def step(state: OnlineState, config: OnlineConfig, backend: BackendConfig, x: Embedding) -> OnlineState:
    """Score ``x`` against every model and, if the best score clears the gate,
    fold ``x`` into that model only."""
    scores = score_all(backend, state.models, x)
    k = int(np.argmax(scores))  # first maximum: lowest index wins ties
    best = scores[k]
    if not best > config.tau:
        entry = LogEntry(x.utt_id, False, None, best)
        return replace(state, update_log=state.update_log + (entry,))

    model = state.models[k]
    w = state.weights[k]
    a = config.factor(len(w))
    v = backend.prepare(x.vector)
    centroid = backend.finalize_centroid(a * v + (1.0 - a) * model.centroid)
    new_w = np.append((1.0 - a) * w, a)
    raw = None if model.raw_set is None else np.vstack([model.raw_set, v])
    updated = replace(model, centroid=centroid, effective_count=effective_count(new_w), raw_set=raw)

    models = state.models[:k] + (updated,) + state.models[k + 1 :]
    weights = state.weights[:k] + (new_w,) + state.weights[k + 1 :]
    entry = LogEntry(x.utt_id, True, model.model_id, best)
    return OnlineState(models, weights, state.update_log + (entry,))


def run_stream(
    state: OnlineState, config: OnlineConfig, backend: BackendConfig, stream: Iterable[Embedding]
) -> OnlineState:
    for x in stream:
        state = step(state, config, backend, x)
    return state


def write_update_log(state: OnlineState, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e in state.update_log:
            decision = "accept" if e.accepted else "reject"
            f.write(f"{e.utt_id}\t{decision}\t{e.model_id or '-'}\t{e.score!r}\n")
