"""Passive enrollment: discover household speakers by agglomerative clustering
of the unlabeled adaptation set, then label test segments against the
discovered clusters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Embedding, SpeakerModel
from .plda import length_normalize

UNKNOWN = "unknown"
LINKAGES = ("average", "single", "complete")


@dataclass(frozen=True)
class AhcConfig:
    threshold: float
    linkage: str = "average"

    def __post_init__(self):
        if self.linkage not in LINKAGES:
            raise ValueError(f"linkage must be one of {LINKAGES}, got {self.linkage!r}")


@dataclass
class Clustering:
    clusters: list[list[str]]
    models: list[SpeakerModel]

    def __len__(self):
        return len(self.clusters)

    def labels(self) -> dict[str, str]:
        return {u: m.model_id for m, c in zip(self.models, self.clusters) for u in c}


def cosine_matrix(X: np.ndarray) -> np.ndarray:
    Xn = length_normalize(X)
    return Xn @ Xn.T


def ahc_merges(S: np.ndarray, threshold: float, linkage: str = "average") -> list[list[int]]:
    """Greedy agglomeration on a similarity matrix.

    Repeatedly merges the most similar pair of clusters while that similarity
    exceeds ``threshold``. Clusters are indexed by their smallest member, and
    ties go to the lexicographically smallest (i, j) pair.
    """
    n = len(S)
    sim = np.array(S, dtype=np.float64, copy=True)
    np.fill_diagonal(sim, -np.inf)
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    members = [[i] for i in range(n)]
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    while active.sum() > 1:
        masked = np.where(upper & active[:, None] & active[None, :], sim, -np.inf)
        flat = int(np.argmax(masked))  # row-major: first max is the smallest (i, j)
        i, j = divmod(flat, n)
        if not masked[i, j] > threshold:
            break
        if linkage == "average":
            merged = (sizes[i] * sim[i] + sizes[j] * sim[j]) / (sizes[i] + sizes[j])
        elif linkage == "single":
            merged = np.maximum(sim[i], sim[j])
        else:
            merged = np.minimum(sim[i], sim[j])
        sim[i, :] = merged
        sim[:, i] = merged
        sim[i, i] = -np.inf
        active[j] = False
        sizes[i] += sizes[j]
        members[i] += members[j]
        members[j] = []
    return [sorted(members[i]) for i in range(n) if active[i]]


def ahc_cluster(embeddings: Sequence[Embedding], config: AhcConfig, prefix: str = "c") -> Clustering:
    """Cluster embeddings by cosine similarity; returns the partition and one
    model per cluster (unit-length mean, count = cluster size)."""
    if not embeddings:
        raise ValueError("need at least one embedding to cluster")
    items = sorted(embeddings, key=lambda e: e.utt_id)
    X = np.stack([e.vector for e in items])
    groups = ahc_merges(cosine_matrix(X), config.threshold, config.linkage)
    Xn = length_normalize(X)
    clusters, models = [], []
    for c, idx in enumerate(groups):
        clusters.append([items[i].utt_id for i in idx])
        V = Xn[idx]
        models.append(
            SpeakerModel(
                f"{prefix}{c}",
                length_normalize(V.mean(axis=0)),
                float(len(idx)),
                raw_set=V,
                member_ids=tuple(clusters[-1]),
            )
        )
    return Clustering(clusters, models)


def assign_tests(
    clusters: Sequence[SpeakerModel], tests: Sequence[Embedding], threshold: float
) -> list[tuple[str, float]]:
    """Nearest cluster by cosine, or UNKNOWN when the best score does not exceed
    ``threshold``. Returns (label, best score) per test."""
    if not clusters:
        raise ValueError("need at least one cluster")
    C = length_normalize(np.stack([m.centroid for m in clusters]))
    out = []
    for t in tests:
        s = C @ length_normalize(t.vector)
        k = int(np.argmax(s))
        label = clusters[k].model_id if s[k] > threshold else UNKNOWN
        out.append((label, float(s[k])))
    return out
