"""Batch adaptation over a household's full unlabeled set.

Three semi-supervised algorithms, each with a background label for points
that belong to no enrolled member:

* k-means with fixed labeled assignments and a similarity gate,
* variational Bayes over a PLDA mixture with an extra marginal component,
* label propagation on a kernel graph after outlier pre-filtering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.special import logsumexp

from .core import Embedding, SpeakerModel
from .plda import PldaModel, SphericalPlda
from .scoring import BackendConfig, score_matrix

BACKGROUND = -1

# similarity(models, X) -> (n_points, n_models)
Similarity = Callable[[Sequence[SpeakerModel], np.ndarray], np.ndarray]


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class KMeansConfig:
    tau: float
    max_iters: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1 or not self.tol > 0:
            raise ValueError("max_iters must be >= 1 and tol > 0")


@dataclass(frozen=True)
class VbConfig:
    tau: float
    f_a: float = 1.0
    f_b: float = 1.0
    max_iters: int = 100
    elbo_tol: float = 1e-6

    def __post_init__(self):
        if not (self.f_a > 0 and self.f_b > 0):
            raise ValueError("f_a and f_b must be positive")
        if self.max_iters < 1 or not self.elbo_tol > 0:
            raise ValueError("max_iters must be >= 1 and elbo_tol > 0")

    def log_priors(self, n_members: int) -> np.ndarray:
        """log pi for the members followed by the background component."""
        log_bg = -np.logaddexp(0.0, -self.tau)
        log_rest = -np.logaddexp(0.0, self.tau)
        return np.append(np.full(n_members, log_rest - math.log(n_members)), log_bg)


@dataclass(frozen=True)
class LpConfig:
    tau: float
    clamp: float = 0.95
    kernel_width: float | str = "median-heuristic"
    max_iters: int = 100
    tol: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.clamp < 1.0:
            raise ValueError("clamp must lie in (0, 1)")
        if isinstance(self.kernel_width, str):
            if self.kernel_width != "median-heuristic":
                raise ValueError(f"unknown kernel width rule {self.kernel_width!r}")
        elif not self.kernel_width > 0:
            raise ValueError("kernel_width must be positive")
        if self.max_iters < 1 or not self.tol > 0:
            raise ValueError("max_iters must be >= 1 and tol > 0")


@dataclass
class AssignmentResult:
    """Labels for all points: enrollment rows first, then unlabeled rows.

    ``labels`` holds member indices into ``member_ids`` or BACKGROUND (-1).
    """

    member_ids: tuple[str, ...]
    utt_ids: tuple[str, ...]
    vectors: np.ndarray
    labels: np.ndarray
    n_labeled: int
    models: list[SpeakerModel]
    scores: np.ndarray
    iterations: int = 0
    objective: list[float] = field(default_factory=list)
    responsibilities: np.ndarray | None = None

    def label_name(self, i: int) -> str:
        k = int(self.labels[i])
        return "background" if k == BACKGROUND else self.member_ids[k]

    def unlabeled_labels(self) -> np.ndarray:
        return self.labels[self.n_labeled :]

    def n_background(self) -> int:
        return int(np.sum(self.unlabeled_labels() == BACKGROUND))


def _stack(items) -> np.ndarray:
    if isinstance(items, np.ndarray):
        return np.atleast_2d(np.asarray(items, dtype=np.float64))
    if len(items) == 0:
        return np.zeros((0, 0))
    return np.stack([e.vector if isinstance(e, Embedding) else np.asarray(e, float) for e in items])


def _ids(items, prefix) -> list[str]:
    if isinstance(items, np.ndarray):
        return [f"{prefix}{i}" for i in range(len(items))]
    return [e.utt_id if isinstance(e, Embedding) else f"{prefix}{i}" for i, e in enumerate(items)]


def _setup(enroll, unlabeled, prepare):
    member_ids = tuple(enroll)
    blocks, labels, ids = [], [], []
    for k, m in enumerate(member_ids):
        X = _stack(enroll[m])
        if len(X) == 0:
            raise ValueError(f"member {m} has no labeled points")
        blocks.append(X)
        labels += [k] * len(X)
        ids += _ids(enroll[m], f"{m}:")
    U = _stack(unlabeled)
    ids += _ids(unlabeled, "u")
    L = np.vstack(blocks)
    d = L.shape[1]
    X = np.vstack([L, U.reshape(-1, d)]) if len(U) else L
    X = prepare(X)
    return member_ids, tuple(ids), X, np.array(labels, dtype=int), len(L)


def models_from_assignment(
    result: AssignmentResult, finalize: Callable[[np.ndarray], np.ndarray] | None = None
) -> list[SpeakerModel]:
    """Per member: mean of every point labeled with that member, count = #points."""
    models = []
    for k, m in enumerate(result.member_ids):
        X = result.vectors[result.labels == k]
        c = X.mean(axis=0)
        models.append(
            SpeakerModel(m, finalize(c) if finalize else c, float(len(X)), raw_set=X)
        )
    return models


def _backend_similarity(backend: BackendConfig) -> Similarity:
    def sim(models, X):
        return score_matrix(backend, models, X)

    return sim


# ---------------------------------------------------------------------------
# semi-supervised k-means


def gated_objective(S_assigned: np.ndarray, n_background: int, tau: float) -> float:
    """Sum of (1 - similarity) over assigned points plus (1 - tau) per
    background point; the quantity that assignment and update steps decrease."""
    return float(np.sum(1.0 - S_assigned) + n_background * (1.0 - tau))


def kmeans_semisup(
    enroll: Mapping[str, Sequence[Embedding] | np.ndarray],
    unlabeled: Sequence[Embedding] | np.ndarray,
    config: KMeansConfig,
    similarity: BackendConfig | Similarity,
    finalize: Callable[[np.ndarray], np.ndarray] | None = None,
) -> AssignmentResult:
    """Semi-supervised k-means with a background class.

    ``similarity`` is a scoring back-end or any callable returning a
    (points, models) similarity matrix. With a back-end, inputs go through its
    ingestion transform and centroids through its finalisation.
    """
    if isinstance(similarity, BackendConfig):
        backend = similarity
        prepare, sim = backend.prepare, _backend_similarity(backend)
        finalize = finalize or backend.finalize_centroid
    else:
        prepare, sim = (lambda X: X), similarity

    member_ids, utt_ids, X, fixed, n_lab = _setup(enroll, unlabeled, prepare)
    U = X[n_lab:]
    labels = np.concatenate([fixed, np.full(len(U), BACKGROUND)])
    result = AssignmentResult(member_ids, utt_ids, X, labels, n_lab, [], np.zeros(len(X)))
    models = models_from_assignment(result, finalize)

    history = []
    iterations = 0
    scores = np.zeros(len(X))
    for iterations in range(1, config.max_iters + 1):
        if len(U):
            S = np.asarray(sim(models, U), dtype=np.float64).reshape(len(U), len(models))
            best = S.argmax(axis=1)
            top = S[np.arange(len(U)), best]
            labels[n_lab:] = np.where(top > config.tau, best, BACKGROUND)
        result.labels = labels
        new_models = models_from_assignment(result, finalize)
        shift = max(float(np.max(np.abs(a.centroid - b.centroid))) for a, b in zip(models, new_models))
        models = new_models

        S_all = np.asarray(sim(models, X), dtype=np.float64).reshape(len(X), len(models))
        scores = np.where(labels >= 0, S_all[np.arange(len(X)), np.maximum(labels, 0)], S_all.max(axis=1))
        history.append(
            gated_objective(scores[labels >= 0], int(np.sum(labels == BACKGROUND)), config.tau)
        )
        if shift < config.tol:
            break

    result.models = models
    result.scores = scores
    result.iterations = iterations
    result.objective = history
    return result


# ---------------------------------------------------------------------------
# variational Bayes with a background component


def _vb_space(model: PldaModel | SphericalPlda, X: np.ndarray):
    """Centered data in a basis where W = I, plus per-dimension B variances."""
    if isinstance(model, PldaModel):
        Z = model.project(X)
        lam, _ = model.diag()
        return Z, lam
    if isinstance(model, SphericalPlda):
        Z = model.center(X) / math.sqrt(model.sigma_w2)
        return Z, np.full(X.shape[1], model.sigma_b2 / model.sigma_w2)
    raise TypeError(f"unsupported PLDA model {type(model).__name__}")


def vb_cluster(
    enroll: Mapping[str, Sequence[Embedding] | np.ndarray],
    unlabeled: Sequence[Embedding] | np.ndarray,
    model: PldaModel | SphericalPlda,
    config: VbConfig,
    prepare: Callable[[np.ndarray], np.ndarray] | None = None,
) -> AssignmentResult:
    """Semi-supervised VB clustering over a PLDA mixture.

    Member k emits N(y_k, W) with y_k ~ N(0, B); the background component is
    the marginal N(0, B + W). Labeled responsibilities stay one-hot. The
    objective is the ELBO with the expected log-likelihood scaled by f_a and
    the KL of the speaker means scaled by f_b. Mixing weights stay fixed.
    """
    member_ids, utt_ids, X, fixed, n_lab = _setup(enroll, unlabeled, prepare or (lambda v: v))
    Z, lam = _vb_space(model, X)
    n, d = Z.shape
    K = len(member_ids)
    log_pi = config.log_priors(K)

    # log N(x | 0, diag(lam) + I), the background likelihood
    log_bg = -0.5 * (d * math.log(2 * math.pi) + np.log1p(lam).sum() + (Z**2 / (1.0 + lam)).sum(axis=1))
    sq = (Z**2).sum(axis=1)

    gamma = np.zeros((n, K + 1))
    gamma[np.arange(n_lab), fixed] = 1.0
    unl = slice(n_lab, n)
    ratio = config.f_a / config.f_b

    def update_y(gamma):
        Nk = gamma[:, :K].sum(axis=0)
        prec = 1.0 / lam[None, :] + ratio * Nk[:, None]  # (K, d)
        var = 1.0 / prec
        mean = var * ratio * (gamma[:, :K].T @ Z)
        return mean, var

    def expected_loglik(mean, var):
        # E_q(y)[log N(x_i | y_k, I)], shape (n, K)
        cross = Z @ mean.T
        msq = (mean**2).sum(axis=1) + var.sum(axis=1)
        return -0.5 * (d * math.log(2 * math.pi) + sq[:, None] - 2 * cross + msq[None, :])

    def elbo(gamma, mean, var):
        ll = np.concatenate([expected_loglik(mean, var), log_bg[:, None]], axis=1)
        data = float(np.sum(gamma * np.where(gamma > 0, ll, 0.0)))
        kl_y = 0.5 * float(np.sum(var / lam + mean**2 / lam - 1.0 - np.log(var / lam)))
        # labeled assignments are observed: their prior term is a constant and is left out
        g = gamma[unl]
        nz = g > 0
        safe_pi = np.where(np.isfinite(log_pi), log_pi, 0.0)
        kl_z = float(np.sum(np.where(nz, g * (np.log(np.where(nz, g, 1.0)) - safe_pi), 0.0)))
        return config.f_a * data - config.f_b * kl_y - kl_z

    mean, var = update_y(gamma)
    history: list[float] = []
    it = 0
    for it in range(1, config.max_iters + 1):
        if n > n_lab:
            logits = np.concatenate([expected_loglik(mean, var)[unl], log_bg[unl, None]], axis=1)
            logits = config.f_a * logits + log_pi[None, :]
            gamma[unl] = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        mean, var = update_y(gamma)
        value = elbo(gamma, mean, var)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite ELBO at iteration {it}")
        history.append(value)
        if len(history) > 1 and abs(history[-1] - history[-2]) < config.elbo_tol:
            break
        if n == n_lab:
            break

    hard = gamma.argmax(axis=1)
    labels = np.where(hard == K, BACKGROUND, hard)
    labels[:n_lab] = fixed
    result = AssignmentResult(
        member_ids, utt_ids, X, labels, n_lab, [], gamma[np.arange(n), hard], it, history
    )
    result.models = models_from_assignment(result)
    result.responsibilities = gamma
    return result


# ---------------------------------------------------------------------------
# label propagation with pre-filtering


def median_width(X: np.ndarray) -> float:
    """Median pairwise Euclidean distance, 1.0 when undefined or zero."""
    if len(X) < 2:
        return 1.0
    med = float(np.median(pdist(X)))
    return med if med > 0 else 1.0


def propagation_matrix(X: np.ndarray, width: float | str) -> tuple[np.ndarray, float]:
    """Symmetrically normalised Gaussian affinity D^-1/2 A D^-1/2 (zero diagonal)."""
    dist = squareform(pdist(X)) if len(X) > 1 else np.zeros((len(X), len(X)))
    if width == "median-heuristic":
        width = median_width(X)
    A = np.exp(-(dist**2) / (2.0 * width**2))
    np.fill_diagonal(A, 0.0)
    deg = A.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv_sqrt[:, None] * A * inv_sqrt[None, :], width


def propagate(S: np.ndarray, Y: np.ndarray, clamp: float, max_iters: int, tol: float):
    """Iterate F <- clamp*S*F + (1-clamp)*Y from F = Y."""
    F = Y.copy()
    it = 0
    for it in range(1, max_iters + 1):
        F_new = clamp * (S @ F) + (1.0 - clamp) * Y
        change = float(np.max(np.abs(F_new - F))) if F.size else 0.0
        F = F_new
        if change < tol:
            break
    return F, it


def label_propagation(
    enroll: Mapping[str, Sequence[Embedding] | np.ndarray],
    unlabeled: Sequence[Embedding] | np.ndarray,
    models: Sequence[SpeakerModel],
    backend: BackendConfig,
    config: LpConfig,
) -> AssignmentResult:
    """Drop unlabeled points scoring <= tau against every initial model, then
    propagate member labels over the remaining points plus the labeled ones.
    Labeled points keep their own labels in the output."""
    member_ids, utt_ids, X, fixed, n_lab = _setup(enroll, unlabeled, backend.prepare)
    if [m.model_id for m in models] != list(member_ids):
        raise ValueError("initial models must follow the enrollment member order")
    n = len(X)
    K = len(member_ids)
    labels = np.concatenate([fixed, np.full(n - n_lab, BACKGROUND)])
    scores = np.zeros(n)
    iterations = 0
    if n > n_lab:
        S0 = score_matrix(backend, models, X[n_lab:])
        top = S0.max(axis=1)
        scores[n_lab:] = top
        keep = np.flatnonzero(top > config.tau) + n_lab
        if keep.size:
            nodes = np.concatenate([np.arange(n_lab), keep])
            width = config.kernel_width
            if width == "median-heuristic":
                # median over the surviving unlabeled points; all nodes if too few
                width = median_width(X[keep]) if keep.size > 1 else median_width(X[nodes])
            S, _ = propagation_matrix(X[nodes], width)
            Y = np.zeros((len(nodes), K))
            Y[np.arange(n_lab), fixed] = 1.0
            F, iterations = propagate(S, Y, config.clamp, config.max_iters, config.tol)
            labels[keep] = F[n_lab:].argmax(axis=1)
    result = AssignmentResult(member_ids, utt_ids, X, labels, n_lab, [], scores, iterations)
    result.models = models_from_assignment(result, backend.finalize_centroid)
    return result


def write_assignment(result: AssignmentResult, path, household_id: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i in range(result.n_labeled, len(result.utt_ids)):
            prefix = f"{household_id}\t" if household_id else ""
            f.write(f"{prefix}{result.utt_ids[i]}\t{result.label_name(i)}\t{float(result.scores[i])!r}\n")
