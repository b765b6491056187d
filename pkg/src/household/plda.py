"""Two-covariance PLDA: latent posteriors and set-to-set likelihood ratios.

Generative model: x = mu + y + e with y ~ N(0, B) and e ~ N(0, W).

Scoring works in a basis where W = I and B = diag(lambda) (simultaneous
diagonalisation, computed once per model). Likelihood ratios are invariant
to invertible linear maps of the data, so every closed-form expression below
reduces to a sum of independent one-dimensional terms.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

VARIANCE_FLOOR = 1e-6


class PldaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SphericalPlda:
    """PLDA with B = sigma_b2 * I and W = sigma_w2 * I.

    ``mu`` may be left as None for a zero global mean of any dimension.
    """

    sigma_b2: float
    sigma_w2: float
    mu: np.ndarray | None = None

    def __post_init__(self):
        if not (self.sigma_b2 > 0 and self.sigma_w2 > 0):
            raise PldaError("spherical PLDA variances must be strictly positive")
        if self.mu is not None:
            mu = np.array(self.mu, dtype=np.float64)
            mu.setflags(write=False)
            object.__setattr__(self, "mu", mu)

    def center(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x if self.mu is None else x - self.mu

    def diag(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        return np.full(dim, float(self.sigma_b2)), np.full(dim, float(self.sigma_w2))


@dataclass(frozen=True, eq=False)
class PldaModel:
    """Full-covariance two-covariance model.

    ``whiten`` is an optional pre-transform applied to ``x - mu`` before the
    model; B and W then live in the transformed space.
    """

    mu: np.ndarray
    B: np.ndarray
    W: np.ndarray
    whiten: np.ndarray | None = None

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64)
        B = np.array(self.B, dtype=np.float64)
        W = np.array(self.W, dtype=np.float64)
        d = B.shape[0]
        if B.shape != (d, d) or W.shape != (d, d):
            raise PldaError("B and W must be square matrices of equal size")
        for name, m in (("B", B), ("W", W)):
            if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12):
                raise PldaError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(m).min() <= 0:
                raise PldaError(f"{name} is not positive definite")
        for m in (mu, B, W):
            m.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "B", (B + B.T) / 2)
        object.__setattr__(self, "W", (W + W.T) / 2)
        if self.whiten is not None:
            T = np.array(self.whiten, dtype=np.float64)
            if T.shape[0] != d:
                raise PldaError("whitening output dimension must match B and W")
            T.setflags(write=False)
            object.__setattr__(self, "whiten", T)

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    @cached_property
    def _basis(self) -> tuple[np.ndarray, np.ndarray]:
        # T W T' = I and T B T' = diag(lam)
        L = np.linalg.cholesky(self.W)
        Linv = np.linalg.inv(L)
        lam, U = np.linalg.eigh(Linv @ self.B @ Linv.T)
        return U.T @ Linv, lam

    def center(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64) - self.mu
        if self.whiten is not None:
            x = x @ self.whiten.T
        return x

    def project(self, x: np.ndarray) -> np.ndarray:
        """Centered data mapped into the diagonal basis."""
        T, _ = self._basis
        return self.center(x) @ T.T

    def diag(self, dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        _, lam = self._basis
        return lam, np.ones_like(lam)


@dataclass(frozen=True)
class LatentPosterior:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class SphericalLlrCoefficients:
    """llr = 2*cross*<xe,xt> + norm*(|xe|^2 + |xt|^2) + mean*<mu, xe+xt> + offset."""

    cross_scale: float
    norm_scale: float
    mean_scale: float
    offset: float

    def __call__(self, xe: np.ndarray, xt: np.ndarray, mu: np.ndarray | None = None) -> float:
        xe = np.asarray(xe, dtype=np.float64)
        xt = np.asarray(xt, dtype=np.float64)
        s = 2 * self.cross_scale * float(xe @ xt) + self.norm_scale * float(xe @ xe + xt @ xt)
        if mu is not None:
            s += self.mean_scale * float(np.asarray(mu) @ (xe + xt))
        return s + self.offset


def _check_count(count: float) -> float:
    count = float(count)
    if not count > 0 or not math.isfinite(count):
        raise PldaError(f"count must be a positive finite number, got {count}")
    return count


def posterior(
    model: PldaModel | SphericalPlda, centroid: np.ndarray, count: float
) -> LatentPosterior:
    """Gaussian posterior of the speaker variable given a set summarised by
    its centroid and (possibly fractional) size."""
    n = _check_count(count)
    c = model.center(centroid)
    d = c.shape[0]
    if isinstance(model, SphericalPlda):
        var = 1.0 / (1.0 / model.sigma_b2 + n / model.sigma_w2)
        return LatentPosterior(mean=n * var / model.sigma_w2 * c, cov=var * np.eye(d))
    Binv = np.linalg.inv(model.B)
    Winv = np.linalg.inv(model.W)
    cov = np.linalg.inv(Binv + n * Winv)
    cov = (cov + cov.T) / 2
    return LatentPosterior(mean=n * cov @ Winv @ c, cov=cov)


def _llr_diag(b, w, ce, n, ct, m):
    """Closed-form log of the integral of p(y|e)p(y|t)/p(y), per diagonal basis.

    ``b``/``w`` are per-dimension between/within variances; ``ce``/``ct`` are
    centered centroids, broadcastable against each other along the last axis.
    Written in terms of b/w ratios so that b -> 0 stays finite.
    """
    a = b / w
    log_det = 0.5 * (np.log1p(n * a) + np.log1p(m * a) - np.log1p((n + m) * a))
    ge = n * ce / w
    gt = m * ct / w
    quad = 0.5 * b * (
        (ge + gt) ** 2 / (1.0 + (n + m) * a) - ge**2 / (1.0 + n * a) - gt**2 / (1.0 + m * a)
    )
    return (log_det + quad).sum(axis=-1)


def _diag_inputs(model, enroll_centroid, test_centroid):
    if isinstance(model, PldaModel):
        ce = model.project(enroll_centroid)
        ct = model.project(test_centroid)
        b, w = model.diag()
    elif isinstance(model, SphericalPlda):
        ce = model.center(enroll_centroid)
        ct = model.center(test_centroid)
        b, w = float(model.sigma_b2), float(model.sigma_w2)
    else:
        raise TypeError(f"unsupported PLDA model type {type(model).__name__}")
    return b, w, ce, ct


def llr_by_the_book(
    model: PldaModel | SphericalPlda,
    enroll: tuple[np.ndarray, float],
    test: tuple[np.ndarray, float],
) -> float:
    """Same-vs-different speaker log-likelihood ratio for two sets, each given
    as ``(centroid, count)``."""
    ce, n = enroll
    ct, m = test
    n = _check_count(n)
    m = _check_count(m)
    b, w, ce, ct = _diag_inputs(model, ce, ct)
    if ce.shape != ct.shape:
        raise PldaError(f"dimension mismatch {ce.shape} vs {ct.shape}")
    value = float(_llr_diag(b, w, ce, n, ct, m))
    if not math.isfinite(value):
        raise PldaError(f"non-finite LLR (counts {n}, {m})")
    return value


def llr_batch(
    model: PldaModel | SphericalPlda,
    enroll_centroids: np.ndarray,
    enroll_counts: np.ndarray,
    test: np.ndarray,
    test_count: float = 1.0,
) -> np.ndarray:
    """LLRs of one test set against several enrollment sets (rows)."""
    counts = np.asarray(enroll_counts, dtype=np.float64)
    if np.any(~(counts > 0)):
        raise PldaError("enrollment counts must be positive")
    m = _check_count(test_count)
    b, w, ce, ct = _diag_inputs(model, np.atleast_2d(enroll_centroids), test)
    out = _llr_diag(b, w, ce, counts[:, None], ct[None, :], m)
    if not np.all(np.isfinite(out)):
        raise PldaError("non-finite LLR in batch")
    return out


def spherical_llr_coefficients(model: SphericalPlda, dim: int | None = None) -> SphericalLlrCoefficients:
    """Coefficients of the single-enrollment LLR as a quadratic form in the raw
    (uncentered) embeddings."""
    if model.mu is not None:
        dim = model.mu.shape[0] if dim is None else dim
        mu_sq = float(model.mu @ model.mu)
    else:
        mu_sq = 0.0
    if dim is None:
        raise PldaError("dimension required for a model without an explicit mean")
    b, w = float(model.sigma_b2), float(model.sigma_w2)
    a = b / w
    cross = 0.5 * b / w**2 / (1.0 + 2.0 * a)
    norm = 0.5 * b / w**2 * (1.0 / (1.0 + 2.0 * a) - 1.0 / (1.0 + a))
    log_det = 0.5 * dim * (2.0 * math.log1p(a) - math.log1p(2.0 * a))
    return SphericalLlrCoefficients(
        cross_scale=cross,
        norm_scale=norm,
        mean_scale=-2.0 * (cross + norm),
        offset=log_det + 2.0 * (cross + norm) * mu_sq,
    )


def fit_spherical(
    groups: Mapping[str, np.ndarray] | Sequence[np.ndarray], floor: float = VARIANCE_FLOOR
) -> SphericalPlda:
    """Method-of-moments estimate of a spherical PLDA from labeled data.

    ``groups`` maps speaker -> (n_utts, d) array. The within variance is the
    pooled, bias-corrected per-dimension scatter around speaker means; the
    between variance is the variance of speaker means less the within-variance
    contribution of finite per-speaker samples.
    """
    arrays = list(groups.values()) if isinstance(groups, Mapping) else list(groups)
    arrays = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in arrays]
    if len(arrays) < 2:
        raise PldaError("need at least two speakers to estimate PLDA variances")
    counts = np.array([a.shape[0] for a in arrays], dtype=np.float64)
    if counts.max() < 2:
        raise PldaError("need at least one speaker with two or more utterances")
    d = arrays[0].shape[1]
    means = np.stack([a.mean(axis=0) for a in arrays])

    scatter = sum(float(((a - mu) ** 2).sum()) for a, mu in zip(arrays, means))
    dof = counts.sum() - len(arrays)
    sigma_w2 = max(scatter / (dof * d), floor)

    grand = means.mean(axis=0)
    between = float(((means - grand) ** 2).sum()) / ((len(arrays) - 1) * d)
    sigma_b2 = max(between - sigma_w2 * float(np.mean(1.0 / counts)), floor)
    return SphericalPlda(sigma_b2=sigma_b2, sigma_w2=sigma_w2, mu=grand)


def length_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("cannot length-normalize a zero vector")
    return x / norm


# ---------------------------------------------------------------------------
# persistence


def save_model(model: PldaModel | SphericalPlda, path: str | os.PathLike) -> None:
    def fmt(values):
        return "\t".join(repr(float(v)) for v in np.ravel(values))

    if isinstance(model, SphericalPlda):
        lines = ["#type=spherical", f"sigma_b2\t{float(model.sigma_b2)!r}", f"sigma_w2\t{float(model.sigma_w2)!r}"]
        if model.mu is not None:
            lines.append(f"mu\t{fmt(model.mu)}")
    else:
        d = model.dim
        lines = ["#type=full", f"dim\t{d}", f"mu\t{fmt(model.mu)}"]
        lines += [f"B\t{fmt(row)}" for row in model.B]
        lines += [f"W\t{fmt(row)}" for row in model.W]
        if model.whiten is not None:
            lines += [f"whiten\t{fmt(row)}" for row in model.whiten]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_model(path: str | os.PathLike) -> PldaModel | SphericalPlda:
    with open(path, encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or not lines[0].startswith("#type="):
        raise PldaError(f"{path}: missing '#type=' header")
    kind = lines[0].partition("=")[2].strip()
    rows: dict[str, list[list[float]]] = {}
    for ln in lines[1:]:
        key, *vals = ln.split("\t")
        rows.setdefault(key, []).append([float(v) for v in vals])
    try:
        if kind == "spherical":
            mu = np.array(rows["mu"][0]) if "mu" in rows else None
            return SphericalPlda(rows["sigma_b2"][0][0], rows["sigma_w2"][0][0], mu)
        if kind == "full":
            whiten = np.array(rows["whiten"]) if "whiten" in rows else None
            return PldaModel(np.array(rows["mu"][0]), np.array(rows["B"]), np.array(rows["W"]), whiten)
    except KeyError as exc:
        raise PldaError(f"{path}: missing field {exc}") from None
    raise PldaError(f"{path}: unknown model type {kind!r}")
