"""Pooled EERs, global linear calibration and micro-averaged JER."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize

from .core import KNOWN_NONTARGET, TARGET, UNKNOWN_NONTARGET, Household, TrialScore
from .passive_enroll import UNKNOWN

METRICS_COLUMNS = ("protocol", "backend", "algorithm", "eer_known", "eer_unknown", "jer", "params")


class MetricError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EerReport:
    eer_known: float
    eer_unknown: float
    n_target: int
    n_known: int
    n_unknown: int


@dataclass(frozen=True)
class Calibration:
    slope: float
    offset: float

    def __call__(self, scores):
        return apply_calibration(self, scores)


@dataclass
class JerReport:
    jer: float
    intersections: int
    unions: int
    mapping: dict[str, dict[str, str]] = field(default_factory=dict)


def roc_points(tar: np.ndarray, non: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Miss and false-alarm rates at every distinct threshold, from accept-all
    to reject-all. A trial is accepted when its score is >= the threshold."""
    scores = np.concatenate([tar, non])
    is_tar = np.concatenate([np.ones(len(tar)), np.zeros(len(non))])
    order = np.argsort(scores, kind="mergesort")
    scores, is_tar = scores[order], is_tar[order]
    # cumulative counts at the end of each group of tied scores
    last = np.flatnonzero(np.append(np.diff(scores) != 0, True))
    tar_below = np.cumsum(is_tar)[last]
    non_below = np.cumsum(1 - is_tar)[last]
    p_miss = np.concatenate([[0.0], tar_below / len(tar)])
    p_fa = np.concatenate([[1.0], 1.0 - non_below / len(non)])
    return p_miss, p_fa


def eer_from_scores(tar, non) -> float:
    """EER in percent, linearly interpolated between adjacent ROC points."""
    tar = np.asarray(tar, dtype=np.float64)
    non = np.asarray(non, dtype=np.float64)
    if tar.size == 0 or non.size == 0:
        raise MetricError("EER needs at least one target and one non-target score")
    p_miss, p_fa = roc_points(tar, non)
    diff = p_miss - p_fa  # rises from -1 to +1
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return 100.0 * float(p_miss[k])
    # crossing inside the segment (k-1, k)
    t = -diff[k - 1] / (diff[k] - diff[k - 1])
    return 100.0 * float(p_miss[k - 1] + t * (p_miss[k] - p_miss[k - 1]))


def _split(scores: Iterable[TrialScore] | tuple, negative_class: str):
    if isinstance(scores, tuple) and len(scores) == 2 and not isinstance(scores[0], TrialScore):
        values, labels = scores
        values = np.asarray(values, dtype=np.float64)
        labels = np.asarray(labels)
    else:
        scores = list(scores)
        values = np.array([s.score for s in scores])
        labels = np.array([s.label for s in scores])
    return values[labels == TARGET], values[labels == negative_class]


def eer(scores, negative_class: str) -> float:
    """Pooled EER (%) of targets against one non-target class.

    ``scores`` is a sequence of TrialScore or a (values, labels) pair.
    """
    if negative_class not in (KNOWN_NONTARGET, UNKNOWN_NONTARGET):
        raise MetricError(f"negative class must be known or unknown non-target, got {negative_class!r}")
    tar, non = _split(scores, negative_class)
    if tar.size == 0 or non.size == 0:
        raise MetricError(f"no target or {negative_class} trials")
    return eer_from_scores(tar, non)


def eer_report(scores: Sequence[TrialScore]) -> EerReport:
    labels = [s.label for s in scores]
    return EerReport(
        eer_known=eer(scores, KNOWN_NONTARGET),
        eer_unknown=eer(scores, UNKNOWN_NONTARGET),
        n_target=labels.count(TARGET),
        n_known=labels.count(KNOWN_NONTARGET),
        n_unknown=labels.count(UNKNOWN_NONTARGET),
    )


# ---------------------------------------------------------------------------
# calibration


def _logreg_objective(params, tar, non, l2):
    a, b = params
    st = a * tar + b
    sn = a * non + b
    # class-balanced cross-entropy: softplus(-s) for targets, softplus(s) for non-targets
    loss = 0.5 * np.mean(np.logaddexp(0.0, -st)) + 0.5 * np.mean(np.logaddexp(0.0, sn))
    pt = -0.5 * _sigmoid(-st) / len(tar)
    pn = 0.5 * _sigmoid(sn) / len(non)
    grad = np.array(
        [np.sum(pt * tar) + np.sum(pn * non) + l2 * a, np.sum(pt) + np.sum(pn) + l2 * b]
    )
    return loss + 0.5 * l2 * (a * a + b * b), grad


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def fit_calibration(tar, non, l2_lambda: float = 1e-4) -> Calibration:
    """Affine map fitted by L2-regularised, class-balanced logistic regression."""
    tar = np.asarray(tar, dtype=np.float64)
    non = np.asarray(non, dtype=np.float64)
    if tar.size == 0 or non.size == 0:
        raise MetricError("calibration needs both target and non-target scores")
    res = minimize(
        _logreg_objective, np.array([1.0, 0.0]), args=(tar, non, l2_lambda),
        jac=True, method="L-BFGS-B", options={"maxiter": 1000, "gtol": 1e-10},
    )
    if not res.success or not np.all(np.isfinite(res.x)):
        raise CalibrationError(f"calibration did not converge: {res.message} (x={res.x}, f={res.fun})")
    a, b = (float(v) for v in res.x)
    if a <= 0:
        warnings.warn(f"calibration slope is not positive ({a})")
    return Calibration(a, b)


def fit_calibration_scores(scores: Sequence[TrialScore], l2_lambda: float = 1e-4) -> Calibration:
    """Calibration on pooled trials; both non-target classes count as negatives."""
    tar = [s.score for s in scores if s.label == TARGET]
    non = [s.score for s in scores if s.label != TARGET]
    return fit_calibration(tar, non, l2_lambda)


def apply_calibration(cal: Calibration, scores):
    if isinstance(scores, (list, tuple)) and scores and isinstance(scores[0], TrialScore):
        return [
            TrialScore(s.household_id, s.model_id, s.test_utt_id, s.label, cal.slope * s.score + cal.offset)
            for s in scores
        ]
    return cal.slope * np.asarray(scores, dtype=np.float64) + cal.offset


def save_calibration(cal: Calibration, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"slope\t{float(cal.slope)!r}\noffset\t{float(cal.offset)!r}\n")


def load_calibration(path) -> Calibration:
    values = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                key, val = line.split()
                values[key] = float(val)
    return Calibration(values["slope"], values["offset"])


# ---------------------------------------------------------------------------
# JER


def jer(
    predictions: Mapping[str, Mapping[str, str]],
    truth: Mapping[str, str],
    households: Sequence[Household],
) -> JerReport:
    """Micro-averaged Jaccard error rate over household members.

    ``predictions`` maps household id -> {test utt id: predicted cluster or
    "unknown"}; ``truth`` maps utt id -> true speaker. Per household, predicted
    clusters are matched one-to-one to members so as to maximise the total
    overlap, ties going to the smaller union; a member's prediction set is the cluster mapped to it (empty if
    none). Guest tests only matter when they land in a mapped cluster.
    """
    inter_total = 0
    union_total = 0
    mapping: dict[str, dict[str, str]] = {}
    for hh in households:
        pred = predictions.get(hh.household_id, {})
        members = list(hh.member_ids)
        refs = {m: {u for u in pred if truth[u] == m} for m in members}
        clusters = sorted({c for c in pred.values() if c != UNKNOWN})
        sets = {c: {u for u, p in pred.items() if p == c} for c in clusters}
        assigned: dict[str, str] = {}
        if clusters:
            overlap = np.array([[len(refs[m] & sets[c]) for c in clusters] for m in members], dtype=float)
            sizes = np.array([len(sets[c]) for c in clusters], dtype=float)
            # overlap first, smaller union second; extra columns leave a member unmapped
            gain = overlap * (len(pred) + 1) - sizes[None, :]
            gain = np.hstack([gain, np.zeros((len(members), len(members)))])
            rows, cols = linear_sum_assignment(gain, maximize=True)
            assigned = {members[r]: clusters[c] for r, c in zip(rows, cols) if c < len(clusters)}
        for m in members:
            P = sets.get(assigned.get(m), set())
            inter_total += len(refs[m] & P)
            union_total += len(refs[m] | P)
        mapping[hh.household_id] = assigned
    if union_total == 0:
        raise MetricError("no member test segments to evaluate")
    return JerReport(100.0 * (1.0 - inter_total / union_total), inter_total, union_total, mapping)


def write_metrics(rows: Sequence[Mapping[str, object]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in METRICS_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return v
