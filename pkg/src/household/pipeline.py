"""Per-household experiment drivers shared by the CLI and the benchmarks."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Mapping, Sequence


from . import offline_adapt as off
from .core import (
    Assignment,
    Embedding,
    HouseholdProtocol,
    SpeakerModel,
    TrialScore,
    sort_scores,
)
from .metrics import Calibration
from .online_adapt import OnlineConfig, enroll, run_stream
from .passive_enroll import AhcConfig, ahc_cluster, assign_tests
from .plda import PldaModel, SphericalPlda
from .scoring import CSSA, BackendConfig, score_all

ALGORITHMS = ("none", "centroid", "kmeans", "vb", "lp", "oracle")


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class ActiveParams:
    tau: float = math.inf
    alpha: float | str = "harmonic"
    f_a: float = 1.0
    f_b: float = 1.0
    clamp: float = 0.95
    kernel_width: float | str = "median-heuristic"
    max_iters: int = 100
    vb_model: PldaModel | SphericalPlda | None = None


def raw_threshold(tau: float, calibration: Calibration | None) -> float:
    """Map a threshold in calibrated units back to raw score units."""
    if calibration is None or math.isinf(tau):
        return tau
    if calibration.slope <= 0:
        raise UsageError("thresholds in calibrated units need a positive calibration slope")
    return (tau - calibration.offset) / calibration.slope


def enrollment_sets(protocol: HouseholdProtocol, index: Mapping[str, Embedding]) -> dict[str, list[Embedding]]:
    return {m: [index[u] for u in protocol.enroll[m]] for m in protocol.household.member_ids}


def adapt_household(
    protocol: HouseholdProtocol,
    index: Mapping[str, Embedding],
    backend: BackendConfig,
    algorithm: str,
    params: ActiveParams,
    calibration: Calibration | None = None,
) -> list[SpeakerModel]:
    """Final speaker models of one household after the chosen adaptation."""
    if algorithm not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if backend.kind == CSSA and algorithm not in ("none", "oracle"):
        raise UsageError("cosine score averaging is supported only without adaptation or with oracle labels")
    members = enrollment_sets(protocol, index)
    stream = [index[u] for u in protocol.adaptation_stream]
    state = enroll(members, backend)
    tau = raw_threshold(params.tau, calibration)

    if algorithm == "none" or (algorithm != "oracle" and not stream):
        return list(state.models)
    if algorithm == "oracle":
        own = {
            m: members[m] + [e for e in stream if e.speaker_id == m]
            for m in protocol.household.member_ids
        }
        return list(enroll(own, backend).models)
    if algorithm == "centroid":
        return list(run_stream(state, OnlineConfig(tau, params.alpha), backend, stream).models)
    if algorithm == "kmeans":
        cfg = off.KMeansConfig(tau, max_iters=params.max_iters)
        return off.kmeans_semisup(members, stream, cfg, backend).models
    if algorithm == "lp":
        cfg = off.LpConfig(tau, params.clamp, params.kernel_width, max_iters=params.max_iters)
        return off.label_propagation(members, stream, list(state.models), backend, cfg).models
    # vb: tau sets the background prior, not a score gate
    plda = params.vb_model or backend.model
    if plda is None:
        raise UsageError("VB clustering needs a PLDA model (--model or a PLDA back-end)")
    cfg = off.VbConfig(params.tau, params.f_a, params.f_b, max_iters=params.max_iters)
    result = off.vb_cluster(members, stream, plda, cfg, prepare=backend.prepare)
    return off.models_from_assignment(result, backend.finalize_centroid)


def score_household(
    protocol: HouseholdProtocol,
    index: Mapping[str, Embedding],
    backend: BackendConfig,
    models: Sequence[SpeakerModel],
    calibration: Calibration | None = None,
) -> list[TrialScore]:
    position = {m.model_id: i for i, m in enumerate(models)}
    cache: dict[str, list[float]] = {}
    out = []
    for t in protocol.trials:
        if t.test_utt_id not in cache:
            cache[t.test_utt_id] = score_all(backend, models, index[t.test_utt_id])
        s = cache[t.test_utt_id][position[t.model_id]]
        if calibration is not None:
            s = calibration.slope * s + calibration.offset
        out.append(TrialScore(protocol.household_id, t.model_id, t.test_utt_id, t.label, s))
    return out


def _active_one(protocol, index, backend, algorithm, params, calibration):
    models = adapt_household(protocol, index, backend, algorithm, params, calibration)
    return score_household(protocol, index, backend, models, calibration)


def run_active(
    protocols: Sequence[HouseholdProtocol],
    index: Mapping[str, Embedding],
    backend: BackendConfig,
    algorithm: str,
    params: ActiveParams = ActiveParams(),
    calibration: Calibration | None = None,
    jobs: int = 1,
) -> list[TrialScore]:
    """Adapt and score every household; rows come back in canonical order."""
    work = partial(
        _active_one, index=index, backend=backend, algorithm=algorithm,
        params=params, calibration=calibration,
    )
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(work, protocols))
    else:
        parts = [work(p) for p in protocols]
    return sort_scores(s for part in parts for s in part)


def run_passive_household(
    protocol: HouseholdProtocol,
    index: Mapping[str, Embedding],
    config: AhcConfig,
    assign_threshold: float,
) -> tuple[int, list[Assignment]]:
    stream = [index[u] for u in protocol.adaptation_stream]
    tests = [index[u] for u in sorted(protocol.test_utt_ids())]
    hid = protocol.household_id
    if not stream:
        return 0, [Assignment(hid, t.utt_id, "unknown") for t in tests]
    clustering = ahc_cluster(stream, config, prefix=f"{hid}_c")
    labels = assign_tests(clustering.models, tests, assign_threshold)
    return len(clustering), [Assignment(hid, t.utt_id, lab, s) for t, (lab, s) in zip(tests, labels)]


def run_passive(
    protocols: Sequence[HouseholdProtocol],
    index: Mapping[str, Embedding],
    config: AhcConfig,
    assign_threshold: float,
) -> tuple[dict[str, int], list[Assignment]]:
    n_clusters, rows = {}, []
    for p in protocols:
        n, part = run_passive_household(p, index, config, assign_threshold)
        n_clusters[p.household_id] = n
        rows += part
    rows.sort(key=lambda a: (a.household_id, a.utt_id))
    return n_clusters, rows


def predictions_by_household(rows: Sequence[Assignment]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for r in rows:
        out.setdefault(r.household_id, {})[r.utt_id] = r.label
    return out


def truth_map(index: Mapping[str, Embedding]) -> dict[str, str]:
    return {u: e.speaker_id for u, e in index.items() if e.speaker_id is not None}
