"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import core
from .metrics import (
    MetricError,
    apply_calibration,
    eer_report,
    fit_calibration_scores,
    jer,
    load_calibration,
    save_calibration,
    write_metrics,
)
from .passive_enroll import AhcConfig
from .pipeline import (
    ALGORITHMS,
    ActiveParams,
    UsageError,
    predictions_by_household,
    run_active,
    run_passive,
    truth_map,
)
from .plda import PldaError, fit_spherical, length_normalize, load_model, save_model
from .scoring import CLI_NAMES, BackendConfig, BackendConfigError
from .simulate import ConfigError, generate_protocol, labeled_groups, load_config

log = logging.getLogger("household")


def _load_protocol(directory):
    directory = Path(directory)
    embeddings = core.read_embeddings(directory / core.EMBEDDINGS_FILE)
    protocols = core.read_protocol(directory, embeddings)
    return protocols, core.index_embeddings(embeddings)


def _float_or_inf(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _alpha(text: str):
    return text if text == "harmonic" else _float_or_inf(text)


def _sweep(text: str) -> np.ndarray:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("sweep must look like lo:hi:step") from None
    if step <= 0 or hi < lo:
        raise argparse.ArgumentTypeError("sweep needs step > 0 and hi >= lo")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 12)


def _backend(args) -> BackendConfig:
    kind = CLI_NAMES[args.backend]
    model = load_model(args.model) if args.model else None
    normalize = not args.no_normalize
    return BackendConfig(kind, model, normalize_inputs=normalize, count_scale=args.count_scale)


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    if not Path(args.config).is_file():
        log.error("config file not found: %s", args.config)
        return 2
    config = load_config(args.config)
    embeddings, protocols = generate_protocol(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    core.write_embeddings(embeddings, out / core.EMBEDDINGS_FILE)
    core.write_protocol(protocols, out)
    log.info("wrote %d households, %d embeddings to %s", len(protocols), len(embeddings), out)
    return 0


def cmd_fit_plda(args) -> int:
    embeddings = core.read_embeddings(Path(args.protocol) / core.EMBEDDINGS_FILE)
    groups = labeled_groups(embeddings)
    if not args.no_normalize:
        groups = {k: length_normalize(v) for k, v in groups.items()}
    model = fit_spherical(groups)
    save_model(model, args.out)
    log.info("sigma_b2=%g sigma_w2=%g", model.sigma_b2, model.sigma_w2)
    return 0


def cmd_run_active(args) -> int:
    protocols, index = _load_protocol(args.protocol)
    backend = _backend(args)
    calibration = load_calibration(args.calibration) if args.calibration else None
    params = ActiveParams(
        tau=args.tau, alpha=args.alpha, f_a=args.fa, f_b=args.fb, clamp=args.clamp,
        kernel_width=args.kernel_width if args.kernel_width == "median-heuristic" else float(args.kernel_width),
        max_iters=args.max_iters,
        vb_model=load_model(args.vb_model) if args.vb_model else None,
    )
    scores = run_active(protocols, index, backend, args.algorithm, params, calibration, jobs=args.jobs)
    core.write_scores(scores, args.out)
    return 0


def cmd_run_passive(args) -> int:
    protocols, index = _load_protocol(args.protocol)
    assign = args.assign_threshold if args.assign_threshold is not None else args.cluster_threshold
    if args.sweep is None:
        if args.cluster_threshold is None:
            raise UsageError("--cluster-threshold or --sweep is required")
        n_clusters, rows = run_passive(protocols, index, AhcConfig(args.cluster_threshold, args.linkage), assign)
        core.write_assignments(rows, args.out)
        log.info("mean clusters per household: %.2f", np.mean(list(n_clusters.values())))
        return 0
    truth = truth_map(index)
    households = [p.household for p in protocols]
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write("threshold\tmean_clusters\tjer\n")
        for th in args.sweep:
            a = args.assign_threshold if args.assign_threshold is not None else float(th)
            n_clusters, rows = run_passive(protocols, index, AhcConfig(float(th), args.linkage), a)
            report = jer(predictions_by_household(rows), truth, households)
            f.write(f"{th!r}\t{np.mean(list(n_clusters.values())):.4f}\t{report.jer:.6f}\n")
    return 0


def cmd_calibrate(args) -> int:
    cal = fit_calibration_scores(core.read_scores(args.scores), args.l2)
    save_calibration(cal, args.out)
    log.info("slope=%g offset=%g", cal.slope, cal.offset)
    return 0


def cmd_evaluate(args) -> int:
    if args.scores is None and args.assignments is None:
        raise UsageError("give --scores and/or --assignments")
    row = {
        "protocol": args.name, "backend": args.backend, "algorithm": args.algorithm,
        "eer_known": float("nan"), "eer_unknown": float("nan"), "jer": float("nan"),
        "params": args.params,
    }
    if args.scores:
        scores = core.read_scores(args.scores)
        if args.calibrate:
            scores = apply_calibration(fit_calibration_scores(core.read_scores(args.calibrate)), scores)
        report = eer_report(scores)
        row["eer_known"], row["eer_unknown"] = report.eer_known, report.eer_unknown
    if args.assignments:
        if args.protocol is None:
            raise UsageError("--assignments needs --protocol for speaker truth")
        protocols, index = _load_protocol(args.protocol)
        rows = core.read_assignments(args.assignments)
        row["jer"] = jer(predictions_by_household(rows), truth_map(index), [p.household for p in protocols]).jer
    write_metrics([row], args.out)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="household", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic protocol directory")
    p.add_argument("--config", required=True, help="JSON file with SimConfig fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-plda", help="fit a spherical PLDA on a protocol's labeled embeddings")
    p.add_argument("--protocol", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-normalize", action="store_true", help="fit on raw, not length-normalized, vectors")
    p.set_defaults(func=cmd_fit_plda)

    p = sub.add_parser("run-active", help="enroll, adapt and score all trials")
    p.add_argument("--protocol", required=True)
    p.add_argument("--backend", required=True, choices=sorted(CLI_NAMES))
    p.add_argument("--model", help="PLDA model file for PLDA back-ends")
    p.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    p.add_argument("--tau", type=_float_or_inf, default=math.inf)
    p.add_argument("--alpha", type=_alpha, default="harmonic")
    p.add_argument("--fa", type=float, default=1.0)
    p.add_argument("--fb", type=float, default=1.0)
    p.add_argument("--clamp", type=float, default=0.95)
    p.add_argument("--kernel-width", default="median-heuristic")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--vb-model", help="PLDA model for VB when the back-end is cosine")
    p.add_argument("--calibration", help="calibration file; --tau is then in calibrated units")
    p.add_argument("--count-scale", type=float, default=1.0)
    p.add_argument("--no-normalize", action="store_true", help="PLDA back-ends: skip length normalization")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_active)

    p = sub.add_parser("run-passive", help="AHC passive enrollment and test assignment")
    p.add_argument("--protocol", required=True)
    p.add_argument("--cluster-threshold", type=float)
    p.add_argument("--assign-threshold", type=float)
    p.add_argument("--linkage", default="average", choices=("average", "single", "complete"))
    p.add_argument("--sweep", type=_sweep, help="lo:hi:step; writes threshold/JER rows instead")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_passive)

    p = sub.add_parser("calibrate", help="fit a global linear calibration on development scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="EERs and/or JER into a metrics CSV")
    p.add_argument("--scores")
    p.add_argument("--assignments")
    p.add_argument("--protocol")
    p.add_argument("--calibrate", help="development scores for a global calibration")
    p.add_argument("--name", default="-")
    p.add_argument("--backend", default="-")
    p.add_argument("--algorithm", default="-")
    p.add_argument("--params", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError, BackendConfigError) as exc:
        log.error("%s", exc)
        return 2
    except (core.FormatError, core.ProtocolError, PldaError, MetricError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
