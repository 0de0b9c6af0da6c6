"""``drivestyle`` command line: ingest | fit | rank | map | synth.

Exit codes: 0 success, 2 usage/config/input error, 3 numerical failure.
Every successful command prints a one-line JSON summary on stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import files, ingest, ranking, scenario, sticky, synth
from .config import RunConfig, load_config_file
from .errors import ConfigError, InputError, NumericalError
from .kernels import BACKEND

log = logging.getLogger("drivestyle")

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _setup_logging():
    level = os.environ.get("DRIVESTYLE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, allow_nan=False, separators=(",", ":")), flush=True)


def _read(path) -> str:
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _config(args, **overrides) -> RunConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    return RunConfig.from_sources(file_values, overrides)


def _parse_columns(text: str | None) -> dict | None:
    if not text:
        return None
    out = {}
    for part in text.split(","):
        try:
            name, idx = part.split("=")
            out[name.strip()] = int(idx)
        except ValueError:
            raise ConfigError(f"bad --oxts-columns entry {part!r}; expected name=index") from None
    return out


def _load_series(path) -> ingest.DrivingSeries:
    return ingest.parse_csv(_read(path), source_id=os.path.basename(path))


# --------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = _config(args, rate_hz=args.rate_hz, derive_accel=args.derive_accel or None,
                  oxts_columns=_parse_columns(args.oxts_columns))
    if not os.path.exists(args.input):
        raise FileNotFoundError(args.input)
    if args.format == "csv":
        series = _load_series(args.input)
    else:
        if os.path.isdir(args.input):
            data_dir = os.path.join(args.input, "data")
            lines = ingest.read_oxts_dir(data_dir if os.path.isdir(data_dir) else args.input)
        else:
            lines = _read(args.input).splitlines()
        series = ingest.parse_oxts(lines, cfg.rate_hz, cfg.oxts_columns or None,
                                   source_id=os.path.basename(os.path.normpath(args.input)))
    if cfg.derive_accel:
        series = ingest.derive_accel(series)
    files.write_text(args.out, ingest.serialize_csv(series))
    _emit(ingest.summary(series))
    return 0


def _run_chain(obs, hyper, cfg, chain):
    return sticky.fit(obs, hyper, cfg.iterations, cfg.burn_in, seed=cfg.seed, chain=chain)


def cmd_fit(args) -> int:
    cfg = _config(args, seed=args.seed, iterations=args.iters, burn_in=args.burn_in, truncation=args.truncation,
                  alpha=args.alpha, gamma=args.gamma, kappa=args.kappa, chains=args.chains,
                  standardize=args.standardize or None, emission_mode=args.emission_mode)
    series = _load_series(args.input)
    fitted, transform = ingest.standardize(series, cfg.standardize)
    obs = fitted.channels
    hyper = sticky.Hyperparameters.from_data(
        obs, alpha=cfg.alpha, gamma=cfg.gamma, kappa=cfg.kappa, truncation_L=cfg.truncation,
        niw_scale0=cfg.niw_scale0, niw_dof0=cfg.niw_dof0, psi_fraction=cfg.psi_fraction,
        emission_mode=cfg.emission_mode,
    )
    log.info("fitting %d frames, L=%d, %d iterations (%s kernels)", len(obs), cfg.truncation, cfg.iterations, BACKEND)
    if cfg.chains == 1:
        results = [_run_chain(obs, hyper, cfg, 0)]
    else:
        with ThreadPoolExecutor(max_workers=cfg.chains) as pool:
            results = list(pool.map(lambda c: _run_chain(obs, hyper, cfg, c), range(cfg.chains)))
    # highest final joint log-density; ties to the lowest chain index
    best = max(range(len(results)), key=lambda i: (results[i].trace[-1], -i))
    result = results[best]
    doc = files.model_document(result, {**cfg.to_dict(), "hyper": hyper.to_dict(), "chain": best},
                               transform.to_dict())
    files.write_text(args.out, files.dumps(doc))
    files.write_text(args.labels, files.labels_csv(series.timestamps, result.labels_map))
    if args.summary:
        clusters = sticky.summarize_clusters(series, result.labels_map)
        files.write_text(args.summary, files.summary_csv(clusters))
    _emit({
        "T": len(series), "clusters": result.n_clusters, "chain": best,
        "best_iteration": result.best_iteration, "final_log_density": float(result.trace[-1]),
        "occupancy": np.bincount(result.labels_map).tolist(),
    })
    return 0


def cmd_rank(args) -> int:
    cfg = _config(args, deadband=args.deadband, stop_threshold=args.stop_threshold)
    series = _load_series(args.input)
    _, labels = files.read_labels_csv(_read(args.labels))
    files.check_aligned(len(series), labels)
    present = set(np.unique(labels).tolist())
    empty = sorted(set(range(max(present) + 1)) - present)
    if empty:
        log.warning("clusters %s have no frames and are omitted from the ranking", empty)
    clusters = sticky.summarize_clusters(series, labels)
    rk = ranking.rank_summaries(clusters, ranking.RankingConfig(cfg.deadband, cfg.stop_threshold))
    files.write_text(args.out, files.dumps(files.ranking_document(rk)))
    plot_path = args.out_plot or os.path.splitext(args.out)[0] + "_occupancy.csv"
    files.write_text(plot_path, files.occupancy_csv(rk))
    _emit({
        "clusters": len(rk.order), "order": rk.ids,
        "levels": {str(a.cluster_id): a.level.value for a in rk.order},
        "occupancy_csv": plot_path,
    })
    return 0


def cmd_map(args) -> int:
    cfg = _config(args, frame_offset=args.frame_offset)
    series = _load_series(args.input)
    _, labels = files.read_labels_csv(_read(args.labels))
    files.check_aligned(len(series), labels)
    try:
        rk = ranking.UrgencyRanking.from_dict(json.loads(_read(args.ranking)))
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"bad ranking file: {exc}") from None
    boxes = scenario.parse_label_frames(_read(args.scene))
    frames = scenario.extract_features(boxes, len(series), cfg.frame_offset)
    timeline = scenario.build_risk_timeline(labels, rk, frames, series.timestamps)
    report = scenario.correlation_report(series, frames, timeline)
    files.write_text(args.out_timeline, files.timeline_csv(timeline))
    files.write_text(args.out_report, files.dumps(report))
    g = report["global"]
    _emit({
        "frames": len(timeline), "frames_with_objects": g["n_frames_with_objects"],
        "pearson_vf_number": g["pearson_vf_number"], "pearson_vf_distance": g["pearson_vf_distance"],
        "nearest_changes": report["nearest_changes"],
    })
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args, seed=args.seed, rate_hz=args.rate_hz)
    series, truth = synth.synthesize(args.states, args.length, cfg.seed, args.self_prob, args.separation,
                                     cfg.rate_hz)
    files.write_text(args.out, ingest.serialize_csv(series))
    files.write_text(args.out_truth, files.labels_csv(series.timestamps, truth))
    _emit({"T": len(series), "states": args.states, "switches": int(np.count_nonzero(np.diff(truth)))})
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drivestyle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="FILE", help="flat JSON run configuration; flags override it")

    sp = sub.add_parser("ingest", help="parse CSV or KITTI oxts kinematics into canonical CSV")
    sp.add_argument("--input", required=True, help="CSV file, oxts file, or oxts directory")
    sp.add_argument("--format", choices=("csv", "oxts"), default="csv", help="input format (default csv)")
    sp.add_argument("--out", required=True, help="canonical CSV output path (t in s, v in m/s, a in m/s^2)")
    sp.add_argument("--rate-hz", type=float, help="oxts sample rate in Hz (default 10)")
    sp.add_argument("--derive-accel", action="store_true",
                    help="replace a_f/a_l with finite differences of v_f/v_l (m/s^2)")
    sp.add_argument("--oxts-columns", metavar="MAP",
                    help="0-based field overrides, e.g. v_f=8,v_l=9,a_f=14,a_l=15")
    common(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("fit", help="cluster kinematics with the sticky HDP-HMM sampler")
    sp.add_argument("--input", required=True, help="canonical kinematics CSV")
    sp.add_argument("--out", required=True, help="model JSON output path")
    sp.add_argument("--labels", required=True, help="segmentation CSV output path (t in s, cluster_id)")
    sp.add_argument("--summary", help="optional cluster occupancy CSV output path")
    sp.add_argument("--seed", type=int, help="unsigned 64-bit seed (default 42)")
    sp.add_argument("--iters", type=int, help="Gibbs sweeps (default 300)")
    sp.add_argument("--burn-in", type=int, help="sweeps discarded before point selection (default 150)")
    sp.add_argument("--truncation", type=int, help="weak-limit state count L (default 20)")
    sp.add_argument("--alpha", type=float, help="transition DP concentration, dimensionless (default 1)")
    sp.add_argument("--gamma", type=float, help="top-level DP concentration, dimensionless (default 1)")
    sp.add_argument("--kappa", type=float, help="sticky self-transition mass, dimensionless (default 10)")
    sp.add_argument("--chains", type=int, help="independent seeded chains; best final log density kept (default 1)")
    sp.add_argument("--standardize", action="store_true", help="z-score channels before fitting")
    sp.add_argument("--emission-mode", choices=sticky.EMISSION_MODES, help="Gaussian covariance form (default full)")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("rank", help="rank clusters by urgency level")
    sp.add_argument("--input", required=True, help="canonical kinematics CSV (physical units)")
    sp.add_argument("--labels", required=True, help="segmentation CSV (t, cluster_id)")
    sp.add_argument("--out", required=True, help="ranking JSON output path")
    sp.add_argument("--out-plot", help="occupancy CSV path (default <out>_occupancy.csv)")
    sp.add_argument("--deadband", type=float, help="a_f deadband in m/s^2 treated as non-braking (default 0.05)")
    sp.add_argument("--stop-threshold", type=float, help="v_f in m/s at or below which a stop is declared (default 0.5)")
    common(sp)
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("map", help="join scene labels with ranked clusters; correlation report")
    sp.add_argument("--input", required=True, help="canonical kinematics CSV")
    sp.add_argument("--labels", required=True, help="segmentation CSV (t, cluster_id)")
    sp.add_argument("--ranking", required=True, help="ranking JSON from 'rank'")
    sp.add_argument("--scene", required=True, help="KITTI tracking label file (locations in m, angles in rad)")
    sp.add_argument("--out-timeline", required=True, help="timeline CSV output path (distance in m, angle in rad)")
    sp.add_argument("--out-report", required=True, help="correlation report JSON output path")
    sp.add_argument("--frame-offset", type=int, help="frames added to label frame indices (default 0)")
    common(sp)
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("synth", help="generate sticky-HMM data with ground-truth labels")
    sp.add_argument("--states", type=int, required=True, help="number of hidden states K (>= 1)")
    sp.add_argument("--length", type=int, required=True, help="frames T")
    sp.add_argument("--seed", type=int, help="unsigned 64-bit seed (default 42)")
    sp.add_argument("--self-prob", type=float, default=0.95, help="self-transition probability in [0, 1)")
    sp.add_argument("--separation", type=float, default=10.0, help="minimum distance between state means, in noise std units")
    sp.add_argument("--rate-hz", type=float, help="sample rate in Hz (default 10)")
    sp.add_argument("--out", required=True, help="kinematics CSV output path")
    sp.add_argument("--out-truth", required=True, help="ground-truth labels CSV output path")
    common(sp)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: input not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: sampler failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
