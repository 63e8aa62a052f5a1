"""Command-line front end: match, detect, render-votes, eval.

Exit codes: 0 success, 2 usage or input error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .cascade import CascadeConfigError
from .config import ConfigError, RunConfig, load_config
from .features import (FeatureSet, FormatError, GrayImage, format_correspondences, format_pgm,
                       load_feature_set, load_pgm, match)
from .pipeline import run_process, run_scene

log = logging.getLogger("votedetect")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3


class InputError(Exception):
    pass


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # not available on every platform
        return os.cpu_count() or 1


def _map(fn, jobs: list, workers: int) -> list:
    """Ordered map, in-process for one worker or one job."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def _dump_json(data) -> str:
    return json.dumps(data, indent=2) + "\n"


def _write_text(text: str, out) -> None:
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load_features(path) -> FeatureSet:
    try:
        return load_feature_set(path)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    except FormatError as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_image(path) -> np.ndarray:
    try:
        return load_pgm(path).pixels
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    except FormatError as exc:
        raise InputError(f"{path}: {exc}") from None


def _parse_pattern_arg(arg: str) -> tuple[str, str | None]:
    feat, _, img = arg.partition(",")
    if not feat:
        raise InputError(f"bad --pattern value {arg!r}; expected FEATURES[,IMAGE]")
    return feat, img or None


def _load_patterns(args_patterns) -> list[tuple[FeatureSet, np.ndarray | None]]:
    out = []
    seen = set()
    for arg in args_patterns:
        feat, img = _parse_pattern_arg(arg)
        fs = _load_features(feat)
        if fs.image_id in seen:
            raise InputError(f"duplicate pattern id {fs.image_id!r}")
        seen.add(fs.image_id)
        out.append((fs, _load_image(img) if img else None))
    return out


def _effective_config(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise InputError(f"{args.config}: {exc.strerror or exc}") from None
    return cfg.with_overrides(seed=getattr(args, "seed", None), metric=getattr(args, "metric", None))


def vote_image_u8(smoothed: np.ndarray) -> np.ndarray:
    from .plotting import normalized_u8

    return normalized_u8(smoothed)


# -- match -------------------------------------------------------------------

def cmd_match(args) -> int:
    cfg = _effective_config(args)
    pattern = _load_features(args.pattern)
    scene = _load_features(args.scene_features)
    try:
        corrs = match(pattern, scene, cfg.metric)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _write_text(format_correspondences(corrs), args.out)
    return EXIT_OK


# -- detect ------------------------------------------------------------------

def _detect_job(job):
    pattern, pattern_pixels, scene, scene_pixels, cfg_dict = job
    cfg = RunConfig.from_dict(cfg_dict)
    res = run_process(pattern, scene, cfg, pattern_pixels, scene_pixels)
    rejections = Counter(t["rejected_by"] for t in res.trace if t.get("rejected_by"))
    summary = {
        "pattern_id": res.pattern_id,
        "keypoints": len(pattern.keypoints),
        "votes": len(res.vote_space.votes),
        "propositions": len(res.propositions),
        "occurrences": len(res.occurrences),
        "rejections": dict(sorted(rejections.items())),
    }
    return summary, [o.to_dict() for o in res.occurrences], res.smoothed_votes, res.propositions


def cmd_detect(args) -> int:
    cfg = _effective_config(args)
    scene = _load_features(args.scene_features)
    scene_pixels = _load_image(args.scene_image) if args.scene_image else None
    patterns = _load_patterns(args.pattern)
    if cfg.cascade.use_ncc:
        if scene_pixels is None:
            raise InputError("--scene-image is required while the NCC filter is enabled")
        missing = [fs.image_id for fs, px in patterns if px is None]
        if missing:
            raise InputError(f"pattern image required while the NCC filter is enabled: "
                             f"{', '.join(missing)}")
    jobs = [(fs, px, scene, scene_pixels, cfg.to_dict()) for fs, px in patterns]
    try:
        results = _map(_detect_job, jobs, args.workers)
    except (ValueError, CascadeConfigError) as exc:
        raise InputError(str(exc)) from None

    report = {
        "config": cfg.to_dict(),
        "scene": {"image_id": scene.image_id, "keypoints": len(scene.keypoints)},
        "patterns": [r[0] for r in results],
        "occurrences": [occ for r in results for occ in r[1]],
    }
    _write_text(_dump_json(report), args.out)

    if args.vote_images:
        d = Path(args.vote_images)
        d.mkdir(parents=True, exist_ok=True)
        for summary, _, smoothed, _ in results:
            (d / f"{summary['pattern_id']}.pgm").write_bytes(
                format_pgm(GrayImage(vote_image_u8(smoothed))))
    if args.figures:
        from .plotting import plot_detections, plot_vote_image

        d = Path(args.figures)
        d.mkdir(parents=True, exist_ok=True)
        for summary, _, smoothed, props in results:
            plot_vote_image(smoothed, d / f"votes_{summary['pattern_id']}.png", props,
                            cfg.bin_size, title=f"votes for {summary['pattern_id']}")
        if scene_pixels is not None:
            plot_detections(scene_pixels, report["occurrences"], d / "detections.png",
                            title=scene.image_id)
    return EXIT_OK


# -- render-votes ------------------------------------------------------------

def cmd_render_votes(args) -> int:
    cfg = _effective_config(args)
    scene = _load_features(args.scene_features)
    scene_pixels = _load_image(args.scene_image) if args.scene_image else None
    (pattern, pattern_pixels), = _load_patterns([args.pattern])
    from .pipeline import build_votes, pattern_meta
    from .vote_image import find_propositions, smooth

    try:
        meta = pattern_meta(pattern, pattern_pixels)
        if scene_pixels is not None and not (scene.width and scene.height):
            scene = FeatureSet(scene.image_id, scene_pixels.shape[1], scene_pixels.shape[0],
                               scene.keypoints)
        vs, vi = build_votes(pattern, scene, meta, cfg)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    smoothed = smooth(vi, cfg.smooth_radius)
    Path(args.out).write_bytes(format_pgm(GrayImage(vote_image_u8(smoothed))))
    if args.png:
        from .plotting import plot_vote_image

        props = find_propositions(vi, cfg.t_min, cfg.nms_radius, cfg.max_props,
                                  cfg.smooth_radius)
        plot_vote_image(smoothed, args.png, props, cfg.bin_size,
                        title=f"votes for {meta.pattern_id} in {scene.image_id}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def _eval_job(job):
    from .synthetic import SceneSpec, proposition_coverage

    spec_dict, cfg_dict = job
    spec = SceneSpec.from_dict(spec_dict)
    cfg = RunConfig.from_dict(cfg_dict)
    scene, results = run_scene(spec, cfg)
    rows = []
    for pid, res in results:
        truths = [t for t in scene.truth if t.pattern_id == res.pattern_id]
        radius = cfg.gamma * scene.patterns[res.pattern_id].meta.diagonal
        rows.append((pid, res.pattern_id, [o.to_dict() for o in res.occurrences], scene.truth,
                     proposition_coverage(res.propositions, truths, radius)))
    return rows


def _load_specs(path):
    from .synthetic import SceneSpec

    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg})") from None
    if isinstance(data, dict):
        data = data.get("scenes")
    if not isinstance(data, list):
        raise InputError(f"{path}: expected a JSON list of scene specs")
    try:
        return [SceneSpec.from_dict(d) for d in data]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad scene spec ({exc})") from None


def cmd_eval(args) -> int:
    from .synthetic import MatchCriteria, ProcessOutcome, default_suite, evaluate

    cfg = _effective_config(args)
    if args.specs:
        specs = _load_specs(args.specs)
    else:
        specs = default_suite(n_scenes=args.scenes,
                              base_seed=args.seed if args.seed is not None else 1)
    if not specs:
        raise InputError("no processes: the scene spec list is empty")
    jobs = [(s.to_dict(), cfg.to_dict()) for s in specs]
    try:
        rows = [row for chunk in _map(_eval_job, jobs, args.workers) for row in chunk]
    except (ValueError, RuntimeError) as exc:
        raise InputError(str(exc)) from None
    if not rows:
        raise InputError("no processes: the scene specs list no patterns")

    criteria = MatchCriteria()
    outcomes = [ProcessOutcome(pid, pat, occs, truths) for pid, pat, occs, truths, _ in rows]
    result = evaluate(outcomes, criteria)
    covered = [c for row in rows for c in row[4]]
    metrics = {
        "detection_rate": result.detection_rate,
        "false_detection_chance": result.false_detection_chance,
        "avg_false_detections": result.avg_false_detections,
        "processes": len(result.processes),
        "processes_with_false": result.processes_with_false,
        "total_false": result.total_false,
        "total_instances": result.total_instances,
        "matched_instances": result.matched_instances,
        "proposition_coverage": sum(covered) / len(covered) if covered else 0.0,
    }
    processes = []
    for score, row in zip(result.processes, rows):
        processes.append({**asdict(score), "covered_instances": sum(row[4]),
                          "occurrences": row[2]})
    report = {
        "config": cfg.to_dict(),
        "criteria": asdict(criteria),
        "scenes": [s.scene_id for s in specs],
        "metrics": metrics,
        "processes": processes,
    }
    table = result.summary_table()
    _write_text(_dump_json(report), args.out)
    if args.out and args.out != "-":
        out = Path(args.out)
        out.with_suffix(".txt").write_text(table)
        out.with_suffix(".tsv").write_text(_process_tsv(processes))
        sys.stdout.write(table)
    else:
        sys.stderr.write(table)
    if args.figures:
        _eval_figures(Path(args.figures), result, specs, rows)
    return EXIT_OK


def _process_tsv(processes) -> str:
    lines = ["process_id\tpattern_id\tinstances\tmatched\tfalse\tcovered"]
    for p in processes:
        lines.append(f"{p['process_id']}\t{p['pattern_id']}\t{p['instances']}\t"
                     f"{len(p['matched_truths'])}\t{len(p['false_detections'])}\t"
                     f"{p['covered_instances']}")
    return "\n".join(lines) + "\n"


def _eval_figures(d: Path, result, specs, rows) -> None:
    from .plotting import plot_detections, plot_eval_summary
    from .synthetic import generate

    d.mkdir(parents=True, exist_ok=True)
    plot_eval_summary(result, d / "eval_summary.png")
    # one annotated scene is enough for a visual check
    spec = specs[0]
    scene = generate(spec)
    occs = [o for pid, _, oc, _, _ in rows if pid.startswith(f"{spec.scene_id}/") for o in oc]
    plot_detections(scene.image.pixels, occs, d / f"scene_{spec.scene_id}.png", scene.truth,
                    title=spec.scene_id)


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="seed override (binary tests, eval suite)")
    common.add_argument("--metric", choices=("l2", "l1", "hamming"),
                        help="descriptor distance override")
    common.add_argument("--out", help="output path ('-' or absent for stdout)")

    parser = argparse.ArgumentParser(prog="votedetect",
                                     description="Multi-instance detection by vote aggregation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", parents=[common], help="nearest-neighbour correspondences")
    p.add_argument("--pattern", required=True, help="pattern keypoints (JSONL)")
    p.add_argument("--scene-features", required=True, help="scene keypoints (JSONL)")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("detect", parents=[common], help="detect pattern occurrences")
    p.add_argument("--scene-features", required=True)
    p.add_argument("--scene-image", help="scene PGM (needed for NCC)")
    p.add_argument("--pattern", action="append", required=True, metavar="FEATURES[,IMAGE]",
                   help="pattern keypoints and optional PGM; repeatable")
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--vote-images", metavar="DIR", help="write per-pattern vote PGMs here")
    p.add_argument("--figures", metavar="DIR", help="write PNG figures here")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("render-votes", parents=[common], help="smoothed vote image as PGM")
    p.add_argument("--scene-features", required=True)
    p.add_argument("--scene-image", help="scene PGM, used for its dimensions")
    p.add_argument("--pattern", required=True, metavar="FEATURES[,IMAGE]")
    p.add_argument("--png", help="also write an annotated PNG figure")
    p.set_defaults(func=cmd_render_votes)

    p = sub.add_parser("eval", parents=[common], help="synthetic evaluation")
    p.add_argument("--specs", help="JSON list of scene specs (default: built-in suite)")
    p.add_argument("--scenes", type=int, default=20, help="size of the built-in suite")
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--figures", metavar="DIR", help="write PNG figures here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="votedetect: %(levelname)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be at least 1")
    if args.command == "render-votes" and not args.out:
        parser.error("render-votes needs --out")
    try:
        return args.func(args)
    except (InputError, ConfigError) as exc:
        print(f"votedetect: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
