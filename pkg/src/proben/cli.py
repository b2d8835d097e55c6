"""Command-line surface: ``fuse``, ``eval``, ``calibrate`` and ``synth``.

Exit codes: 0 on success, 2 on input parse errors, 3 on configuration
errors. All commands are deterministic functions of their inputs and flags;
randomness is confined to the synthetic generator's seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Dict, List, Optional, Sequence

from .calibrate import GridSpec, grid_search
from .detections import ClassPrior, Detection, estimate_class_prior
from .engine import FusionConfig, fuse_all, pool
from .errors import ConfigurationError, FusionError, ParseError
from .fileio import (
    read_detections,
    read_ground_truth,
    write_curves_csv,
    write_detections,
    write_ground_truth,
    write_json,
)
from .metrics import breakdown
from .score_fusion import CalibrationParams, LinearFusionWeights
from .synth import ModalityProfile, ScenarioSpec, generate, kaist_like_spec

PARSE_ERROR = 2
CONFIG_ERROR = 3


def _parse_assignment(raw: str, flag: str):
    if "=" not in raw:
        raise ConfigurationError(f"{flag} expects KEY=VALUE, got {raw!r}")
    key, value = raw.split("=", 1)
    return key, value


def _parse_calibration(args) -> Dict[str, CalibrationParams]:
    temps: Dict[str, float] = {}
    shifts: Dict[str, float] = {}
    for raw in args.temperature or []:
        modality, value = _parse_assignment(raw, "--temperature")
        temps[modality] = float(value)
    for raw in args.shift or []:
        modality, value = _parse_assignment(raw, "--shift")
        shifts[modality] = float(value)
    calibration = {}
    for modality in sorted(set(temps) | set(shifts)):
        calibration[modality] = CalibrationParams(
            temperature=temps.get(modality, 1.0), shift=shifts.get(modality, 0.0)
        )
    return calibration


def _parse_prior(raw: str, gts, num_classes: int) -> Optional[ClassPrior]:
    if raw == "uniform":
        return None
    if raw.startswith("counted:"):
        background = float(raw.split(":", 1)[1])
        if gts is None:
            raise ConfigurationError("--prior counted requires --ground-truth")
        return estimate_class_prior(gts, background, num_classes=num_classes)
    raise ConfigurationError(f"--prior must be 'uniform' or 'counted:<bg>', got {raw!r}")


def _load_weights(path) -> LinearFusionWeights:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ConfigurationError("weights file must hold a JSON object of modality -> vector")
    return LinearFusionWeights(weights={str(k): v for k, v in payload.items()})


def _read_detection_sets(paths, overrides: Dict[str, str]) -> List[List[Detection]]:
    sets: List[List[Detection]] = []
    next_id = 0
    num_classes = None
    for path in paths:
        dets = read_detections(
            path,
            modality_override=overrides.get(path),
            num_classes=num_classes,
            start_det_id=next_id,
        )
        if dets and num_classes is None:
            num_classes = dets[0].scores.num_foreground
        next_id += len(dets)
        sets.append(dets)
    return sets


def _build_config(args, gts, num_classes) -> FusionConfig:
    weights = _load_weights(args.weights) if args.weights else None
    return FusionConfig(
        iou_threshold=args.iou_threshold,
        score_fusion=args.score_fusion,
        box_fusion=args.box_fusion,
        prior=_parse_prior(args.prior, gts, num_classes),
        calibration=_parse_calibration(args),
        weights=weights,
    )


def cmd_fuse(args) -> int:
    overrides = dict(
        _parse_assignment(raw, "--modality") for raw in (args.modality or [])
    )
    detection_sets = _read_detection_sets(args.inputs, overrides)
    flat = [d for dets in detection_sets for d in dets]
    num_classes = flat[0].scores.num_foreground if flat else 1

    gts = None
    if args.ground_truth:
        gts, _, _, _ = read_ground_truth(args.ground_truth)

    if args.score_fusion == "pooling":
        fused = pool(detection_sets)
    else:
        config = _build_config(args, gts, num_classes)
        fused = fuse_all(detection_sets, config)
    write_detections(args.out, fused)

    per_image: Dict[str, int] = {}
    for d in fused:
        per_image[d.image_id] = per_image.get(d.image_id, 0) + 1
    for image_id in sorted(per_image):
        print(f"{image_id}: {per_image[image_id]} detections")
    print(f"total: {len(fused)} detections over {len(per_image)} images")
    return 0


def cmd_eval(args) -> int:
    dets = read_detections(args.detections)
    gts, tags, num_classes, class_names = read_ground_truth(args.ground_truth)
    gt_images = {g.image_id for g in gts} | set(tags)
    orphan = sorted({d.image_id for d in dets} - gt_images)
    if orphan:
        print(
            f"warning: {len(orphan)} image(s) carry detections but no ground-truth record",
            file=sys.stderr,
        )

    report = breakdown(
        dets,
        gts,
        tags if args.breakdown else {},
        iou_threshold=args.iou_threshold,
        num_classes=num_classes,
        class_names=class_names,
    )

    payload = report.to_dict()
    if args.metric != "both":
        dropped = ("lamr",) if args.metric == "ap" else ("ap", "mean_ap")
        for subset in payload["subsets"].values():
            if subset is None:
                continue
            for key in dropped:
                subset.pop(key, None)
    write_json(args.out_prefix + ".json", payload)
    with open(args.out_prefix + ".txt", "w", encoding="utf-8") as fh:
        fh.write(report.to_text())

    if args.curves:
        for key, subset in report.subsets.items():
            if subset is None:
                continue
            write_curves_csv(
                f"{args.out_prefix}.{key}.miss_fppi.csv",
                ("fppi", "miss_rate"),
                zip(*subset.miss_curve) if subset.miss_curve[0] else [],
            )
            for cls, (recall, precision) in subset.pr_curves.items():
                write_curves_csv(
                    f"{args.out_prefix}.{key}.class{cls}.pr.csv",
                    ("recall", "precision"),
                    zip(recall, precision),
                )

    overall = report.subsets["all"]
    mean_ap = "n/a" if overall.mean_ap is None else f"{overall.mean_ap:.4f}"
    lamr_s = "n/a" if overall.lamr is None else f"{overall.lamr:.4f}"
    print(f"mAP@{args.iou_threshold}: {mean_ap}  LAMR: {lamr_s}")
    return 0


def _parse_grid(raw: str, flag: str) -> GridSpec:
    parts = raw.split(":")
    if len(parts) != 3:
        raise ConfigurationError(f"{flag} expects START:STOP:STEPS, got {raw!r}")
    try:
        return GridSpec(float(parts[0]), float(parts[1]), int(parts[2]))
    except ValueError as exc:
        raise ConfigurationError(f"invalid {flag}: {exc}") from exc


def cmd_calibrate(args) -> int:
    overrides = dict(
        _parse_assignment(raw, "--modality") for raw in (args.modality or [])
    )
    detection_sets = _read_detection_sets(args.inputs, overrides)
    gts, tags, num_classes, _ = read_ground_truth(args.ground_truth)
    config = _build_config(args, gts, num_classes)
    image_ids = sorted(
        {g.image_id for g in gts}
        | set(tags)
        | {d.image_id for dets in detection_sets for d in dets}
    )

    best, surface = grid_search(
        detection_sets,
        gts,
        modality=args.calibrate_modality,
        t_grid=_parse_grid(args.grid_t, "--grid-t"),
        b_grid=_parse_grid(args.grid_b, "--grid-b"),
        objective=args.objective,
        config=config,
        num_classes=num_classes,
        image_ids=image_ids,
    )

    with open(args.out_prefix + ".surface.csv", "w", encoding="utf-8") as fh:
        fh.write(f"temperature,shift,{args.objective}\n")
        for t, b, value in surface:
            fh.write(f"{t!r},{b!r},{value!r}\n")
    write_json(
        args.out_prefix + ".best.json",
        {
            "modality": args.calibrate_modality,
            "temperature": best.temperature,
            "shift": best.shift,
            "objective": args.objective,
        },
    )
    print(
        f"best calibration for {args.calibrate_modality}: "
        f"T={best.temperature!r} b={best.shift!r} ({args.objective})"
    )
    return 0


def _spec_from_json(path) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        profiles = {
            modality: {
                tag: ModalityProfile(**profile) for tag, profile in by_tag.items()
            }
            for modality, by_tag in payload.pop("profiles").items()
        }
        if "class_names" in payload and payload["class_names"] is not None:
            payload["class_names"] = tuple(payload["class_names"])
        if "image_size" in payload:
            payload["image_size"] = tuple(payload["image_size"])
        return ScenarioSpec(profiles=profiles, **payload)
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"invalid scenario spec: {exc}") from exc


def _expanded_preset(seed: int, images: int, modalities: int) -> ScenarioSpec:
    spec = kaist_like_spec(seed=seed, image_count=images)
    if modalities <= 2:
        return spec
    profiles = dict(spec.profiles)
    balanced = ModalityProfile(
        recall=0.7, fp_rate=0.5, tp_concentration=2.8, fp_concentration=1.6, loc_noise=4.5
    )
    for i in range(modalities - 2):
        profiles[f"aux{i + 1}"] = {"day": balanced, "night": balanced}
    return ScenarioSpec(
        seed=spec.seed,
        image_count=spec.image_count,
        num_classes=spec.num_classes,
        image_size=spec.image_size,
        objects_per_image=spec.objects_per_image,
        night_fraction=spec.night_fraction,
        ignore_fraction=spec.ignore_fraction,
        profiles=profiles,
        class_names=spec.class_names,
    )


def cmd_synth(args) -> int:
    if args.spec:
        spec = _spec_from_json(args.spec)
    elif args.preset == "kaist-like":
        spec = _expanded_preset(args.seed, args.images, args.modalities)
    else:
        raise ConfigurationError(f"unknown preset {args.preset!r}")

    dataset = generate(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    write_ground_truth(
        os.path.join(args.out_dir, "gt.jsonl"),
        dataset.ground_truths,
        dataset.tags,
        dataset.num_classes,
        class_names=spec.class_names,
    )
    for modality in sorted(dataset.detections):
        write_detections(
            os.path.join(args.out_dir, f"det_{modality}.jsonl"),
            dataset.detections[modality],
        )
        print(f"{modality}: {len(dataset.detections[modality])} detections")
    print(
        f"{len(dataset.tags)} images, {len(dataset.ground_truths)} ground-truth objects "
        f"-> {args.out_dir}"
    )
    return 0


def _add_fusion_flags(parser):
    parser.add_argument("--iou-threshold", type=float, default=0.5)
    parser.add_argument(
        "--score-fusion",
        default="proben",
        choices=["max", "avg-posteriors", "avg-logits", "proben", "linear", "pooling"],
    )
    parser.add_argument(
        "--box-fusion", default="avg", choices=["argmax", "avg", "s-avg", "v-avg"]
    )
    parser.add_argument("--prior", default="uniform")
    parser.add_argument("--temperature", action="append", metavar="MODALITY=T")
    parser.add_argument("--shift", action="append", metavar="MODALITY=B")
    parser.add_argument("--weights", metavar="FILE")
    parser.add_argument("--modality", action="append", metavar="FILE=TAG")
    parser.add_argument("--ground-truth", metavar="FILE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proben",
        description="Very-late fusion of multimodal detections, with evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fuse = sub.add_parser("fuse", help="fuse one or more detection files")
    p_fuse.add_argument("inputs", nargs="+")
    p_fuse.add_argument("--out", required=True)
    _add_fusion_flags(p_fuse)
    p_fuse.set_defaults(func=cmd_fuse)

    p_eval = sub.add_parser("eval", help="evaluate detections against ground truth")
    p_eval.add_argument("detections")
    p_eval.add_argument("ground_truth")
    p_eval.add_argument("--metric", default="both", choices=["ap", "lamr", "both"])
    p_eval.add_argument("--breakdown", action="store_true")
    p_eval.add_argument("--curves", action="store_true")
    p_eval.add_argument("--iou-threshold", type=float, default=0.5)
    p_eval.add_argument("--out-prefix", default="eval_report")
    p_eval.set_defaults(func=cmd_eval)

    p_cal = sub.add_parser("calibrate", help="grid-search temperature/shift calibration")
    p_cal.add_argument("inputs", nargs="+")
    p_cal.add_argument("--grid-t", default="0.5:5:19", metavar="START:STOP:STEPS")
    p_cal.add_argument("--grid-b", default="0:0:1", metavar="START:STOP:STEPS")
    p_cal.add_argument("--objective", default="lamr", choices=["lamr", "ap"])
    p_cal.add_argument("--calibrate-modality", required=True)
    p_cal.add_argument("--out-prefix", default="calibration")
    _add_fusion_flags(p_cal)
    p_cal.set_defaults(func=cmd_calibrate)

    p_synth = sub.add_parser("synth", help="generate a synthetic scenario")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.add_argument("--preset", default="kaist-like")
    p_synth.add_argument("--spec", metavar="FILE")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--images", type=int, default=2000)
    p_synth.add_argument("--modalities", type=int, default=2)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return PARSE_ERROR
    except (ConfigurationError, FusionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
