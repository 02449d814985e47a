"""``augforge`` command line.

Exit codes: 0 success, 1 invalid input or flags, 2 file I/O failure. Machine
output goes to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import experiment, fixtures, kernels, latent, metrics, scene_io, search, strategy
from .errors import AugforgeError, IoError, ValidationError
from .prng import derive_seed


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); usage errors are exit 1 here
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers

def _read_json(path: str, flag: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise IoError(f"{flag} {path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise IoError(f"{flag} {path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    except OSError as exc:
        raise IoError(f"{flag} {path}: {exc}") from None


def _emit(args, payload, text: Optional[str] = None, csv_text: Optional[str] = None) -> None:
    fmt = args.format or "json"
    if fmt == "text" and text is not None:
        out = text
    elif fmt == "csv" and csv_text is not None:
        out = csv_text
    else:
        out = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    target = getattr(args, "out", None)
    if target and args.command not in ("augment", "generate-k", "make-fixture"):
        try:
            Path(target).write_text(out, encoding="utf-8")
        except OSError as exc:
            raise IoError(f"--out {target}: {exc}") from None
    else:
        sys.stdout.write(out)


def _out_dir(args) -> Path:
    d = args.out or args.out_dir
    if not d:
        raise UsageError(f"{args.command}: --out (or --out-dir) is required")
    return Path(d)


def _map_ordered(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _float_list(text: str, flag: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _thresholds(text: Optional[str]) -> tuple:
    if not text:
        return metrics.COCO_IOU_THRESHOLDS
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError("--iou-thresholds: use lo:step:hi or a comma list")
        lo, step, hi = (float(p) for p in parts)
        n = int(round((hi - lo) / step)) + 1
        return tuple(round(lo + i * step, 10) for i in range(n))
    return tuple(_float_list(text, "--iou-thresholds"))


def _factors(pairs: Sequence[str]) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise UsageError(f"--factor expects name=level, got {p!r}")
        k, v = p.split("=", 1)
        out[k] = v
    return out


# ---------------------------------------------------------------- kernel flags

KERNEL_FLAGS = {
    # flag dest: (param name, kernels it applies to)
    "beta": ("beta", ("fog",)),
    "airlight": ("airlight", ("fog",)),
    "depth_fill": ("depth_fill", ("fog",)),
    "streak_density": ("streak_density", ("rain",)),
    "streak_length": ("streak_length_px", ("rain",)),
    "streak_angle": ("streak_angle_deg", ("rain",)),
    "streak_alpha": ("streak_alpha", ("rain",)),
    "drop_blur_sigma": ("drop_blur_sigma", ("rain",)),
    "wetness": ("wetness", ("rain",)),
    "reflectivity": ("reflectivity", ("rain", "wet_reflection")),
    "road_classes": ("road_class_ids", ("rain", "wet_reflection")),
    "blur_sigma": ("blur_sigma", ("wet_reflection",)),
    "attenuation": ("attenuation_per_row", ("wet_reflection",)),
}


def _add_kernel_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("kernel parameters (unset flags keep kernel defaults)")
    g.add_argument("--beta", type=float, help="fog extinction coefficient [1/meter], >= 0")
    g.add_argument("--airlight", help="fog airlight colour, 'v' or 'r,g,b' [unitless, 0..1]")
    g.add_argument("--depth-fill", type=float, help="fog depth used where depth is missing/invalid [meters], > 0")
    g.add_argument("--streak-density", type=float, help="rain streaks [per megapixel], >= 0")
    g.add_argument("--streak-length", type=float, help="rain streak length [pixels], > 0")
    g.add_argument("--streak-angle", type=float, help="rain streak angle from vertical [degrees], -45..45")
    g.add_argument("--streak-alpha", type=float, help="rain streak opacity [unitless, 0..1]")
    g.add_argument("--drop-blur-sigma", type=float, help="Gaussian blur of the streak layer [pixels], >= 0")
    g.add_argument("--wetness", type=float, help="road darkening factor [unitless, 0..1]; > 0 needs a segmap")
    g.add_argument("--reflectivity", type=float, help="wet-road reflection blend [unitless, 0..1]")
    g.add_argument("--road-classes", help="comma-separated segmap class ids treated as road [label ids]")
    g.add_argument("--blur-sigma", type=float, help="reflection layer blur [pixels], >= 0")
    g.add_argument("--attenuation", type=float, help="reflection decay per pixel row [unitless, (0,1]]")


def _kernel_values(args, kernel: str) -> dict:
    values = {}
    for dest, (param, owners) in KERNEL_FLAGS.items():
        v = getattr(args, dest, None)
        if v is None:
            continue
        flag = "--" + dest.replace("_", "-")
        if kernel not in owners:
            raise UsageError(f"{flag} does not apply to kernel {kernel!r}")
        if dest == "airlight":
            parts = _float_list(v, flag)
            if len(parts) not in (1, 3):
                raise UsageError(f"{flag}: give one value or r,g,b")
            v = parts[0] if len(parts) == 1 else tuple(parts)
        elif dest == "road_classes":
            try:
                v = tuple(int(x) for x in v.split(","))
            except ValueError:
                raise UsageError(f"{flag}: expected comma-separated integers") from None
        values[param] = v
    return values


def _spec_from_args(args) -> kernels.AugmentationSpec:
    if args.spec:
        if args.kernel:
            raise UsageError("use either --spec or --kernel, not both")
        return kernels.AugmentationSpec.from_dict(_read_json(args.spec, "--spec"))
    if not args.kernel:
        raise UsageError("one of --kernel or --spec is required")
    try:
        params = kernels.make_params(args.kernel, _kernel_values(args, args.kernel))
    except kernels.InvalidParams as exc:
        raise kernels.InvalidParams(f"--kernel {args.kernel}: {exc}") from None
    return kernels.AugmentationSpec(args.kernel, params, args.seed)


# ---------------------------------------------------------------- commands

def cmd_augment(args) -> int:
    spec = _spec_from_args(args)
    out = _out_dir(args)
    ids = scene_io.discover_scenes(args.in_dir)

    def work(sid: str) -> str:
        scene = scene_io.load_scene_dir(args.in_dir, sid)
        seeded = kernels.AugmentationSpec(spec.kernel, spec.params, derive_seed(spec.seed, sid))
        scene_io.write_scene(kernels.apply_spec(scene, seeded), out)
        return sid

    done = _map_ordered(work, ids, args.jobs)
    _emit(args, {"spec": spec.to_dict(), "scenes": done, "out": str(out)})
    return 0


def cmd_generate_k(args) -> int:
    if args.k < 1:
        raise UsageError(f"--k must be >= 1, got {args.k}")
    if args.kernel not in kernels.PARAM_TYPES:
        raise UsageError(f"--kernel must be one of {tuple(kernels.PARAM_TYPES)}")
    space = search.ParamSpace.from_dict(_read_json(args.space, "--space"))
    base = _kernel_values(args, args.kernel)
    kernels.make_params(args.kernel, base)
    out = _out_dir(args)
    ids = scene_io.discover_scenes(args.in_dir)

    def work(sid: str) -> list:
        scene = scene_io.load_scene_dir(args.in_dir, sid)
        rows = []
        for j, (spec, packet) in enumerate(
            kernels.generate_k_unique(scene, args.kernel, space, args.k, derive_seed(args.seed, sid), base)
        ):
            aug_id = f"{sid}__aug{j}"
            scene_io.write_scene(scene_io.ScenePacket(
                aug_id, packet.image, packet.depth, packet.segmap, packet.annotations, packet.condition_tag
            ), out)
            rows.append({"entry_id": aug_id, "parent_id": sid, "image_ref": f"{aug_id}.png", "spec": spec.to_dict()})
        return rows

    index = [row for rows in _map_ordered(work, ids, args.jobs) for row in rows]
    scene_io.write_jsonl(out / "index.jsonl", index)
    _emit(args, {"scenes": ids, "k": args.k, "index": str(out / "index.jsonl"), "count": len(index)})
    return 0


def _candidate_loader(directory: str) -> Callable:
    root = Path(directory)

    def load(params):
        path = root / f"{latent.param_hash(params)}.json"
        if not path.exists():
            raise IoError(f"--candidates: no report for {search.param_key(params)} (expected {path})")
        return _read_json(str(path), "--candidates")

    return load


def cmd_search(args) -> int:
    space = search.ParamSpace.from_dict(_read_json(args.space, "--space"))
    if args.objective == "metric-delta":
        if not (args.baseline and args.candidates):
            raise UsageError("--objective metric-delta needs --baseline and --candidates")
        baseline = _read_json(args.baseline, "--baseline")
        load = _candidate_loader(args.candidates)
        metric = args.metric

        def objective(p):
            return search.improvement_objective(baseline, load(p), metric)
    else:
        if not (args.classifier and args.embeddings):
            raise UsageError("--objective latent needs --classifier and --embeddings")
        clf = latent.LinearClassifier.load(args.classifier)
        objective = latent.latent_objective(clf, latent.EmbeddingDirectory(args.embeddings))
    if args.method == "grid":
        trace = search.grid_search(space, args.points, objective, args.budget, args.jobs)
    else:
        trace = search.random_search(space, args.samples, args.seed, objective, args.budget, args.jobs)
    payload = trace.to_dict()
    payload["best_params"] = trace.best_params
    payload["best_value"] = trace.best_value
    _emit(args, payload)
    return 0


def cmd_latent_train(args) -> int:
    config = latent.TrainConfig(args.lr, args.max_iters, args.l2, args.tol, args.seed)
    clear = latent.read_embeddings(args.clear)
    odd = latent.read_embeddings(args.odd)
    clf = latent.train_classifier(clear, odd, config)
    acc = float(np.mean(np.concatenate([clf.predict_proba(clear.vectors) < 0.5, clf.predict_proba(odd.vectors) >= 0.5])))
    if args.out:
        clf.save(args.out)
    payload = clf.to_dict()
    payload["training_accuracy"] = acc
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_latent_score(args) -> int:
    clf = latent.LinearClassifier.load(args.classifier)
    scores = {p: latent.odd_score(clf, latent.read_embeddings(p)) for p in args.embeddings}
    _emit(args, {"scores": scores}, text="".join(f"{v:.6f}  {k}\n" for k, v in scores.items()))
    return 0


def _read_id_file(path: str, flag: str) -> list:
    """Lines of ``id`` or ``id tag``; returns ``[(id, tag)]``."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"{flag} {path}: {exc}") from None
    out = []
    for line in lines:
        parts = line.split()
        if parts:
            out.append((parts[0], parts[1] if len(parts) > 1 else "clear"))
    return out


def _ids_from_args(args) -> list:
    if getattr(args, "scenes", None):
        return [(sid, scene_io.load_scene_dir(args.scenes, sid).condition_tag) for sid in scene_io.discover_scenes(args.scenes)]
    if getattr(args, "ids", None):
        return _read_id_file(args.ids, "--ids")
    raise UsageError(f"{args.command}: one of --scenes or --ids is required")


def cmd_plan(args) -> int:
    ratio = strategy.parse_ratio(args.ratio)
    if args.alpha is not None and not 0 < args.alpha < 1:
        raise strategy.InvalidAlpha(f"--alpha must lie strictly between 0 and 1, got {args.alpha}")
    if args.aug_index is None and not args.space:
        raise UsageError("plan needs --space (or --aug-index with pre-rendered augmentations)")
    space = search.ParamSpace.from_dict(_read_json(args.space, "--space")) if args.space else search.ParamSpace(())
    base = _kernel_values(args, args.kernel)
    items = _ids_from_args(args)
    tags = dict(items)
    available = None
    if args.aug_index:
        available = {}
        for rec in scene_io.read_jsonl(args.aug_index):
            spec = kernels.AugmentationSpec.from_dict(rec["spec"])
            available.setdefault(rec["parent_id"], []).append((rec["entry_id"], rec["image_ref"], spec))
    manifest = strategy.build_ratio_manifest(
        [i for i, _ in items], ratio, args.kernel, space, args.seed,
        base_params=base, tags=tags, flip_prob=args.flip_prob, available=available,
    )
    if args.minibatch:
        if ratio[1] % ratio[0]:
            raise strategy.UnevenAugCount(f"--minibatch needs every image to get the same number of augmentations; --ratio {args.ratio} does not")
        manifest = strategy.build_minibatch_groups(manifest, ratio[1] // ratio[0])
    if args.alpha is not None:
        manifest = strategy.assign_loss_weights(manifest, args.alpha)
    if args.val_clear or args.val_adverse:
        if not (args.val_clear and args.val_adverse and args.n_each is not None):
            raise UsageError("balanced validation needs --val-clear, --val-adverse and --n-each")
        clear = [i for i, _ in _read_id_file(args.val_clear, "--val-clear")]
        adverse = [i for i, _ in _read_id_file(args.val_adverse, "--val-adverse")]
        manifest = strategy.balanced_validation(manifest, clear, adverse, args.n_each, args.seed)
    text = manifest.to_json()
    if args.out:
        manifest.save(args.out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_split(args) -> int:
    fractions = _float_list(args.fractions, "--fractions")
    assignment = strategy.split_dataset(_ids_from_args(args), fractions, args.seed)
    counts = {s: sum(1 for v in assignment.values() if v == s) for s in strategy.SPLITS}
    _emit(args, {"assignment": dict(sorted(assignment.items())), "counts": counts},
          text="".join(f"{k}\t{v}\n" for k, v in sorted(assignment.items())))
    return 0


def cmd_folds(args) -> int:
    if args.manifest:
        folds = strategy.manifest_folds(strategy.DatasetManifest.load(args.manifest), args.k, args.seed)
    else:
        folds = strategy.cv_folds([i for i, _ in _ids_from_args(args)], args.k, args.seed)
    _emit(args, {"folds": [{"fold": i, "train": tr, "holdout": ho} for i, (tr, ho) in enumerate(folds)]})
    return 0


def _record(args, report: dict) -> None:
    if not args.record:
        return
    if not args.run_id:
        raise UsageError("--record needs --run-id")
    keys = [k for k in experiment.METRIC_KEYS if report.get(k) is not None]
    result = experiment.RunResult(args.run_id, _factors(args.factor), args.fold, {k: float(report[k]) for k in keys})
    experiment.record_run(args.record, result)


def _report_text(report: dict, keys: Sequence[str]) -> str:
    lines = []
    for k in keys:
        v = report.get(k)
        lines.append(f"{experiment.METRIC_LABELS[k]:<6} {'undefined' if v is None else f'{v:.4f}'}")
    return "\n".join(lines) + "\n"


def cmd_eval_det(args) -> int:
    thresholds = _thresholds(args.iou_thresholds)
    if not 0 < args.match_iou <= 1:
        raise UsageError(f"--match-iou must lie in (0,1], got {args.match_iou}")
    preds = metrics.load_detections(args.preds)
    gts = metrics.load_detections(args.gts)
    report = metrics.detection_report(preds, gts, thresholds, args.match_iou)
    _record(args, report)
    _emit(args, report, text=_report_text(report, ("map", "map50", "vr", "fr")))
    return 0


def cmd_eval_seg(args) -> int:
    gt_dir, pred_dir = Path(args.gt_dir), Path(args.pred_dir)
    if not gt_dir.is_dir():
        raise IoError(f"--gt-dir {gt_dir}: not a directory")
    names = sorted(p.name for p in gt_dir.glob("*.png"))
    if not names:
        raise IoError(f"--gt-dir {gt_dir}: no PNG files")
    segs = []
    for name in names:
        pred_path = pred_dir / name
        if not pred_path.exists():
            raise IoError(f"--pred-dir {pred_dir}: missing prediction {name}")
        segs.append(metrics.SegPrediction(
            scene_io.read_segmap(pred_path), scene_io.read_segmap(gt_dir / name), args.num_classes, args.ignore_index
        ))
    result = metrics.miou(segs)
    report = {"miou": result["miou"], "per_class_iou": {str(k): v for k, v in result["per_class_iou"].items()}, "n_images": len(segs)}
    _record(args, report)
    _emit(args, report, text=_report_text(report, ("miou",)))
    return 0


def cmd_report(args) -> int:
    records = experiment.read_ledger(args.ledger)
    if not Path(args.ledger).exists():
        raise IoError(f"--ledger {args.ledger}: no such file")
    if not records:
        raise ValidationError(f"--ledger {args.ledger}: no records")
    plan = experiment.ExperimentPlan.load(args.plan) if args.plan else None
    metric_list = args.metrics.split(",") if args.metrics else None
    table = experiment.render_tables(
        records, plan, metrics=metric_list, column_factor=args.column_factor,
        row_factor=args.row_factor, baseline=args.baseline,
    )
    if table.baseline is None and len(table.columns) > 1:
        table.baseline = table.columns[0]
    if table.missing:
        sys.stderr.write(f"warning: {len(table.missing)} missing cells\n")
    args.format = args.format or "text"
    _emit(args, table.to_dict(), text=table.to_text(), csv_text=table.to_csv())
    return 0


def cmd_compare(args) -> int:
    if args.scores_a is not None or args.scores_b is not None:
        if args.scores_a is None or args.scores_b is None:
            raise UsageError("--scores-a and --scores-b go together")
        a, b = _float_list(args.scores_a, "--scores-a"), _float_list(args.scores_b, "--scores-b")
    else:
        if not (args.ledger and args.metric and args.a and args.b):
            raise UsageError("compare needs --scores-a/--scores-b or --ledger, --metric, --a and --b")
        records = experiment.read_ledger(args.ledger)
        sa = experiment.fold_scores(records, args.metric, args.a, args.column_factor)
        sb = experiment.fold_scores(records, args.metric, args.b, args.column_factor)
        folds = sorted(set(sa) & set(sb))
        a, b = [sa[f] for f in folds], [sb[f] for f in folds]
    result = experiment.compare_runs(a, b, args.test, args.alternative)
    _emit(args, result, text=f"{result['test']}  n={result['n']}  statistic={result['statistic']}  p={result['p_value']:.6g}\n")
    return 0


def cmd_make_fixture(args) -> int:
    out = _out_dir(args)
    info = fixtures.write_fixture(out, args.n, args.size, args.seed)
    sys.stdout.write(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="64-bit seed for every random choice (default 0)")
    g.add_argument("--jobs", type=int, default=1, help="worker threads for per-scene work (default 1)")
    g.add_argument("--out-dir", help="output directory for commands that write scenes")
    g.add_argument("--format", choices=("json", "text", "csv"), help="stdout format (default json; text for report)")

    parser = _Parser(prog="augforge", description="Weather augmentation, robustness metrics and experiment bookkeeping.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("augment", parents=[common], help="apply one augmentation to every scene in a directory")
    p.add_argument("--in", dest="in_dir", required=True, help="input scene directory")
    p.add_argument("--out", help="output scene directory")
    p.add_argument("--kernel", choices=kernels.KERNELS[:-1], help="augmentation kernel")
    p.add_argument("--spec", help="AugmentationSpec JSON file (instead of --kernel)")
    _add_kernel_flags(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("generate-k", parents=[common], help="render k distinct augmentations per scene")
    p.add_argument("--in", dest="in_dir", required=True, help="input scene directory")
    p.add_argument("--out", help="output directory (scenes + index.jsonl)")
    p.add_argument("--kernel", required=True, choices=kernels.KERNELS[:3], help="augmentation kernel")
    p.add_argument("--space", required=True, help="ParamSpace JSON file")
    p.add_argument("--k", type=int, default=3, help="augmentations per scene (default 3)")
    _add_kernel_flags(p)
    p.set_defaults(func=cmd_generate_k)

    p = sub.add_parser("search", parents=[common], help="search augmentation parameters")
    p.add_argument("--space", required=True, help="ParamSpace JSON file")
    p.add_argument("--method", choices=("grid", "random"), default="grid", help="search strategy (default grid)")
    p.add_argument("--points", type=int, default=5, help="grid points per continuous dim (default 5)")
    p.add_argument("--samples", type=int, default=20, help="random-search evaluations (default 20)")
    p.add_argument("--objective", choices=("metric-delta", "latent"), default="metric-delta", help="what each evaluation maximizes (default metric-delta)")
    p.add_argument("--metric", default="map", help="metric key for metric-delta: map, map50, vr, fr, miou")
    p.add_argument("--baseline", help="baseline metric report JSON (metric-delta)")
    p.add_argument("--candidates", help="directory of <param-hash>.json candidate reports (metric-delta)")
    p.add_argument("--classifier", help="classifier JSON (latent)")
    p.add_argument("--embeddings", help="directory of <param-hash>.emb files (latent)")
    p.add_argument("--budget", type=int, help="max evaluations (default $AUGFORGE_BUDGET or 10000)")
    p.add_argument("--out", help="write the trace here instead of stdout")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("latent-train", parents=[common], help="fit the clear-vs-target embedding classifier")
    p.add_argument("--clear", required=True, help="clear-weather embedding file")
    p.add_argument("--odd", required=True, help="target-condition embedding file")
    p.add_argument("--lr", type=float, default=0.5, help="gradient-descent step size (default 0.5)")
    p.add_argument("--max-iters", type=int, default=1000, help="iteration cap (default 1000)")
    p.add_argument("--l2", type=float, default=1e-3, help="L2 penalty on weights (default 1e-3)")
    p.add_argument("--tol", type=float, default=1e-9, help="stop when the loss decrease is below this")
    p.add_argument("--out", help="classifier JSON output")
    p.set_defaults(func=cmd_latent_train)

    p = sub.add_parser("latent-score", parents=[common], help="mean target-condition probability of embeddings")
    p.add_argument("--classifier", required=True, help="classifier JSON")
    p.add_argument("--embeddings", required=True, nargs="+", help="embedding files")
    p.add_argument("--out", help="write scores here instead of stdout")
    p.set_defaults(func=cmd_latent_score)

    p = sub.add_parser("plan", parents=[common], help="build a training manifest")
    p.add_argument("--scenes", help="scene directory (ids and condition tags)")
    p.add_argument("--ids", help="text file: one 'id [tag]' per line")
    p.add_argument("--ratio", required=True, help="real:augmented, e.g. 1:3")
    p.add_argument("--kernel", default="rain", choices=kernels.KERNELS[:3], help="augmentation kernel (default rain)")
    p.add_argument("--space", help="ParamSpace JSON file for augmentation draws")
    p.add_argument("--aug-index", help="index.jsonl from generate-k; use those rendered augmentations")
    p.add_argument("--minibatch", action="store_true", help="group every image with its augmentations")
    p.add_argument("--alpha", type=float, help="loss weight on augmented/adverse entries, (0,1); clear gets 1-alpha")
    p.add_argument("--flip-prob", type=float, default=0.0, help="probability of flagging a real image for horizontal flip")
    p.add_argument("--val-clear", help="id file of clear validation candidates")
    p.add_argument("--val-adverse", help="id file of adverse validation candidates")
    p.add_argument("--n-each", type=int, help="validation images per condition")
    p.add_argument("--out", help="manifest JSON output")
    _add_kernel_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("split", parents=[common], help="stratified train/val/test split")
    p.add_argument("--scenes", help="scene directory")
    p.add_argument("--ids", help="text file: one 'id [tag]' per line")
    p.add_argument("--fractions", default="0.5,0.25,0.25", help="train,val,test fractions summing to 1")
    p.add_argument("--out", help="write the assignment here instead of stdout")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("folds", parents=[common], help="cross-validation folds; augmentations follow parents")
    p.add_argument("--manifest", help="manifest JSON (folds over its train split)")
    p.add_argument("--ids", help="text file: one id per line")
    p.add_argument("--scenes", help="scene directory")
    p.add_argument("--k", type=int, default=5, help="number of folds (default 5)")
    p.add_argument("--out", help="write folds here instead of stdout")
    p.set_defaults(func=cmd_folds)

    for name, fn, helptext in (
        ("eval-det", cmd_eval_det, "mAP, mAP50, VR and FR of detections"),
        ("eval-seg", cmd_eval_seg, "mIoU of segmentation rasters"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        if name == "eval-det":
            p.add_argument("--preds", required=True, help="predictions JSONL")
            p.add_argument("--gts", required=True, help="ground truth JSONL")
            p.add_argument("--iou-thresholds", help="mAP IoU thresholds, lo:step:hi or list (default 0.5:0.05:0.95)")
            p.add_argument("--match-iou", type=float, default=metrics.DEFAULT_MATCH_IOU, help="IoU threshold for VR/FR matching (default 0.5)")
        else:
            p.add_argument("--pred-dir", required=True, help="directory of predicted class PNGs")
            p.add_argument("--gt-dir", required=True, help="directory of ground-truth class PNGs (same filenames)")
            p.add_argument("--num-classes", type=int, required=True, help="number of classes")
            p.add_argument("--ignore-index", type=int, help="class value excluded from scoring")
        p.add_argument("--record", help="append the result to this ledger")
        p.add_argument("--run-id", help="run id for --record")
        p.add_argument("--fold", type=int, default=0, help="fold index for --record (default 0)")
        p.add_argument("--factor", action="append", help="factor level for --record, name=level (repeatable)")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.set_defaults(func=fn)

    p = sub.add_parser("report", parents=[common], help="tables and improvements from a ledger")
    p.add_argument("--ledger", required=True, help="ledger JSONL")
    p.add_argument("--plan", help="ExperimentPlan JSON (selects metrics)")
    p.add_argument("--metrics", help="comma-separated metric keys")
    p.add_argument("--column-factor", help="factor whose levels become columns")
    p.add_argument("--row-factor", help="factor whose levels split each metric row")
    p.add_argument("--baseline", help="column used for percent change (default first column)")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", parents=[common], help="paired non-parametric test between two variants")
    p.add_argument("--ledger", help="ledger JSONL (pairs by fold index)")
    p.add_argument("--metric", help="metric key")
    p.add_argument("--a", help="first variant label")
    p.add_argument("--b", help="second variant label")
    p.add_argument("--column-factor", help="factor naming the variants")
    p.add_argument("--scores-a", help="comma-separated scores instead of a ledger")
    p.add_argument("--scores-b", help="comma-separated scores instead of a ledger")
    p.add_argument("--test", choices=("wilcoxon", "sign"), default="wilcoxon", help="Wilcoxon signed-rank (n >= 2) or sign test (n >= 1)")
    p.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided", help="alternative hypothesis on a - b (default two-sided)")
    p.add_argument("--out", help="write the result here instead of stdout")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("make-fixture", parents=[common], help="write a synthetic scene fixture with predictions")
    p.add_argument("--out", help="output directory")
    p.add_argument("--n", type=int, default=10, help="number of scenes (default 10)")
    p.add_argument("--size", type=int, default=64, help="image side [pixels] (default 64)")
    p.set_defaults(func=cmd_make_fixture)
    return parser


def reference_markdown() -> str:
    """Every subcommand's ``--help`` as one Markdown document (docs/cli.md)."""
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    parts = ["# CLI reference", "", "Generated by `python -m augforge.cli --reference`; do not edit by hand.", ""]
    for name, p in [("augforge", parser)] + list(sub.choices.items()):
        parts += [f"## {name}", "", "```", p.format_help().rstrip(), "```", ""]
    return "\n".join(parts)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.jobs < 1:
            raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
        return args.func(args)
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (IoError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except AugforgeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    if sys.argv[1:] == ["--reference"]:
        sys.stdout.write(reference_markdown())
    else:
        main()
