"""Command-line front end.

Subcommands: match (one pair -> disparity map + report), train-gmm (fit the
offset model from dataset ground truth), eval (score stored predictions),
bench (timing/accuracy table over a dataset), pyramid (dump pyramid
levels), forest (dump tree colorings).  Every run that computes anything
writes its reproducibility manifest before starting; report paths write
matplotlib figures alongside the CSV/JSONL tables.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .aggregation import run_hdp_pipeline
from .config import RunConfig, build_config, write_manifest
from .errors import ConfigError, DataError, TreeStereoError
from .evaluation import (
    BenchScene,
    bench,
    error_rate,
    evaluate_pair,
    occlusion_from_gt,
    run_method,
    write_csv,
    write_jsonl,
)
from .figures import (
    save_bench_chart,
    save_disparity_figure,
    save_error_chart,
    save_matrix_heatmap,
    save_prior_figure,
    save_search_ratio_figure,
)
from .hdp_forest import colorize_forest
from .hdp_model import (
    GmmModel,
    bayes_child_given_parent,
    coarsen_ground_truth,
    collect_offsets,
    conditional_parent_given_child,
    estimate_prior,
    train_gmm,
)
from .pyramid import build_pyramid, build_pyramid_pair, layer_to_image
from .raster_io import (
    find_dataset_scenes,
    load_ground_truth,
    load_image,
    load_stereo_pair,
    save_disparity_pgm,
    save_error_overlay,
    write_pnm,
)

logger = logging.getLogger(__name__)

DEFAULT_MODEL_RESOURCE = "data/default.gmm"


def load_model(path: str | None) -> tuple[GmmModel, str]:
    """Load the model from a path, or fall back to the packaged default."""
    if path is not None:
        return GmmModel.load(path), str(path)
    ref = resources.files("treestereo").joinpath(DEFAULT_MODEL_RESOURCE)
    return GmmModel.parse(ref.read_text(), source="builtin default"), "builtin:default"


class _Emitter:
    """Collects metric rows; optionally streams them as JSONL on stdout."""

    def __init__(self, stream_json: bool):
        self.stream_json = stream_json
        self.rows: list[dict] = []

    def emit(self, row: dict) -> None:
        self.rows.append(row)
        if self.stream_json:
            print(json.dumps(row, sort_keys=True))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [pipeline] and [cost] sections")
    p.add_argument("--method", "--tree", dest="tree", choices=("mst", "rt"),
                   help="spanning structure (default mst)")
    p.add_argument("--hdp", action=argparse.BooleanOptionalAction, default=None,
                   help="narrow the search with hierarchical interval prediction")
    p.add_argument("--model", help="offset model file (default: packaged model)")
    p.add_argument("--seed", type=int, help="seed for the rt edge shuffle")
    p.add_argument("--size-class", dest="size_class", choices=("half", "full"),
                   help="delta0/beta preset by image scale (default half)")
    p.add_argument("--delta0", type=float, help="interval threshold at level 0")
    p.add_argument("--beta", type=float, help="tree-merge overlap threshold")
    p.add_argument("--gamma", type=float, help="aggregation similarity scale")
    p.add_argument("--levels", type=int, help="pyramid levels above the source")
    p.add_argument("--block-size", dest="block_size", type=int,
                   help="pyramid downsampling factor")
    p.add_argument("--median-prefilter", dest="median_prefilter",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="3x3 median filter both views first")
    p.add_argument("--json", action="store_true", help="stream JSONL metrics on stdout")


def _config_overrides(args: argparse.Namespace) -> dict:
    keys = ("tree", "hdp", "seed", "size_class", "delta0", "beta", "gamma",
            "levels", "block_size", "median_prefilter", "d_max", "scale", "model")
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def _build_run_config(args: argparse.Namespace) -> RunConfig:
    return build_config(getattr(args, "config", None), _config_overrides(args))


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _layer_rows(result, name: str, method: str) -> list[dict]:
    rows = []
    for lr in sorted(result.layers, key=lambda l: l.level, reverse=True):
        rows.append({
            "record": "layer",
            "name": name,
            "method": method,
            "level": lr.level,
            "search_ratio_pct": round(100.0 * lr.search_ratio, 4),
            "n_trees": lr.n_trees,
            "stored_entries": lr.stored_entries,
            "timings": {k: round(v, 4) for k, v in lr.timings.items()},
        })
    return rows


def _dump_matrices(out: Path, pair, cfg: RunConfig, model: GmmModel) -> None:
    """Recompute and store the per-level prediction matrices of a run.

    The matrices depend only on the images and the model, so recomputing
    them here reproduces exactly what the pipeline used.
    """
    agg = cfg.aggregation_params()
    pyr = build_pyramid_pair(pair, agg.block_size, agg.levels)
    for level in range(agg.levels - 1, -1, -1):
        lt, rt = pyr.left[level], pyr.right[level]
        prior = estimate_prior(lt, rt, cfg.cost_params())
        conditional = conditional_parent_given_child(
            model.layers[level], lt.d_max, pyr.left[level + 1].d_max, agg.block_size
        )
        bayes = bayes_child_given_parent(conditional, prior)
        np.savetxt(out / f"prior-level{level}.csv", prior[None, :], delimiter=",")
        np.savetxt(out / f"conditional-level{level}.csv", conditional.matrix,
                   delimiter=",")
        np.savetxt(out / f"bayes-level{level}.csv", bayes.matrix, delimiter=",")
        save_prior_figure(out / f"prior-level{level}.png", prior, level)
        save_matrix_heatmap(
            out / f"conditional-level{level}.png", conditional.matrix,
            f"P(parent | child), level {level} -> {level + 1}",
        )
        save_matrix_heatmap(
            out / f"bayes-level{level}.png", bayes.matrix,
            f"P(child | parent), level {level} -> {level + 1}",
        )


def cmd_match(args: argparse.Namespace) -> int:
    cfg = _build_run_config(args)
    if cfg.d_max is None:
        raise ConfigError("match needs --dmax (or d_max in the config file)")
    out = _out_dir(args)
    emitter = _Emitter(args.json)

    inputs = {"left": str(args.left), "right": str(args.right)}
    if args.gt:
        inputs["gt"] = str(args.gt)
    if args.gt_right:
        inputs["gt_right"] = str(args.gt_right)
    model = None
    model_id = None
    if cfg.hdp:
        model, model_id = load_model(cfg.model)
        inputs["model"] = model_id
    write_manifest(out / "manifest.json", cfg, inputs)

    pair = load_stereo_pair(args.left, args.right, cfg.d_max)
    method = cfg.method_label()
    result = run_method(pair, method, cfg.aggregation_params(), cfg.cost_params(),
                        model)
    result.disparity.scale = cfg.output_scale()
    save_disparity_pgm(out / "disparity.pgm", result.disparity)
    save_disparity_figure(out / "disparity.png", result.disparity,
                          f"{pair.name} [{method}]")

    for row in _layer_rows(result, pair.name, method):
        emitter.emit(row)
    summary = {
        "record": "summary",
        "name": pair.name,
        "method": method,
        "seed": cfg.seed,
        "d_max": cfg.d_max,
        "search_ratios_pct": [round(100.0 * r, 4)
                              for r in result.metrics["search_ratios"]],
        "stored_entries": result.metrics["stored_entries"],
        "dense_entries": result.metrics["dense_entries"],
        "seconds": {k: round(v, 4) for k, v in result.metrics["seconds"].items()},
    }

    if cfg.hdp:
        save_search_ratio_figure(
            out / "search-ratios.png",
            [100.0 * r for r in result.metrics["search_ratios"]],
        )

    if args.gt:
        gt = load_ground_truth(args.gt, scale=args.gt_scale, d_max=cfg.d_max)
        occlusion = None
        if args.gt_right:
            gt_right = load_ground_truth(args.gt_right, scale=args.gt_scale,
                                         d_max=cfg.d_max)
            occlusion = occlusion_from_gt(gt, gt_right)
        report = evaluate_pair(pair.name, method, result.disparity, gt, occlusion,
                               seconds=result.metrics["seconds"]["total"])
        save_error_overlay(out / "errors.ppm", result.disparity, gt, occlusion)
        summary["err_ge_1"] = round(report.err_ge_1, 4)
        summary["err_ge_2"] = round(report.err_ge_2, 4)
        summary["n_evaluated"] = report.n_evaluated

    emitter.emit(summary)
    write_jsonl(out / "metrics.jsonl", emitter.rows)
    if args.dump_matrices:
        if not cfg.hdp:
            raise ConfigError("--dump-matrices requires --hdp")
        _dump_matrices(out, pair, cfg, model)
    logger.info("wrote %s", out / "disparity.pgm")
    return 0


def cmd_train_gmm(args: argparse.Namespace) -> int:
    cfg = _build_run_config(args)
    agg = cfg.aggregation_params()
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    emitter = _Emitter(args.json)

    scenes = [s for s in find_dataset_scenes(args.dataset) if s.disp1 is not None]
    if not scenes:
        raise DataError(f"no scenes under {args.dataset} carry a disp1 map")
    rng = np.random.default_rng(args.split_seed)
    order = rng.permutation(len(scenes))
    n_train = (len(scenes) + 1) // 2  # random half forms the training set
    train_scenes = [scenes[i] for i in sorted(order[:n_train].tolist())]

    write_manifest(
        out_path.with_suffix(out_path.suffix + ".manifest.json"),
        cfg,
        {
            "dataset": str(args.dataset),
            "split_seed": args.split_seed,
            "gt_scale": args.gt_scale,
            "train_scenes": [s.name for s in train_scenes],
            "components": args.components,
        },
    )

    samples: list[list[np.ndarray]] = [[] for _ in range(agg.levels)]
    for scene in train_scenes:
        gt = load_ground_truth(scene.disp1, scale=args.gt_scale, d_max=cfg.d_max)
        levels_gt = coarsen_ground_truth(gt, agg.block_size, agg.levels)
        for level in range(agg.levels):
            samples[level].append(
                collect_offsets(levels_gt[level], levels_gt[level + 1],
                                agg.block_size)
            )
    merged = [np.concatenate(s) if s else np.empty(0) for s in samples]
    model = train_gmm(merged, n_components=args.components)
    comments = [
        f"trained on {len(train_scenes)} of {len(scenes)} scenes "
        f"(split seed {args.split_seed}): "
        + " ".join(s.name for s in train_scenes),
        f"gt_scale {args.gt_scale}, block_size {agg.block_size}, "
        f"levels {agg.levels}, components {args.components}",
    ]
    model.save(out_path, comments=comments)
    for level, mix in enumerate(model.layers):
        emitter.emit({
            "record": "mixture",
            "level": level,
            "n_samples": int(merged[level].size),
            "pi": [round(float(w), 6) for w in mix.weights],
            "mu": [round(float(m), 6) for m in mix.means],
            "sigma": [round(float(s), 6) for s in mix.sigmas],
            "final_loglik": round(mix.loglik_history[-1], 4),
        })
    logger.info("wrote %s", out_path)
    return 0


def _as_map_paths(pred: Path, gt: Path, occ: Path | None) -> list[tuple]:
    """Pair up prediction/ground-truth (and occlusion) files by stem."""
    from .raster_io import IMAGE_SUFFIXES

    def stems(d: Path) -> dict[str, Path]:
        return {p.stem: p for p in sorted(d.iterdir())
                if p.suffix.lower() in IMAGE_SUFFIXES}

    if pred.is_file():
        name = pred.stem
        gt_file = gt if gt.is_file() else stems(gt).get(name)
        occ_file = None
        if occ is not None:
            occ_file = occ if occ.is_file() else stems(occ).get(name)
        if gt_file is None:
            raise DataError(f"no ground truth found for {pred}")
        return [(name, pred, gt_file, occ_file)]
    if not pred.is_dir():
        raise DataError(f"{pred} is neither a file nor a directory")
    preds = stems(pred)
    gts = stems(gt) if gt.is_dir() else {}
    occs = stems(occ) if occ is not None and occ.is_dir() else {}
    out = []
    for name, p in preds.items():
        g = gts.get(name) if gts else (gt if gt.is_file() else None)
        if g is None:
            raise DataError(f"no ground truth for prediction {name!r}")
        out.append((name, p, g, occs.get(name)))
    if not out:
        raise DataError(f"no prediction maps under {pred}")
    return out


def cmd_eval(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    emitter = _Emitter(args.json)
    try:
        thresholds = sorted({int(t) for t in args.thresholds.split(",") if t.strip()})
    except ValueError as exc:
        raise ConfigError(f"bad --thresholds {args.thresholds!r}") from exc
    if not thresholds or any(t < 1 for t in thresholds):
        raise ConfigError("thresholds must be integers >= 1")

    entries = _as_map_paths(
        Path(args.pred), Path(args.gt), Path(args.occ) if args.occ else None
    )
    for name, pred_path, gt_path, occ_path in entries:
        pred = load_ground_truth(pred_path, scale=args.pred_scale,
                                 zero_invalid=False)
        gt = load_ground_truth(gt_path, scale=args.gt_scale, d_max=args.dmax)
        occlusion = None
        if occ_path is not None:
            occlusion = load_image(occ_path).data[:, :, 0] != 0
        row = {"name": name, "method": "stored"}
        for t in thresholds:
            row[f"err_ge_{t}"] = round(error_rate(pred, gt, occlusion, t), 4)
        evaluated = pred.valid & gt.valid
        if occlusion is not None:
            evaluated &= ~occlusion
        row["n_evaluated"] = int(evaluated.sum())
        emitter.emit(row)
    write_csv(out / "report.csv", emitter.rows)
    write_jsonl(out / "report.jsonl", emitter.rows)
    save_error_chart(out / "errors.png", emitter.rows)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _build_run_config(args)
    if cfg.d_max is None:
        raise ConfigError("bench needs --dmax (or d_max in the config file)")
    out = _out_dir(args)
    emitter = _Emitter(args.json)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ConfigError("--methods is empty")

    model = None
    if any("hdp" in m for m in methods):
        model, model_id = load_model(cfg.model)
    else:
        model_id = None
    inputs = {"dataset": str(args.dataset), "methods": methods, "runs": args.runs}
    if model_id:
        inputs["model"] = model_id
    write_manifest(out / "manifest.json", cfg, inputs)

    scene_paths = find_dataset_scenes(args.dataset)
    scenes = []
    for sp in scene_paths:
        pair = load_stereo_pair(sp.view1, sp.view5, cfg.d_max, name=sp.name)
        gt_left = None
        occlusion = None
        if args.gt_scale is not None and sp.disp1 is not None:
            gt_left = load_ground_truth(sp.disp1, scale=args.gt_scale,
                                        d_max=cfg.d_max)
            if sp.disp5 is not None:
                gt_right = load_ground_truth(sp.disp5, scale=args.gt_scale,
                                             d_max=cfg.d_max)
                occlusion = occlusion_from_gt(gt_left, gt_right)
        scenes.append(BenchScene(pair=pair, gt_left=gt_left, occlusion=occlusion))

    rows = bench(scenes, methods, cfg.aggregation_params(), cfg.cost_params(),
                 model, runs=args.runs)
    for row in rows:
        emitter.emit(row)
    write_csv(out / "bench.csv", rows)
    write_jsonl(out / "bench.jsonl", rows)
    save_bench_chart(out / "runtime.png", rows)
    save_error_chart(out / "errors.png", rows)
    return 0


def cmd_pyramid(args: argparse.Namespace) -> int:
    cfg = _build_run_config(args)
    if cfg.d_max is None:
        raise ConfigError("pyramid needs --dmax (or d_max in the config file)")
    out = _out_dir(args)
    emitter = _Emitter(args.json)
    image = load_image(args.image)
    layers = build_pyramid(image, cfg.d_max, cfg.block_size, cfg.levels)
    for layer in layers:
        suffix = "pgm" if layer.channels == 1 else "ppm"
        path = out / f"layer-{layer.level}.{suffix}"
        write_pnm(path, layer_to_image(layer))
        emitter.emit({
            "record": "layer",
            "level": layer.level,
            "width": layer.width,
            "height": layer.height,
            "d_max": layer.d_max,
            "file": path.name,
        })
    return 0


def cmd_forest(args: argparse.Namespace) -> int:
    cfg = _build_run_config(args)
    if cfg.d_max is None:
        raise ConfigError("forest needs --dmax (or d_max in the config file)")
    out = _out_dir(args)
    emitter = _Emitter(args.json)
    pair = load_stereo_pair(args.left, args.right, cfg.d_max)
    collected: list[tuple[int, object]] = []

    def keep(level: int, forest) -> None:
        collected.append((level, forest))

    if cfg.hdp:
        model, _ = load_model(cfg.model)
        run_hdp_pipeline(pair, model, cfg.aggregation_params(), cfg.cost_params(),
                         cfg.tree, cfg.median_prefilter, on_forest=keep)
        pyr = build_pyramid_pair(pair, cfg.block_size, cfg.levels)
        dims = {lvl: (layer.height, layer.width)
                for lvl, layer in enumerate(pyr.left)}
    else:
        from .aggregation import run_baseline_pipeline

        run_baseline_pipeline(pair, cfg.aggregation_params(), cfg.cost_params(),
                              cfg.tree, cfg.median_prefilter, on_forest=keep)
        dims = {0: (pair.left.height, pair.left.width)}

    for level, forest in collected:
        h, w = dims[level]
        path = out / f"forest-level{level}.ppm"
        write_pnm(path, colorize_forest(forest.base, h, w))
        emitter.emit({
            "record": "forest",
            "level": level,
            "n_trees": forest.n_trees,
            "search_ratio_pct": round(100.0 * forest.search_ratio(), 4),
            "file": path.name,
        })
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treestereo",
        description="Tree-based stereo matching with hierarchical disparity "
                    "interval prediction.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="match one stereo pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--dmax", dest="d_max", type=int, help="maximum disparity")
    p.add_argument("--scale", type=int, help="output PGM disparity scale")
    p.add_argument("--gt", help="left ground-truth map for scoring")
    p.add_argument("--gt-right", dest="gt_right",
                   help="right ground-truth map (enables occlusion masking)")
    p.add_argument("--gt-scale", dest="gt_scale", type=int, default=1)
    p.add_argument("--dump-matrices", dest="dump_matrices", action="store_true",
                   help="store per-level prior/conditional/posterior tables")
    p.add_argument("--out", default=".")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_match)

    p = sub.add_parser("train-gmm", help="fit the offset model from ground truth")
    p.add_argument("--dataset", required=True,
                   help="root of <scene>/{view1,view5,disp1[,disp5]} directories")
    p.add_argument("--gt-scale", dest="gt_scale", type=int, required=True)
    p.add_argument("--dmax", dest="d_max", type=int)
    p.add_argument("--components", type=int, default=3)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0,
                   help="seed choosing the random training half of the scenes")
    p.add_argument("--out", required=True, help="model file to write")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train_gmm)

    p = sub.add_parser("eval", help="score stored predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction map file or directory")
    p.add_argument("--gt", required=True, help="ground-truth map file or directory")
    p.add_argument("--occ", help="occlusion mask file or directory (nonzero = occluded)")
    p.add_argument("--pred-scale", dest="pred_scale", type=int, default=1)
    p.add_argument("--gt-scale", dest="gt_scale", type=int, required=True)
    p.add_argument("--dmax", type=int, help="clamp decoded ground truth")
    p.add_argument("--thresholds", default="1,2")
    p.add_argument("--out", default=".")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="time methods over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--methods", default="mst,hdp+mst")
    p.add_argument("--dmax", dest="d_max", type=int)
    p.add_argument("--gt-scale", dest="gt_scale", type=int,
                   help="enables error columns when disp maps exist")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--out", default=".")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("pyramid", help="dump pyramid levels as images")
    p.add_argument("--image", required=True)
    p.add_argument("--dmax", dest="d_max", type=int)
    p.add_argument("--out", default=".")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_pyramid)

    p = sub.add_parser("forest", help="dump per-level tree colorings")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--dmax", dest="d_max", type=int)
    p.add_argument("--out", default=".")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_forest)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.fn(args)
    except TreeStereoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
