"""Error metrics, occlusion handling, and the benchmark harness."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregation import (
    AggregationParams,
    PipelineResult,
    run_baseline_pipeline,
    run_hdp_pipeline,
)
from .cost_volume import CostParams
from .errors import ConfigError, DataError
from .hdp_model import GmmModel
from .raster_io import DisparityMap, StereoPair

logger = logging.getLogger(__name__)


def error_rate(
    predicted: DisparityMap,
    ground_truth: DisparityMap,
    occlusion: np.ndarray | None = None,
    threshold: int = 1,
) -> float:
    """Percentage of evaluated pixels with |pred - gt| >= threshold.

    Evaluated pixels are those valid in both maps and, when an occlusion
    mask is given, not occluded.
    """
    if predicted.values.shape != ground_truth.values.shape:
        raise DataError(
            f"prediction {predicted.values.shape} vs ground truth "
            f"{ground_truth.values.shape}"
        )
    if threshold < 1:
        raise ConfigError(f"threshold must be >= 1, got {threshold}")
    evaluated = predicted.valid & ground_truth.valid
    if occlusion is not None:
        if occlusion.shape != predicted.values.shape:
            raise DataError("occlusion mask shape mismatch")
        evaluated &= ~occlusion
    n = int(evaluated.sum())
    if n == 0:
        raise DataError("no pixels left to evaluate")
    diff = np.abs(predicted.values - ground_truth.values)
    return 100.0 * float((diff[evaluated] >= threshold).sum()) / n


def occlusion_from_gt(gt_left: DisparityMap, gt_right: DisparityMap) -> np.ndarray:
    """Mark left pixels whose match is off-image or fails the cross-check.

    A valid left pixel p with disparity d is occluded when p - d falls off
    the right image, the right map has no value there, or the two
    disparities differ by more than 1.  Pixels without left ground truth
    stay unmarked; metrics exclude them through the validity mask.
    """
    if gt_left.values.shape != gt_right.values.shape:
        raise DataError("left/right ground truth shapes differ")
    h, w = gt_left.values.shape
    cols = np.arange(w)[None, :]
    target = cols - gt_left.values
    inside = target >= 0
    safe = np.maximum(target, 0)
    rows = np.arange(h)[:, None]
    right_vals = gt_right.values[rows, safe]
    right_ok = gt_right.valid[rows, safe]
    consistent = inside & right_ok & (np.abs(gt_left.values - right_vals) <= 1)
    return gt_left.valid & ~consistent


@dataclass
class ErrorReport:
    """Per pair-and-method evaluation summary."""

    name: str
    method: str
    err_ge_1: float
    err_ge_2: float
    n_evaluated: int
    seconds: float | None = None
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = {
            "name": self.name,
            "method": self.method,
            "err_ge_1": round(self.err_ge_1, 4),
            "err_ge_2": round(self.err_ge_2, 4),
            "n_evaluated": self.n_evaluated,
        }
        if self.seconds is not None:
            out["seconds"] = round(self.seconds, 4)
        out.update(self.extra)
        return out


def evaluate_pair(
    name: str,
    method: str,
    predicted: DisparityMap,
    ground_truth: DisparityMap,
    occlusion: np.ndarray | None = None,
    seconds: float | None = None,
) -> ErrorReport:
    evaluated = predicted.valid & ground_truth.valid
    if occlusion is not None:
        evaluated &= ~occlusion
    return ErrorReport(
        name=name,
        method=method,
        err_ge_1=error_rate(predicted, ground_truth, occlusion, threshold=1),
        err_ge_2=error_rate(predicted, ground_truth, occlusion, threshold=2),
        n_evaluated=int(evaluated.sum()),
        seconds=seconds,
    )


def search_ratios_percent(result: PipelineResult) -> list[float]:
    """Per-level searched fraction of the disparity range, in percent (fine first)."""
    return [100.0 * r for r in result.metrics["search_ratios"]]


KNOWN_METHODS = ("mst", "rt", "hdp+mst", "hdp+rt", "m+mst", "m+rt",
                 "m+hdp+mst", "m+hdp+rt")


def parse_method(name: str) -> tuple[bool, bool, str]:
    """Split a method label into (median_prefilter, hdp, tree_kind)."""
    parts = name.strip().lower().split("+")
    median = False
    hdp = False
    if parts and parts[0] == "m":
        median = True
        parts = parts[1:]
    if parts and parts[0] == "hdp":
        hdp = True
        parts = parts[1:]
    if len(parts) != 1 or parts[0] not in ("mst", "rt"):
        raise ConfigError(
            f"unknown method {name!r}; expected a combination like "
            f"{', '.join(KNOWN_METHODS)}"
        )
    return median, hdp, parts[0]


def run_method(
    pair: StereoPair,
    method: str,
    params: AggregationParams,
    cost_params: CostParams | None = None,
    model: GmmModel | None = None,
) -> PipelineResult:
    """Dispatch a method label to the matching pipeline."""
    median, hdp, tree = parse_method(method)
    if hdp:
        if model is None:
            raise ConfigError(f"method {method!r} needs an offset model")
        return run_hdp_pipeline(pair, model, params, cost_params, tree, median)
    return run_baseline_pipeline(pair, params, cost_params, tree, median)


@dataclass(frozen=True)
class BenchScene:
    pair: StereoPair
    gt_left: DisparityMap | None = None
    occlusion: np.ndarray | None = None


def bench(
    scenes: list[BenchScene],
    methods: list[str],
    params: AggregationParams,
    cost_params: CostParams | None = None,
    model: GmmModel | None = None,
    runs: int = 3,
) -> list[dict]:
    """Time every method on every scene; median wall time over ``runs``.

    Rows carry error rates when ground truth is present, and each
    prediction-narrowed method gets a speedup column relative to the plain
    method with the same tree kind and prefilter on the same scene.
    """
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    for m in methods:
        parse_method(m)
    rows: list[dict] = []
    for scene in scenes:
        base_seconds: dict[tuple[bool, str], float] = {}
        for method in methods:
            median, hdp, tree = parse_method(method)
            times = []
            result = None
            for _ in range(runs):
                t0 = time.perf_counter()
                result = run_method(scene.pair, method, params, cost_params, model)
                times.append(time.perf_counter() - t0)
            seconds = float(np.median(times))
            row = {
                "name": scene.pair.name,
                "method": method,
                "seconds": round(seconds, 4),
                "runs": runs,
                "search_ratio_pct": round(
                    100.0 * result.metrics["search_ratios"][0], 4
                ),
            }
            if not hdp:
                base_seconds[(median, tree)] = seconds
            elif (median, tree) in base_seconds:
                row["speedup"] = round(base_seconds[(median, tree)] / seconds, 4)
            if scene.gt_left is not None:
                report = evaluate_pair(
                    scene.pair.name, method, result.disparity, scene.gt_left,
                    scene.occlusion,
                )
                row["err_ge_1"] = round(report.err_ge_1, 4)
                row["err_ge_2"] = round(report.err_ge_2, 4)
            rows.append(row)
            logger.info("bench %s %s: %.3fs", scene.pair.name, method, seconds)
    return rows


def write_csv(path: str | Path, rows: list[dict]) -> None:
    """Delimited output with the union of row keys, first-seen order."""
    import csv

    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def write_jsonl(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
