"""Depth evaluation metrics with median scaling and depth capping."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

MIN_DEPTH = 1e-3
DEFAULT_CAP = 80.0


class EvaluationError(ValueError):
    """Raised when a depth map has no valid ground-truth pixels."""


@dataclass
class EvalResult:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int
    scale_applied: float

    def as_row(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]

    @staticmethod
    def header() -> list[str]:
        return [f.name for f in fields(EvalResult)]


def _prepare(pred, gt, median_scaling: bool, cap: float):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    valid = gt > 0
    if not valid.any():
        raise EvaluationError("ground truth has no valid (positive) pixels")
    p = pred[valid]
    g = gt[valid]
    scale = 1.0
    if median_scaling:
        scale = float(np.median(g) / np.median(p))
        p = p * scale
    p = np.clip(p, MIN_DEPTH, cap)
    g = np.minimum(g, cap)
    return p, g, scale


def evaluate(pred, gt, median_scaling: bool = True, cap: float = DEFAULT_CAP) -> EvalResult:
    """Abs Rel, Sq Rel, RMSE, RMSE log (base 10) and delta < 1.25^k over pixels with gt > 0.

    Sums are exactly rounded (math.fsum), so results do not depend on pixel order.
    """
    p, g, scale = _prepare(pred, gt, median_scaling, cap)
    n = p.size
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    log_diff = np.log10(p) - np.log10(g)
    return EvalResult(
        abs_rel=math.fsum(np.abs(diff) / g) / n,
        sq_rel=math.fsum(diff * diff / g) / n,
        rmse=math.sqrt(math.fsum(diff * diff) / n),
        rmse_log=math.sqrt(math.fsum(log_diff * log_diff) / n),
        delta1=int(np.count_nonzero(ratio < 1.25)) / n,
        delta2=int(np.count_nonzero(ratio < 1.25 ** 2)) / n,
        delta3=int(np.count_nonzero(ratio < 1.25 ** 3)) / n,
        n_valid=int(n),
        scale_applied=scale,
    )


def mean_result(results: list[EvalResult]) -> EvalResult:
    if not results:
        raise EvaluationError("no results to average")
    vals = {}
    for f in fields(EvalResult):
        col = [getattr(r, f.name) for r in results]
        vals[f.name] = int(sum(col)) if f.name == "n_valid" else math.fsum(col) / len(col)
    return EvalResult(**vals)


def results_to_csv(rows: list[tuple[str, EvalResult]]) -> str:
    """Per-image rows followed by a ``mean`` row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name"] + EvalResult.header())
    for name, r in rows:
        writer.writerow([name] + r.as_row())
    if rows:
        writer.writerow(["mean"] + mean_result([r for _, r in rows]).as_row())
    return buf.getvalue()


def to_dict(r: EvalResult) -> dict:
    return asdict(r)
