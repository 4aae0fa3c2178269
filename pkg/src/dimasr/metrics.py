"""Evaluation: joint VA RMSE, per-dimension RMSE, error distribution, heatmap.

The headline metric is the joint RMSE over both dimensions:

    rmse_va = sqrt( (1/N) * sum_i [ (Vp_i - Vg_i)^2 + (Ap_i - Ag_i)^2 ] )

which satisfies rmse_va^2 = rmse_v^2 + rmse_a^2 by construction. The heatmap
bins instances by their GOLD coordinates (left-closed bins, last bin closed
at 9.0) and reports per-cell joint RMSE plus sample count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import (
    DataError,
    VAPair,
    expand_instances,
    parse_dataset,
    read_predictions,
)


class MetricsError(ValueError):
    pass


DEFAULT_EDGES = (1.0, 3.0, 5.0, 7.0, 9.0)


@dataclass
class EvalReport:
    rmse_va: float
    rmse_v: float
    rmse_a: float
    n: int
    error_median: float
    frac_below_1: float
    frac_above_2: float

    def to_dict(self) -> dict:
        return {
            "rmse_va": self.rmse_va,
            "rmse_v": self.rmse_v,
            "rmse_a": self.rmse_a,
            "n": self.n,
            "error_median": self.error_median,
            "frac_below_1": self.frac_below_1,
            "frac_above_2": self.frac_above_2,
        }


@dataclass
class HeatmapGrid:
    v_edges: tuple
    a_edges: tuple
    # cells[i][j] covers v bin i, a bin j: {"rmse": float|None, "count": int}
    cells: list = field(default_factory=list)

    def total_count(self) -> int:
        return sum(c["count"] for row in self.cells for c in row)

    def to_dict(self) -> dict:
        return {"v_edges": list(self.v_edges), "a_edges": list(self.a_edges), "cells": self.cells}


def _as_arrays(preds: Sequence[VAPair], golds: Sequence[VAPair]):
    if len(preds) != len(golds):
        raise MetricsError(f"length mismatch: {len(preds)} preds vs {len(golds)} golds")
    if not preds:
        raise MetricsError("empty instance set")
    p = np.array([(x.valence, x.arousal) for x in preds])
    g = np.array([(x.valence, x.arousal) for x in golds])
    return p, g


def rmse_va(preds: Sequence[VAPair], golds: Sequence[VAPair]) -> float:
    p, g = _as_arrays(preds, golds)
    return float(np.sqrt(np.mean(np.sum((p - g) ** 2, axis=1))))


def rmse_per_dimension(preds: Sequence[VAPair], golds: Sequence[VAPair]):
    p, g = _as_arrays(preds, golds)
    rv = float(np.sqrt(np.mean((p[:, 0] - g[:, 0]) ** 2)))
    ra = float(np.sqrt(np.mean((p[:, 1] - g[:, 1]) ** 2)))
    return rv, ra


def per_instance_errors(preds: Sequence[VAPair], golds: Sequence[VAPair]) -> list:
    """Euclidean distance between predicted and gold VA points, order preserved."""
    p, g = _as_arrays(preds, golds)
    return [float(e) for e in np.sqrt(np.sum((p - g) ** 2, axis=1))]


def error_distribution(errors: Sequence[float]):
    """(median, fraction strictly below 1.0, fraction strictly above 2.0)."""
    if len(errors) == 0:
        raise MetricsError("empty error list")
    e = np.asarray(errors, dtype=np.float64)
    median = float(np.median(e))  # midpoint of central pair for even N
    return median, float(np.mean(e < 1.0)), float(np.mean(e > 2.0))


def _bin_index(value: float, edges: Sequence[float]) -> int:
    """Left-closed right-open bins; the last bin is closed at its right edge."""
    if value >= edges[-1]:
        return len(edges) - 2
    idx = int(np.searchsorted(edges, value, side="right")) - 1
    return max(idx, 0)


def va_heatmap(preds, golds, v_edges=DEFAULT_EDGES, a_edges=DEFAULT_EDGES) -> HeatmapGrid:
    for edges in (v_edges, a_edges):
        if len(edges) < 2 or any(edges[i] >= edges[i + 1] for i in range(len(edges) - 1)):
            raise MetricsError(f"bin edges must be strictly ascending, got {edges}")
    p, g = _as_arrays(preds, golds)
    nv, na = len(v_edges) - 1, len(a_edges) - 1
    sq = [[[] for _ in range(na)] for _ in range(nv)]
    for k in range(len(g)):
        i = _bin_index(g[k, 0], v_edges)
        j = _bin_index(g[k, 1], a_edges)
        sq[i][j].append(float(np.sum((p[k] - g[k]) ** 2)))
    cells = []
    for i in range(nv):
        row = []
        for j in range(na):
            members = sq[i][j]
            rmse = float(np.sqrt(np.mean(members))) if members else None
            row.append({"rmse": rmse, "count": len(members)})
        cells.append(row)
    return HeatmapGrid(tuple(v_edges), tuple(a_edges), cells)


def full_report(preds: Sequence[VAPair], golds: Sequence[VAPair]) -> EvalReport:
    rv, ra = rmse_per_dimension(preds, golds)
    errors = per_instance_errors(preds, golds)
    median, below, above = error_distribution(errors)
    return EvalReport(
        rmse_va=rmse_va(preds, golds),
        rmse_v=rv,
        rmse_a=ra,
        n=len(preds),
        error_median=median,
        frac_below_1=below,
        frac_above_2=above,
    )


def score_files(gold_path, pred_path, gold_format: str = "simple_jsonl") -> EvalReport:
    """Official-scorer-style entry point: gold dataset file vs prediction file.

    Predictions are matched to gold instances on (sentence_id, aspect_index);
    every gold instance must have exactly one prediction.
    """
    records = parse_dataset(gold_path, format=gold_format)
    instances = [i for i in expand_instances(records) if i.gold is not None]
    if not instances:
        raise MetricsError(f"{gold_path}: no gold-labeled instances")
    pred_map = read_predictions(pred_path)

    missing = [i.key for i in instances if i.key not in pred_map]
    if missing:
        raise MetricsError(f"missing predictions for {len(missing)} instances: {missing[:10]}")
    extra = set(pred_map) - {i.key for i in instances}
    if extra:
        raise MetricsError(f"predictions for unknown instances: {sorted(extra)[:10]}")

    golds = [i.gold for i in instances]
    preds = [pred_map[i.key] for i in instances]
    return full_report(preds, golds)


def paired_from_files(gold_path, pred_path, gold_format: str = "simple_jsonl"):
    """(preds, golds, instances) aligned lists for heatmap/analysis commands."""
    records = parse_dataset(gold_path, format=gold_format)
    instances = [i for i in expand_instances(records) if i.gold is not None]
    pred_map = read_predictions(pred_path)
    missing = [i.key for i in instances if i.key not in pred_map]
    if missing:
        raise MetricsError(f"missing predictions for {len(missing)} instances: {missing[:10]}")
    preds = [pred_map[i.key] for i in instances]
    golds = [i.gold for i in instances]
    return preds, golds, instances
