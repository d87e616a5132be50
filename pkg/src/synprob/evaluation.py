"""Scoring detections against ground-truth annotations."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import Detection, GroundTruthAnnotation, ProbabilityVolume
from .postprocess import DetectionParams, detections_at


@dataclass(frozen=True)
class MatchParams:
    max_centroid_distance: float = 0.3
    require_overlap: bool = False
    method: str = "optimal"

    def __post_init__(self):
        if not self.max_centroid_distance > 0:
            raise ValueError("max_centroid_distance must be positive")
        if self.method not in ("optimal", "greedy"):
            raise ValueError(f"unknown matching method {self.method!r}")


@dataclass
class EvaluationReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    matches: list[tuple[int, int, float]] = field(default_factory=list)
    threshold: Optional[float] = None

    @property
    def precision_defined(self) -> bool:
        return self.true_positives + self.false_positives > 0

    @property
    def recall_defined(self) -> bool:
        return self.true_positives + self.false_negatives > 0

    @property
    def precision(self) -> float:
        # empty detection sets report 1.0; see precision_defined
        tp, fp = self.true_positives, self.false_positives
        return tp / (tp + fp) if tp + fp else 1.0

    @property
    def recall(self) -> float:
        tp, fn = self.true_positives, self.false_negatives
        return tp / (tp + fn) if tp + fn else 1.0

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "precision": self.precision,
            "precision_defined": self.precision_defined,
            "recall": self.recall,
            "recall_defined": self.recall_defined,
            "matches": [{"detection_id": d, "annotation_id": a, "distance_um": dist}
                        for d, a, dist in self.matches],
        }


def _candidate_pairs(dets, gt, params):
    if not dets or not gt:
        return []
    dc = np.array([d.centroid for d in dets], dtype=np.float64)
    gc = np.array([a.centroid for a in gt], dtype=np.float64)
    tree = cKDTree(gc)
    pairs = []
    for i, js in enumerate(tree.query_ball_point(dc, params.max_centroid_distance)):
        for j in sorted(js):
            if params.require_overlap and gt[j].voxels is not None:
                a = {tuple(v) for v in np.asarray(gt[j].voxels).tolist()}
                if not any(tuple(v) in a for v in dets[i].voxels.tolist()):
                    continue
            pairs.append((i, j, float(np.linalg.norm(dc[i] - gc[j]))))
    return pairs


def _greedy(pairs):
    used_d, used_g, out = set(), set(), []
    for i, j, dist in sorted(pairs, key=lambda p: (p[2], p[0], p[1])):
        if i not in used_d and j not in used_g:
            used_d.add(i)
            used_g.add(j)
            out.append((i, j, dist))
    return out


def _optimal(pairs, n_det, n_gt):
    """Maximum-cardinality matching, ties broken by smallest total distance.

    Solved independently on each connected cluster of candidate pairs.
    """
    if not pairs:
        return []
    rows = np.array([p[0] for p in pairs])
    cols = np.array([p[1] for p in pairs])
    graph = coo_matrix((np.ones(len(pairs)), (rows, cols + n_det)),
                       shape=(n_det + n_gt, n_det + n_gt))
    _, comp = connected_components(graph, directed=False)
    by_comp: dict[int, list] = {}
    for p in pairs:
        by_comp.setdefault(comp[p[0]], []).append(p)
    out = []
    for cpairs in by_comp.values():
        ds = sorted({p[0] for p in cpairs})
        gs = sorted({p[1] for p in cpairs})
        di = {d: k for k, d in enumerate(ds)}
        gi = {g: k for k, g in enumerate(gs)}
        # any real edge beats any number of distance savings
        big = 1.0 + sum(p[2] for p in cpairs)
        cost = np.full((len(ds), len(gs)), 2.0 * big * (len(ds) + len(gs)))
        dist = {}
        for i, j, d in cpairs:
            cost[di[i], gi[j]] = d - big
            dist[(i, j)] = d
        r, c = linear_sum_assignment(cost)
        for a, b in zip(r, c):
            key = (ds[a], gs[b])
            if key in dist:
                out.append((key[0], key[1], dist[key]))
    return sorted(out)


def match_detections(dets: Sequence[Detection], gt: Sequence[GroundTruthAnnotation],
                     params: MatchParams = MatchParams()) -> EvaluationReport:
    """One-to-one matching of detections to annotations by centroid distance.

    ``method="optimal"`` (default) maximises the number of matched pairs and
    then minimises total distance; ``"greedy"`` pairs closest-first.
    """
    dets, gt = list(dets), list(gt)
    pairs = _candidate_pairs(dets, gt, params)
    if params.method == "greedy":
        matched = _greedy(pairs)
    else:
        matched = _optimal(pairs, len(dets), len(gt))
    tp = len(matched)
    report = EvaluationReport(
        true_positives=tp,
        false_positives=len(dets) - tp,
        false_negatives=len(gt) - tp,
        matches=[(dets[i].id, gt[j].id, d) for i, j, d in matched],
    )
    return report


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    true_positives: int
    false_positives: int
    false_negatives: int
    precision_defined: bool = True


def pr_curve(p: ProbabilityVolume, gt: Sequence[GroundTruthAnnotation], thresholds: Sequence[float],
             det_params: DetectionParams = DetectionParams(),
             match_params: MatchParams = MatchParams()) -> list[PRPoint]:
    """Precision and recall of the detections at every threshold."""
    thresholds = [float(t) for t in thresholds]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    out = []
    for t in thresholds:
        dets = detections_at(p, t, det_params.min_voxels, det_params.connectivity)
        r = match_detections(dets, gt, match_params)
        out.append(PRPoint(t, r.precision, r.recall, r.true_positives, r.false_positives,
                           r.false_negatives, r.precision_defined))
    return out


def operating_point(curve: Sequence[PRPoint]) -> PRPoint:
    """Where the precision and recall curves meet: the threshold maximising
    ``min(precision, recall)``; ties go to the lower threshold."""
    if not curve:
        raise ValueError("empty curve")
    return max(curve, key=lambda pt: (min(pt.precision, pt.recall), -pt.threshold))


def pr_curve_to_csv(curve: Sequence[PRPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "precision", "recall", "true_positives", "false_positives",
                "false_negatives", "precision_defined"])
    for pt in curve:
        w.writerow([f"{pt.threshold:.6g}", f"{pt.precision:.6f}", f"{pt.recall:.6f}",
                    pt.true_positives, pt.false_positives, pt.false_negatives,
                    int(pt.precision_defined)])
    return buf.getvalue()


@dataclass(frozen=True)
class Ratio:
    numerator: str
    denominator: str
    value: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)


def population_ratio(counts: Mapping[str, int]) -> dict[tuple[str, str], Ratio]:
    """Pairwise count ratios between populations. ``n/0`` is ``inf`` (flagged
    by :attr:`Ratio.infinite`) and ``0/0`` is ``nan``."""
    for k, v in counts.items():
        if v < 0:
            raise ValueError(f"negative count for {k!r}")
    out = {}
    for a, b in itertools.permutations(counts, 2):
        na, nb = counts[a], counts[b]
        if nb == 0:
            value = math.inf if na > 0 else math.nan
        else:
            value = na / nb
        out[(a, b)] = Ratio(a, b, value)
    return out
