"""Relevance labeling, precision/recall metrics and method comparisons."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ranking import RankedResult
from .relational import CategoryAnnotation, Pair

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RelevanceRule:
    """Category pattern a retrieved pair must match.

    The exact pattern ``(class_a, class_b)`` scores 1; ``partial_credit``
    maps further ``(label_a, label_b)`` patterns to weights in (0, 1].
    ``symmetric`` also accepts each pattern with the two ends swapped.
    """

    class_a: str
    class_b: str
    symmetric: bool = False
    partial_credit: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        for pattern, w in self.partial_credit.items():
            if not 0 < w <= 1:
                raise ValueError(f"partial credit for {pattern} must lie in (0, 1], got {w}")

    @property
    def patterns(self) -> dict[tuple[str, str], float]:
        out = dict(self.partial_credit)
        out[(self.class_a, self.class_b)] = 1.0
        return out

    def weight(self, labels_a, labels_b) -> float:
        best = 0.0
        for (pa, pb), w in self.patterns.items():
            if (pa in labels_a and pb in labels_b) or (
                self.symmetric and pb in labels_a and pa in labels_b
            ):
                best = max(best, w)
        return best


def label_relevance(pairs, annotations: CategoryAnnotation, rule: RelevanceRule) -> list[float]:
    """Relevance weight of each pair (a ranking or a plain pair list).

    Unannotated objects get weight 0 and a logged warning.
    """
    if isinstance(pairs, RankedResult):
        pairs = pairs.pairs
    weights = []
    missing = set()
    for a, b in pairs:
        for oid in (a, b):
            if oid not in annotations:
                missing.add(oid)
        weights.append(rule.weight(annotations.labels(a), annotations.labels(b)))
    if missing:
        log.warning("%d ranked objects carry no category annotation; scored as irrelevant", len(missing))
    return weights


def precision_recall_curve(weights: Sequence[float], total_relevant: float | None = None):
    """``(recall, precision)`` after each rank.

    ``total_relevant`` is the relevant mass of the evaluation universe and
    defaults to the sum of ``weights``.
    """
    w = np.asarray(weights, dtype=float)
    total = float(w.sum()) if total_relevant is None else float(total_relevant)
    if not total > 0:
        raise ValueError("precision/recall needs positive total relevance")
    hits = np.cumsum(w)
    ranks = np.arange(1, w.size + 1)
    return list(zip((hits / total).tolist(), (hits / ranks).tolist()))


def auc_interpolated(curve) -> float:
    """Area under a precision/recall curve with linear interpolation.

    Points at recall 0 carry no area and are dropped; among points sharing a
    recall the highest precision is kept; the curve is anchored at recall 0
    with the precision of its first remaining point.
    """
    if len(curve) == 0:
        raise ValueError("empty precision/recall curve")
    recall = np.array([r for r, _ in curve], dtype=float)
    precision = np.array([p for _, p in curve], dtype=float)
    if np.any(np.diff(recall) < -1e-12):
        raise ValueError("recall values must be non-decreasing")
    keep = recall > 0
    if not keep.any():
        return 0.0
    recall, precision = recall[keep], precision[keep]
    levels, start = np.unique(recall, return_index=True)
    best = np.maximum.reduceat(precision, start)
    r = np.concatenate([[0.0], levels])
    p = np.concatenate([[best[0]], best])
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2.0))


def top_k_score(weights: Sequence[float], k: int = 10) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    return float(np.sum(np.asarray(weights, dtype=float)[:k])) / k


def ranking_auc(weights, total_relevant=None) -> float:
    if float(np.sum(weights)) <= 0 and not total_relevant:
        return 0.0
    return auc_interpolated(precision_recall_curve(weights, total_relevant))


# ---------------------------------------------------------------------------
# method comparison
# ---------------------------------------------------------------------------


def majority(replications: int) -> int:
    """Smallest count that is a strict majority of ``replications``."""
    return replications // 2 + 1


def compare_methods(results: Mapping[str, Sequence[Mapping[str, float]]], metric: str = "auc"):
    """Win counts across query groups.

    ``results`` maps a query-group id to its replications; each replication
    maps method name -> metric value.  Returns ``{method: (wins, smoothed)}``
    where ``wins`` counts replication-level wins divided by the number of
    replications and ``smoothed`` counts groups a method wins in a strict
    majority of replications.  Tied best values credit every tied method.
    """
    groups = list(results)
    if not groups:
        return {}
    methods = sorted(results[groups[0]][0]) if results[groups[0]] else []
    n_rep = len(results[groups[0]])
    for g in groups:
        reps = results[g]
        if len(reps) != n_rep:
            raise ValueError(f"group {g!r} has {len(reps)} replications, expected {n_rep}")
        for rep in reps:
            if sorted(rep) != methods:
                raise ValueError(f"group {g!r} does not report every method")
    wins = {m: 0 for m in methods}
    smoothed = {m: 0 for m in methods}
    need = majority(n_rep)
    for g in groups:
        local = {m: 0 for m in methods}
        for rep in results[g]:
            best = max(rep.values())
            for m in methods:
                if rep[m] == best:
                    local[m] += 1
        for m in methods:
            wins[m] += local[m]
            if local[m] >= need:
                smoothed[m] += 1
    return {m: (wins[m] / n_rep, smoothed[m]) for m in methods}


def win_table(results_by_metric: Mapping[str, Mapping[str, Sequence[Mapping[str, float]]]]):
    """``{method: {"#AUC": .., "#AUC.S": .., "#TOP10": .., ...}}`` across metrics."""
    table: dict[str, dict[str, float]] = {}
    for metric, results in results_by_metric.items():
        label = metric.upper()
        for method, (w, s) in compare_methods(results).items():
            row = table.setdefault(method, {})
            row[f"#{label}"] = w
            row[f"#{label}.S"] = s
    return table


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class QueryRecord:
    group: str
    replication: int
    scorer: str
    auc: float
    top10: float
    n_relevant: float
    n_candidates: int
    coverage: float
    query_pairs: list = field(default_factory=list)


@dataclass
class EvaluationReport:
    records: list[QueryRecord] = field(default_factory=list)
    top_k: int = 10

    def results(self, metric: str):
        out: dict[str, dict[int, dict[str, float]]] = {}
        for r in self.records:
            out.setdefault(r.group, {}).setdefault(r.replication, {})[r.scorer] = getattr(r, metric)
        return {g: [reps[i] for i in sorted(reps)] for g, reps in out.items()}

    def win_table(self):
        return win_table({"auc": self.results("auc"), f"top{self.top_k}": self.results("top10")})

    def mean_metric(self, metric: str = "auc") -> dict[str, float]:
        sums: dict[str, list[float]] = {}
        for r in self.records:
            sums.setdefault(r.scorer, []).append(getattr(r, metric))
        return {m: float(np.mean(v)) for m, v in sorted(sums.items())}

    def to_dict(self) -> dict:
        return {
            "records": [asdict(r) for r in self.records],
            "mean_auc": self.mean_metric("auc"),
            "mean_top10": self.mean_metric("top10"),
            "wins": self.win_table(),
        }

    def write_tsv(self, path) -> None:
        cols = ["group", "replication", "scorer", "auc", "top10", "n_relevant", "n_candidates", "coverage"]
        with open(path, "w") as fh:
            fh.write("\t".join(cols) + "\n")
            for r in self.records:
                row = asdict(r)
                fh.write("\t".join(_cell(row[c]) for c in cols) + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return str(v)


def format_win_table(table) -> str:
    cols = sorted({c for row in table.values() for c in row})
    lines = ["method\t" + "\t".join(cols)]
    for method in sorted(table):
        lines.append(method + "\t" + "\t".join(f"{table[method].get(c, 0):g}" for c in cols))
    return "\n".join(lines)
