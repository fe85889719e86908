"""Ranking metrics: entailment / inference MRR and Hit@K, filtered.

Per query the model is encoded once and scored once against all entities.
Each target entity is ranked with the other known answers filtered out
(they cannot push the target down), ties broken by averaging. A query's
metric is the mean over its mode's target set:

* ``entailment``      targets = train answers,        filter base = train answers
* ``inference``       targets = test \\ valid answers, filter base = test answers
* ``validation-swap`` targets = valid \\ train answers, filter base = valid answers

Queries whose target set is empty are excluded from that mode's averages
and counted. Per-type values average over queries; the headline averages
per-type values with equal weight (a mean over queries is also emitted).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .queries import distribution_of, parse_formula
from .sampler import Dataset, GroundedQueryRecord

HIT_KS = (1, 3, 10)
MODES = ("entailment", "inference", "validation-swap")


def rank(scores: np.ndarray, target: int, filtered: frozenset[int] | set[int]) -> float:
    """Filtered rank of ``target`` with tie averaging.

    rank = 1 + #{unfiltered v' != target with s(v') > s(target)}
             + 0.5 * #{unfiltered v' != target with s(v') = s(target)}
    """
    if not 0 <= target < scores.shape[0]:
        raise IndexError(f"target entity {target} out of range")
    s_t = scores[target]
    keep = np.ones(scores.shape[0], dtype=bool)
    if filtered:
        keep[np.fromiter(filtered, dtype=np.int64)] = False
    keep[target] = False
    better = int(np.count_nonzero(scores[keep] > s_t))
    ties = int(np.count_nonzero(scores[keep] == s_t))
    return 1.0 + better + 0.5 * ties


def _mode_sets(record: GroundedQueryRecord, mode: str):
    """(targets, filter base) for one record under an evaluation mode."""
    if mode == "entailment":
        return record.train_answers, record.train_answers
    if mode == "inference":
        return record.test_answers - record.valid_answers, record.test_answers
    if mode == "validation-swap":
        return record.valid_answers - record.train_answers, record.valid_answers
    raise ValueError(f"unknown mode {mode!r} (expected one of {MODES})")


def _metric(r: float, metric: str) -> float:
    if metric == "MRR":
        return 1.0 / r
    k = int(metric.split("@")[1])
    return 1.0 if r <= k else 0.0


METRICS = ("MRR",) + tuple(f"Hit@{k}" for k in HIT_KS)


@dataclass
class MetricReport:
    """Flat metric rows plus exclusion counts.

    Rows are keyed by (mode, metric, group_kind, group); group kinds are
    ``type``, ``depth``, ``distribution``, and ``overall`` (with groups
    ``mean_over_types`` / ``mean_over_queries``).
    """

    rows: list[dict] = field(default_factory=list)
    excluded: dict[str, int] = field(default_factory=dict)
    evaluated: dict[str, int] = field(default_factory=dict)

    def value(self, mode: str, metric: str, group_kind: str = "overall", group="mean_over_types"):
        for row in self.rows:
            if (
                row["mode"] == mode
                and row["metric"] == metric
                and row["group_kind"] == group_kind
                and row["group"] == group
            ):
                return row["value"]
        raise KeyError((mode, metric, group_kind, group))

    def lines(self) -> list[str]:
        import json

        return [json.dumps(row, sort_keys=True, separators=(",", ":")) for row in self.rows]

    def table(self) -> str:
        width = max((len(str(r["group"])) for r in self.rows), default=10) + 2
        out = []
        for mode in sorted({r["mode"] for r in self.rows}):
            out.append(f"== mode: {mode} (queries evaluated: {self.evaluated.get(mode, 0)}, "
                       f"excluded empty-target: {self.excluded.get(mode, 0)})")
            header = f"{'group':<{width}}" + "".join(f"{m:>10}" for m in METRICS)
            out.append(header)
            for kind in ("overall", "distribution", "depth", "type"):
                rows = [r for r in self.rows if r["mode"] == mode and r["group_kind"] == kind]
                groups = sorted({str(r["group"]) for r in rows})
                for g in groups:
                    cells = []
                    for m in METRICS:
                        v = [r["value"] for r in rows if str(r["group"]) == g and r["metric"] == m]
                        cells.append(f"{v[0]:>10.4f}" if v else f"{'-':>10}")
                    out.append(f"{g:<{width}}" + "".join(cells))
        return "\n".join(out)


def evaluate_scores(
    records: list[GroundedQueryRecord],
    scores: np.ndarray,
    modes=("entailment", "inference"),
) -> MetricReport:
    """Metric computation from precomputed score rows (one per record)."""
    report = MetricReport()
    for mode in modes:
        per_query: list[tuple[str, dict[str, float]]] = []  # (type, metric values)
        excluded = 0
        for record, row in zip(records, scores):
            targets, base = _mode_sets(record, mode)
            if not targets:
                excluded += 1
                continue
            values = {m: 0.0 for m in METRICS}
            for v in sorted(targets):
                r = rank(row, v, base - {v})
                for m in METRICS:
                    values[m] += _metric(r, m)
            for m in METRICS:
                values[m] /= len(targets)
            per_query.append((record.type_formula, values))
        report.excluded[mode] = excluded
        report.evaluated[mode] = len(per_query)
        if not per_query:
            continue

        def add_row(kind, group, metric, value, count):
            report.rows.append(
                {
                    "mode": mode,
                    "metric": metric,
                    "group_kind": kind,
                    "group": group,
                    "value": float(value),
                    "num_queries": count,
                }
            )

        by_type: dict[str, list[dict]] = {}
        for formula, values in per_query:
            by_type.setdefault(formula, []).append(values)
        type_means: dict[str, dict[str, float]] = {}
        for formula, rows in sorted(by_type.items()):
            type_means[formula] = {m: float(np.mean([r[m] for r in rows])) for m in METRICS}
            for m in METRICS:
                add_row("type", formula, m, type_means[formula][m], len(rows))

        # grouped breakdowns share the per-type means so each type weighs equally
        def grouped(key_fn, kind):
            buckets: dict[str, list[str]] = {}
            for formula in type_means:
                buckets.setdefault(key_fn(formula), []).append(formula)
            for group, formulas in sorted(buckets.items()):
                count = sum(len(by_type[f]) for f in formulas)
                for m in METRICS:
                    add_row(kind, group, m, np.mean([type_means[f][m] for f in formulas]), count)

        grouped(lambda f: str(parse_formula(f).depth), "depth")
        grouped(distribution_of, "distribution")

        for m in METRICS:
            add_row(
                "overall",
                "mean_over_types",
                m,
                np.mean([type_means[f][m] for f in type_means]),
                len(per_query),
            )
            add_row(
                "overall",
                "mean_over_queries",
                m,
                np.mean([values[m] for _, values in per_query]),
                len(per_query),
            )
    return report


def evaluate(model, dataset: Dataset, layers=None, mode: str = "both") -> MetricReport:
    """Encode and score every record once, then compute the mode's metrics.

    ``mode`` is one of the evaluation modes, or ``both`` for
    entailment+inference. Records already carry their three answer sets, so
    ``layers`` is accepted only for interface completeness.
    """
    del layers
    modes = ("entailment", "inference") if mode == "both" else (mode,)
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}")
    records = list(dataset.iter_records())
    if not records:
        return MetricReport()
    score_rows = np.zeros((len(records), model.vocab.num_entities))
    # batch per type so tree shapes align and padding stays tight
    by_type: dict[str, list[int]] = {}
    for i, record in enumerate(records):
        by_type.setdefault(record.type_formula, []).append(i)
    for indices in by_type.values():
        for start in range(0, len(indices), 256):
            chunk = indices[start : start + 256]
            e_q = model.encode_graphs([records[i].query for i in chunk])
            score_rows[chunk] = model.entity_scores(e_q)
    return evaluate_scores(records, score_rows, modes)
