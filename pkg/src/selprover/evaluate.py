"""Ranking metrics, precision-recall area, and search-efficiency measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kb import Atom


@dataclass(frozen=True, slots=True)
class RankRecord:
    fact: Atom
    rank: int
    candidate_count: int


@dataclass(frozen=True, slots=True)
class EfficiencyRecord:
    traversed: int
    established: int
    wall_ms: float

    def __post_init__(self):
        if self.established > self.traversed:
            raise ValueError(f"established ({self.established}) cannot exceed "
                             f"traversed ({self.traversed})")


def rank_filtered(fact: Atom, scorer, known: frozenset) -> RankRecord:
    """Filtered rank of a fact against both argument corruptions.

    Corruptions replace either argument with every constant; candidates that
    are themselves known facts are filtered out. Ties with the fact's own
    score contribute half their count (mean tie handling), so the rank is
    invariant under relabeling among equals.
    """
    rel, (subj, obj) = fact.pred, fact.args
    tails = scorer.score_tails(rel, subj)
    heads = scorer.score_heads(rel, obj)
    pivot = float(tails[obj])
    above = ties = count = 0
    for c in range(tails.shape[0]):
        if c != obj and (rel, subj, c) not in known:
            s = float(tails[c])
            count += 1
            above += s > pivot
            ties += s == pivot
        if c != subj and (rel, c, obj) not in known:
            s = float(heads[c])
            count += 1
            above += s > pivot
            ties += s == pivot
    return RankRecord(fact, 1 + above + ties // 2, count)


def compute_mrr_hits(records: list[RankRecord],
                     ms: tuple[int, ...] = (1, 3, 10)) -> dict[str, float]:
    if not records:
        raise ValueError("cannot compute metrics over zero rank records")
    ranks = np.array([r.rank for r in records], dtype=np.float64)
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for m in ms:
        out[f"hits@{m}"] = float(np.mean(ranks <= m))
    return out


def compute_auc_pr(scores, labels) -> float:
    """Area under the precision-recall curve, step interpolation.

    Thresholds sweep the distinct scores in descending order; tied scores
    enter together. Each threshold contributes its precision times the
    recall gained there.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    npos = int(y.sum())
    if npos == 0:
        raise ValueError("precision-recall area needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of each tie group is where the threshold actually cuts
    last = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / npos
    return float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))


def compute_efficiency(model_records: list[EfficiencyRecord],
                       baseline_records: list[EfficiencyRecord]) -> dict[str, float]:
    """Relative time per iteration and unification hit-rates.

    ``attp_ratio`` below 1 means the model iterates faster than the
    baseline; ``utilization`` is the fraction of traversed knowledge items
    whose unification survived (reported for both sides).
    """
    if not model_records or not baseline_records:
        raise ValueError("efficiency comparison needs records on both sides")

    def utilization(records):
        traversed = sum(r.traversed for r in records)
        if traversed == 0:
            raise ValueError("utilization undefined: nothing was traversed")
        return sum(r.established for r in records) / traversed

    return {
        "attp_ratio": (float(np.mean([r.wall_ms for r in model_records]))
                       / float(np.mean([r.wall_ms for r in baseline_records]))),
        "utilization": utilization(model_records),
        "utilization_baseline": utilization(baseline_records),
    }


def evaluate_ranking(facts: list[Atom], scorer, known: frozenset
                     ) -> list[RankRecord]:
    return [rank_filtered(f, scorer, known) for f in facts]


def pooled_region_auc_pr(queries: list[tuple[int, int]], region_ids: list[int],
                         scorer, truth: frozenset) -> float:
    """AUC-PR for region-membership queries pooled over all query subjects.

    Each (relation, subject) query is scored against every candidate region;
    labels come from the ground-truth triple set.
    """
    scores: list[float] = []
    labels: list[int] = []
    for rel, subj in queries:
        tails = scorer.score_tails(rel, subj)
        for region in region_ids:
            scores.append(float(tails[region]))
            labels.append(1 if (rel, subj, region) in truth else 0)
    return compute_auc_pr(scores, labels)
