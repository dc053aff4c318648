"""Link prediction ranking and triple classification."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset, FilterIndex, Triple
from .model import ModelParams, RelationGeometry, score_candidates, score_triples

logger = logging.getLogger(__name__)

DEFAULT_HITS = (1, 3, 5, 10)


def rank_entity(geometry: RelationGeometry, params: ModelParams, triple: Triple, side: str,
                dataset: Dataset | FilterIndex, setting: str = "filtered") -> int:
    """Rank of the gold entity among all replacements on ``side``.

    Ties are pessimistic: every other candidate scoring equal to the gold
    entity is ranked ahead of it.  In the filtered setting, candidates that
    form a known triple (other than the gold one) are skipped.
    """
    if side not in ("head", "tail"):
        raise ValueError(f"side must be 'head' or 'tail', got {side!r}")
    if setting not in ("raw", "filtered"):
        raise ValueError(f"setting must be 'raw' or 'filtered', got {setting!r}")
    h, rel, t = triple
    scores = score_candidates(geometry, params, h, rel, t, side)
    gold_ent = h if side == "head" else t
    gold = scores[gold_ent]
    keep = np.ones(len(scores), dtype=bool)
    keep[gold_ent] = False
    if setting == "filtered":
        index = dataset.filter_index() if isinstance(dataset, Dataset) else dataset
        keep[index.heads(rel, t) if side == "head" else index.tails(h, rel)] = False
        keep[gold_ent] = False
    return 1 + int(np.count_nonzero(scores[keep] <= gold))


def _both_ranks(geometry, params, triple, index):
    """Raw and filtered ranks for one side pair, scoring candidates once per side."""
    h, rel, t = triple
    out = []
    for side in ("head", "tail"):
        scores = score_candidates(geometry, params, h, rel, t, side)
        gold_ent = h if side == "head" else t
        gold = scores[gold_ent]
        better = scores <= gold
        better[gold_ent] = False
        raw = 1 + int(np.count_nonzero(better))
        known = index.heads(rel, t) if side == "head" else index.tails(h, rel)
        known = [e for e in known if e != gold_ent]
        filtered = raw - int(np.count_nonzero(better[known]))
        out.append((raw, filtered))
    return out


@dataclass
class RankMetrics:
    mrr: float
    med: float
    hits: dict
    ranks: list = field(repr=False, default_factory=list)

    @classmethod
    def from_ranks(cls, ranks: Sequence[int], hits=DEFAULT_HITS) -> "RankMetrics":
        if not ranks:
            raise ValueError("no ranks to aggregate")
        arr = np.asarray(ranks)
        mrr = math.fsum(1.0 / r for r in ranks) / len(ranks)
        return cls(
            mrr=mrr,
            med=float(np.median(arr)),
            hits={n: 100.0 * np.count_nonzero(arr <= n) / len(arr) for n in sorted(hits)},
            ranks=list(ranks),
        )

    def to_dict(self) -> dict:
        return {"mrr": self.mrr, "med": self.med, "hits": {str(k): v for k, v in self.hits.items()}}


@dataclass
class EvalReport:
    raw: RankMetrics
    filtered: RankMetrics
    n_triples: int

    def to_dict(self) -> dict:
        return {"n_triples": self.n_triples, "raw": self.raw.to_dict(), "filtered": self.filtered.to_dict()}

    def format_table(self, shape: str = "fb122") -> str:
        """Plain-text table: fb122 = MRR, MED, Hits@{3,5,10}; nell = MRR and Hits@{1,3,10}, no MED."""
        if shape == "fb122":
            ns = (3, 5, 10)
            head = ["setting", "MRR", "MED"] + [f"Hits@{n}" for n in ns]
            rows = [[name, f"{m.mrr:.3f}", f"{m.med:.1f}"] + [f"{m.hits.get(n, float('nan')):.1f}" for n in ns]
                    for name, m in (("raw", self.raw), ("filtered", self.filtered))]
        elif shape == "nell":
            ns = (1, 3, 10)
            head = ["MRR filtered", "MRR raw"] + [f"Hits@{n}" for n in ns]
            rows = [[f"{self.filtered.mrr:.3f}", f"{self.raw.mrr:.3f}"]
                    + [f"{self.filtered.hits.get(n, float('nan')):.1f}" for n in ns]]
        else:
            raise ValueError(f"unknown table shape {shape!r}")
        return _table(head, rows)


def _table(head: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(head, *rows)]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(r, widths)) for r in [head] + rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def link_prediction(geometry: RelationGeometry, params: ModelParams, dataset: Dataset,
                    triples: Iterable[Triple] | None = None, hits=DEFAULT_HITS) -> EvalReport:
    """Head and tail ranks over ``triples`` (default: the test split), raw and filtered."""
    triples = list(dataset.test if triples is None else triples)
    if not triples:
        raise ValueError("empty evaluation set")
    index = dataset.filter_index()
    raw, filt = [], []
    for triple in triples:
        for r, f in _both_ranks(geometry, params, Triple(*triple), index):
            raw.append(r)
            filt.append(f)
    return EvalReport(RankMetrics.from_ranks(raw, hits), RankMetrics.from_ranks(filt, hits), len(triples))


def filtered_median_rank(geometry, params, dataset: Dataset, triples) -> float:
    return link_prediction(geometry, params, dataset, triples).filtered.med


# ---------------------------------------------------------------- classification


@dataclass
class ClassificationReport:
    sigma: float | dict
    precision: dict
    map: float
    map_influenced: float | None
    map_uninfluenced: float | None

    def to_dict(self, relations=None) -> dict:
        def key(r):
            return relations.name(r) if relations is not None else str(r)

        sigma = self.sigma if not isinstance(self.sigma, dict) else {key(r): s for r, s in self.sigma.items()}
        return {
            "sigma": sigma,
            "map": self.map,
            "map_influenced": self.map_influenced,
            "map_uninfluenced": self.map_uninfluenced,
            "precision": {key(r): p for r, p in sorted(self.precision.items())},
        }

    def summary(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.3f}"

        return f"MAP {self.map:.3f} ({fmt(self.map_influenced)}/ {fmt(self.map_uninfluenced)})"


def _split_labeled(labeled) -> tuple[np.ndarray, np.ndarray]:
    triples = np.array([tuple(t) for t, _ in labeled], dtype=np.int64).reshape(-1, 3)
    labels = np.array([bool(y) for _, y in labeled], dtype=bool)
    return triples, labels


def _mean(values):
    return math.fsum(values) / len(values) if values else None


def triple_classification(geometry: RelationGeometry, params: ModelParams, labeled, sigma,
                          influenced: Iterable[int] = ()) -> ClassificationReport:
    """Classify ``(triple, label)`` pairs as positive iff score < sigma.

    Per-relation precision is the fraction of that relation's instances
    classified correctly; MAP is its unweighted mean over relations.
    ``sigma`` is a float or a ``{relation: sigma}`` map.
    """
    triples, labels = _split_labeled(labeled)
    if len(triples) == 0:
        raise ValueError("no labeled triples")
    scores = score_triples(geometry, params, triples)
    if isinstance(sigma, dict):
        thresholds = np.array([sigma.get(int(r), np.inf) for r in triples[:, 1]])
    else:
        thresholds = float(sigma)
    correct = (scores < thresholds) == labels
    precision = {}
    for rel in np.unique(triples[:, 1]):
        mask = triples[:, 1] == rel
        precision[int(rel)] = float(np.count_nonzero(correct[mask]) / np.count_nonzero(mask))
    influenced = set(influenced)
    return ClassificationReport(
        sigma=sigma,
        precision=precision,
        map=_mean(list(precision.values())),
        map_influenced=_mean([p for r, p in precision.items() if r in influenced]),
        map_uninfluenced=_mean([p for r, p in precision.items() if r not in influenced]),
    )


def _sigma_candidates(scores: np.ndarray) -> np.ndarray:
    s = np.unique(scores)
    mids = (s[:-1] + s[1:]) / 2.0
    return np.concatenate([[s[0] - 1.0], mids, [s[-1] + 1.0]])


def _accuracy_curves(scores, labels, rels, candidates):
    """Per-relation accuracy at every candidate sigma, shape (n_relations, n_candidates)."""
    curves = []
    for rel in np.unique(rels):
        mask = rels == rel
        pos = np.sort(scores[mask & labels])
        neg = np.sort(scores[mask & ~labels])
        tp = np.searchsorted(pos, candidates, side="left")
        tn = len(neg) - np.searchsorted(neg, candidates, side="left")
        curves.append((tp + tn) / np.count_nonzero(mask))
    return np.array(curves)


def tune_sigma(geometry: RelationGeometry, params: ModelParams, labeled, per_relation: bool = False):
    """Threshold maximizing validation MAP, searched over score midpoints.

    Ties resolve to the smallest threshold.  With ``per_relation`` each
    relation gets its own threshold (relations absent from ``labeled`` are
    simply missing from the returned map).
    """
    triples, labels = _split_labeled(labeled)
    if len(triples) == 0:
        raise ValueError("empty validation set")
    scores = score_triples(geometry, params, triples)
    rels = triples[:, 1]
    if per_relation:
        out = {}
        for rel in np.unique(rels):
            mask = rels == rel
            cands = _sigma_candidates(scores[mask])
            acc = _accuracy_curves(scores[mask], labels[mask], rels[mask], cands)[0]
            out[int(rel)] = float(cands[int(np.argmax(acc))])
        return out
    cands = _sigma_candidates(scores)
    curve = _accuracy_curves(scores, labels, rels, cands).mean(axis=0)
    return float(cands[int(np.argmax(curve))])
