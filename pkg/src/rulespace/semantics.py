"""Mining relatedness and implication candidates from trained relation spaces.

Two signals are used.  The angle between the direction subspaces of two
relation spaces (near 90 degrees means the relations are unrelated), and
the imbalance of cross projection distances: if the difference vectors of
``r1`` sit close to ``r2``'s relation space but not the other way round,
``r1`` probably implies ``r2``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset, Triple
from .evaluation import _table
from .linalg import principal_angles
from .model import ModelParams, RelationGeometry

DISJOINT = "disjoint"
CANDIDATE = "implication-candidate"
RELATED = "related"


def pair_angle(geometry: RelationGeometry, r1: int, r2: int) -> float:
    """Smallest principal angle (degrees) between the two relations' complement bases."""
    b1, b2 = geometry.bases[r1], geometry.bases[r2]
    if b1 is None or b2 is None:
        raise ValueError("angles need relation subspaces; TransE has none")
    if r1 == r2:
        return 0.0
    # order the arguments so the result is exactly symmetric
    if r1 > r2:
        b1, b2 = b2, b1
    return float(principal_angles(b1, b2)[0])


def mean_projection_distance(geometry: RelationGeometry, params: ModelParams, triples: Sequence[Triple],
                             r2: int) -> float | None:
    """Mean distance from each ``e_t - e_h`` in ``triples`` to relation ``r2``'s space.

    None when ``triples`` is empty.
    """
    if len(triples) == 0:
        return None
    arr = np.asarray([tuple(t) for t in triples], dtype=np.int64).reshape(-1, 3)
    ent = params.entity_vecs
    u = ent[arr[:, 2]] - ent[arr[:, 0]]
    dist = np.linalg.norm(geometry.project(r2, u) - geometry.translations[r2], axis=1)
    return math.fsum(dist) / len(dist)


def imbalance(d12: float | None, d21: float | None) -> float | None:
    """``(d12/d21 + d21/d12) / 2``; inf if either distance is zero, None if undefined."""
    if d12 is None or d21 is None:
        return None
    if d12 == 0 or d21 == 0:
        return 1.0 if d12 == d21 else math.inf
    return 0.5 * (d12 / d21 + d21 / d12)


@dataclass
class PairAnalysis:
    r1: int
    r2: int
    angle: float
    d12: float | None
    d21: float | None
    imb: float | None
    verdict: str
    known: bool = False
    direction: tuple | None = None

    @property
    def degenerate(self) -> bool:
        return self.imb is not None and math.isinf(self.imb)

    def to_dict(self, relations=None) -> dict:
        def name(r):
            return relations.name(r) if relations is not None else r

        return {
            "r1": name(self.r1),
            "r2": name(self.r2),
            "angle": self.angle,
            "d12": self.d12,
            "d21": self.d21,
            "imb": None if self.imb is None or math.isinf(self.imb) else self.imb,
            "imb_infinite": self.degenerate,
            "verdict": self.verdict,
            "known_rule": self.known,
            "direction": None if self.direction is None else [name(r) for r in self.direction],
        }


def _verdict(angle, d12, d21, imb, r1, r2, angle_threshold, imb_threshold):
    if angle > angle_threshold:
        return DISJOINT, None
    if imb is not None and imb > imb_threshold:
        return CANDIDATE, (r1, r2) if d12 < d21 else (r2, r1)
    return RELATED, None


def mine(geometry: RelationGeometry, params: ModelParams, dataset: Dataset, angle_threshold: float = 60.0,
         imb_threshold: float = 2.0, triples: Iterable[Triple] | None = None) -> list[PairAnalysis]:
    """Analyse every unordered relation pair, sorted by angle ascending.

    Distances use ``triples`` (default: the training split).  Pairs already
    connected by the rule closure are marked ``known`` and never proposed as
    candidates.
    """
    triples = list(dataset.train if triples is None else triples)
    by_rel: dict[int, list[Triple]] = {}
    for t in triples:
        by_rel.setdefault(t.rel, []).append(t)
    hier = geometry.hierarchy
    out = []
    for r1, r2 in itertools.combinations(range(params.n_relations), 2):
        angle = pair_angle(geometry, r1, r2)
        d12 = mean_projection_distance(geometry, params, by_rel.get(r1, []), r2)
        d21 = mean_projection_distance(geometry, params, by_rel.get(r2, []), r1)
        imb = imbalance(d12, d21)
        verdict, direction = _verdict(angle, d12, d21, imb, r1, r2, angle_threshold, imb_threshold)
        known = hier.implies(r1, r2) or hier.implies(r2, r1)
        if known and verdict == CANDIDATE:
            verdict, direction = RELATED, None
        out.append(PairAnalysis(r1, r2, angle, d12, d21, imb, verdict, known, direction))
    out.sort(key=lambda p: (p.angle, p.r1, p.r2))
    return out


def candidates(analyses: Iterable[PairAnalysis]) -> list[PairAnalysis]:
    return [p for p in analyses if not p.known and p.verdict == CANDIDATE]


def angle_summary(analyses: Sequence[PairAnalysis]) -> dict:
    angles = np.array([p.angle for p in analyses])
    if len(angles) == 0:
        return {"pairs": 0, "mean": None, "median": None, "below_50": None}
    return {
        "pairs": int(len(angles)),
        "mean": float(np.mean(angles)),
        "median": float(np.median(angles)),
        "below_50": float(np.mean(angles < 50.0)),
    }


def format_report(analyses: Sequence[PairAnalysis], relations) -> str:
    rows = []
    for p in analyses:
        if p.imb is None or p.verdict == DISJOINT:
            imb = "n/a"
        elif math.isinf(p.imb):
            imb = "inf"
        else:
            imb = f"{p.imb:.2f}"
        verdict = p.verdict
        if p.direction is not None:
            verdict += f" ({relations.name(p.direction[0])} => {relations.name(p.direction[1])})"
        if p.known:
            verdict = "known rule"
        rows.append([relations.name(p.r1), relations.name(p.r2), f"{p.angle:.1f}", imb, verdict])
    table = _table(["relation 1", "relation 2", "angle", "imb", "verdict"], rows) if rows else "(no pairs)"
    s = angle_summary(analyses)
    if s["pairs"]:
        table += f"\nangle over {s['pairs']} pairs: mean {s['mean']:.1f}, median {s['median']:.1f}; " \
                 f"{100 * s['below_50']:.1f}% below 50"
    return table
