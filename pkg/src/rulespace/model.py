"""Trainable parameters, compiled relation geometry and triple scoring.

Every relation ``i`` owns two seed vectors: a basis seed ``a_i`` and a
translation seed ``x_i``.  The orthogonal complement of the relation
subspace ``H_i`` is spanned by the basis seeds of every relation that
implies ``i`` (``i`` included), so a more general relation has a larger
complement and a smaller ``H``.  Translations are assigned from the most
general relation of each chain down to the most specific one::

    r_root = P_root x_root
    r_s    = r_g + (I - P_g) P_s x_s      for each direct implication s => g

which makes ``P_g r_s = r_g`` for every implication, the property that lets
a triple trained on ``s`` also train its generalization ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import ImplicationHierarchy, build_hierarchy
from .linalg import ComplementBasis, LinearDependenceError, gram_schmidt

MAX_RESEED = 100


class ModelKind(str, Enum):
    ISO = "iso"
    TRANSE = "transe"
    TRANSH = "transh"


class SizingError(ValueError):
    pass


class ReseedRequired(ValueError):
    """Accumulated basis seeds became linearly dependent; ``relation``'s seed must be redrawn."""

    def __init__(self, relation: int, residual: float):
        super().__init__(f"basis seed of relation {relation} is linearly dependent on its implicants' seeds "
                         f"(residual {residual:.3e}); re-randomize it")
        self.relation = relation


@dataclass(eq=False)
class ModelParams:
    kind: ModelKind
    entity_vecs: np.ndarray
    translation_seeds: np.ndarray
    basis_seeds: np.ndarray | None
    seed: int = 0
    version: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.entity_vecs.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_vecs.shape[0]

    @property
    def n_relations(self) -> int:
        return self.translation_seeds.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"entity": self.entity_vecs, "translation": self.translation_seeds}
        if self.basis_seeds is not None:
            out["basis"] = self.basis_seeds
        return out

    def parameter_count(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def touch(self) -> None:
        """Mark parameters as modified so cached geometry is recompiled."""
        self.version += 1
        self._cache.clear()

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.kind,
            self.entity_vecs.copy(),
            self.translation_seeds.copy(),
            None if self.basis_seeds is None else self.basis_seeds.copy(),
            self.seed,
            self.version,
        )

    def same_values(self, other: "ModelParams") -> bool:
        mine, theirs = self.arrays(), other.arrays()
        return mine.keys() == theirs.keys() and all(np.array_equal(mine[k], theirs[k]) for k in mine)


@dataclass(frozen=True, eq=False)
class RelationGeometry:
    """Per-relation complement bases and translations derived from the seeds.

    ``bases[i]`` is None for TransE (identity projection).  ``seed_order[i]``
    lists the relations whose basis seeds span ``bases[i]``, in the order
    they were orthonormalized; ``lower[i]`` is the triangular factor with
    ``A_i = lower[i] @ Q_i``.
    """

    kind: ModelKind
    hierarchy: ImplicationHierarchy
    bases: tuple
    translations: np.ndarray
    seed_order: tuple
    lower: tuple
    version: int = -1

    def project(self, rel: int, x: np.ndarray) -> np.ndarray:
        basis = self.bases[rel]
        if basis is None:
            return np.array(x, dtype=float)
        q = basis.vectors
        return x - (x @ q.T) @ q

    def complement(self, rel: int, x: np.ndarray) -> np.ndarray:
        basis = self.bases[rel]
        if basis is None:
            return np.zeros_like(x)
        q = basis.vectors
        return (x @ q.T) @ q


def empty_hierarchy(n_relations: int) -> ImplicationHierarchy:
    return build_hierarchy([], n_relations)


def required_dim(hierarchy: ImplicationHierarchy) -> int:
    return hierarchy.max_rank + 1


def _uniform(rng: np.random.Generator, shape, d: int) -> np.ndarray:
    bound = 6.0 / np.sqrt(d)
    return rng.uniform(-bound, bound, size=shape)


def init_params(hierarchy: ImplicationHierarchy, n_entities: int, d: int, seed: int = 0,
                kind: ModelKind | str = ModelKind.ISO) -> ModelParams:
    """Draw entity vectors and seeds i.i.d. uniform on [-6/sqrt(d), 6/sqrt(d)].

    Basis seeds that come out linearly dependent (measure-zero, but possible
    in tiny ``d``) are redrawn from the same generator.
    """
    kind = ModelKind(kind)
    n_rel = hierarchy.n_relations
    geometry_hierarchy = hierarchy if kind is ModelKind.ISO else empty_hierarchy(n_rel)
    need = required_dim(geometry_hierarchy) if kind is not ModelKind.TRANSE else 1
    if d < need:
        raise SizingError(f"embedding dimension {d} is too small for this hierarchy; need d >= {need}")
    rng = np.random.default_rng(seed)
    entity = _uniform(rng, (n_entities, d), d)
    basis = None if kind is ModelKind.TRANSE else _uniform(rng, (n_rel, d), d)
    translation = _uniform(rng, (n_rel, d), d)
    params = ModelParams(kind, entity, translation, basis, seed=seed)
    if basis is not None:
        for _ in range(MAX_RESEED):
            try:
                compile_geometry(params, hierarchy)
                break
            except ReseedRequired as err:
                params.basis_seeds[err.relation] = _uniform(rng, d, d)
                params.touch()
        else:
            raise SizingError("could not draw linearly independent basis seeds")
    return params


def _seed_order(hierarchy: ImplicationHierarchy) -> tuple:
    position = {r: i for i, r in enumerate(hierarchy.order)}
    out = []
    for r in range(hierarchy.n_relations):
        below = sorted((s for s in hierarchy.implicants[r] if s != r), key=position.__getitem__)
        out.append(tuple(below) + (r,))
    return tuple(out)


def compile_geometry(params: ModelParams, hierarchy: ImplicationHierarchy) -> RelationGeometry:
    """Derive complement bases and translations from the current seeds.

    TransH ignores the hierarchy (every relation is its own head); TransE
    uses identity projections and ``r_i = x_i``.
    """
    n_rel = params.n_relations
    if hierarchy.n_relations != n_rel:
        raise ValueError(f"hierarchy covers {hierarchy.n_relations} relations, parameters {n_rel}")
    if params.kind is ModelKind.TRANSE:
        order = tuple((r,) for r in range(n_rel))
        return RelationGeometry(params.kind, hierarchy, (None,) * n_rel, params.translation_seeds.copy(),
                                order, (None,) * n_rel, params.version)
    if params.kind is ModelKind.TRANSH:
        hierarchy = empty_hierarchy(n_rel)
    seeds = params.basis_seeds
    seed_order = _seed_order(hierarchy)
    bases, lowers = [], []
    for r in range(n_rel):
        a = seeds[list(seed_order[r])]
        try:
            basis = gram_schmidt(a)
        except LinearDependenceError as err:
            raise ReseedRequired(seed_order[r][err.index], err.residual) from err
        bases.append(basis)
        lowers.append(np.tril(a @ basis.vectors.T))
    geometry_bases = tuple(bases)

    translations = np.zeros_like(params.translation_seeds)
    x = params.translation_seeds
    for r in reversed(hierarchy.order):
        q = geometry_bases[r].vectors
        own = x[r] - (q.T @ (q @ x[r]))
        parent = hierarchy.parent(r)
        if parent is None:
            translations[r] = own
        else:
            qp = geometry_bases[parent].vectors
            translations[r] = translations[parent] + qp.T @ (qp @ own)
    return RelationGeometry(params.kind, hierarchy, geometry_bases, translations, seed_order,
                            tuple(lowers), params.version)


def geometry(params: ModelParams, hierarchy: ImplicationHierarchy) -> RelationGeometry:
    """Compiled geometry for the current parameter version, cached."""
    key = (params.version, id(hierarchy))
    geo = params._cache.get(key)
    if geo is None:
        geo = compile_geometry(params, hierarchy)
        params._cache.clear()
        params._cache[key] = geo
    return geo


def _check_ids(params: ModelParams, h, rel, t) -> None:
    h, rel, t = np.asarray(h), np.asarray(rel), np.asarray(t)
    if np.any((h < 0) | (h >= params.n_entities)) or np.any((t < 0) | (t >= params.n_entities)):
        raise IndexError("entity id out of range")
    if np.any((rel < 0) | (rel >= params.n_relations)):
        raise IndexError("relation id out of range")


def score(geometry: RelationGeometry, params: ModelParams, h: int, rel: int, t: int) -> float:
    """``||P_rel (e_t - e_h) - r_rel||``; lower means more plausible."""
    _check_ids(params, h, rel, t)
    u = params.entity_vecs[t] - params.entity_vecs[h]
    return float(np.linalg.norm(geometry.project(rel, u) - geometry.translations[rel]))


def score_triples(geometry: RelationGeometry, params: ModelParams, triples) -> np.ndarray:
    """Vectorized :func:`score` over an ``(n, 3)`` array of ids."""
    arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    _check_ids(params, arr[:, 0], arr[:, 1], arr[:, 2])
    out = np.empty(len(arr))
    for rel in np.unique(arr[:, 1]):
        idx = np.nonzero(arr[:, 1] == rel)[0]
        u = params.entity_vecs[arr[idx, 2]] - params.entity_vecs[arr[idx, 0]]
        out[idx] = np.linalg.norm(geometry.project(rel, u) - geometry.translations[rel], axis=1)
    return out


def score_candidates(geometry: RelationGeometry, params: ModelParams, h: int, rel: int, t: int,
                     side: str) -> np.ndarray:
    """Scores of ``(e, rel, t)`` (side='head') or ``(h, rel, e)`` (side='tail') for every entity e."""
    ent = params.entity_vecs
    u = ent[t] - ent if side == "head" else ent - ent[h]
    return np.linalg.norm(geometry.project(rel, u) - geometry.translations[rel], axis=1)


def score_transe(params: ModelParams, h: int, rel: int, t: int) -> float:
    """``||e_h + r - e_t||`` with ``r`` the relation's translation seed."""
    if params.kind is not ModelKind.TRANSE:
        raise ValueError(f"TransE score requested for a {params.kind.value} model")
    _check_ids(params, h, rel, t)
    e = params.entity_vecs
    return float(np.linalg.norm(e[h] + params.translation_seeds[rel] - e[t]))


def score_transh(params: ModelParams, h: int, rel: int, t: int) -> float:
    """TransH in its original order: project both entities, then translate.

    The hyperplane normal is the normalized basis seed and the in-plane
    translation is the projected translation seed.
    """
    if params.kind is ModelKind.TRANSE:
        raise ValueError("TransH score needs basis seeds")
    _check_ids(params, h, rel, t)
    w = params.basis_seeds[rel] / np.linalg.norm(params.basis_seeds[rel])
    e = params.entity_vecs

    def proj(v):
        return v - (w @ v) * w

    r = proj(params.translation_seeds[rel])
    return float(np.linalg.norm(proj(e[h]) + r - proj(e[t])))


def orthonormalize_seeds(params: ModelParams, hierarchy: ImplicationHierarchy) -> None:
    """Orthogonalize each basis seed against its implicants' seeds, then normalize.

    Processed most-specific first, so the span accumulated for every relation
    is unchanged: the compiled geometry is invariant, only its parametrization
    is better conditioned.
    """
    if params.basis_seeds is None:
        return
    if params.kind is ModelKind.TRANSH:
        hierarchy = empty_hierarchy(params.n_relations)
    seeds = params.basis_seeds
    order = _seed_order(hierarchy)
    for r in hierarchy.order:
        below = order[r][:-1]
        if below:
            q = gram_schmidt(seeds[list(below)]).vectors
            seeds[r] = seeds[r] - q.T @ (q @ seeds[r])
        norm = np.linalg.norm(seeds[r])
        if norm < 1e-8:
            raise ReseedRequired(r, float(norm))
        seeds[r] /= norm
    params.touch()
