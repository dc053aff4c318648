"""Margin-loss SGD with exact gradients through the relation geometry."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, ImplicationHierarchy, Triple, entailed_triples, grounded_positives
from .evaluation import filtered_median_rank
from .model import (
    ModelKind,
    ModelParams,
    RelationGeometry,
    geometry,
    init_params,
    orthonormalize_seeds,
    score_triples,
)

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 1000


class SamplingExhausted(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.01
    gamma: float = 1.0
    d: int = 50
    alpha: float = 1.0
    batches_per_epoch: int = 100
    max_epochs: int = 1000
    grounding: str = "NG"
    normalize_entities: bool = False
    normalize_translations: bool = False
    normalize_bases: bool = False
    corrupt: tuple = (0.5, 0.5, 0.0)
    seed: int = 0
    patience: int = 10
    eval_every: int = 5
    model: ModelKind = ModelKind.ISO

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind(self.model))
        object.__setattr__(self, "grounding", str(self.grounding).upper())
        object.__setattr__(self, "corrupt", tuple(float(c) for c in self.corrupt))
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.batches_per_epoch < 1:
            raise ValueError("batches_per_epoch must be at least 1")
        if self.grounding not in ("G", "NG"):
            raise ValueError("grounding must be 'G' or 'NG'")
        if len(self.corrupt) != 3 or min(self.corrupt) < 0 or sum(self.corrupt) <= 0:
            raise ValueError("corrupt must be three non-negative weights (head, tail, relation)")
        if self.patience < 0 or self.eval_every < 1:
            raise ValueError("patience must be >= 0 and eval_every >= 1")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def learning_rate(self, epoch: int) -> float:
        """Learning rate in effect at 0-based ``epoch``; decays by alpha every 10 epochs."""
        return self.eta * self.alpha ** (epoch // 10)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    lr: float
    val_med: float | None = None

    def line(self) -> str:
        med = "na" if self.val_med is None else f"{self.val_med:g}"
        return f"epoch={self.epoch} loss={self.loss:.6g} lr={self.lr:.6g} val_med={med}"


# ------------------------------------------------------------------ negatives


class NegativeSampler:
    """Corrupts triples, rejecting known (and, in G mode, rule-entailed) candidates."""

    def __init__(self, dataset: Dataset, mode: str = "NG", hierarchy: ImplicationHierarchy | None = None,
                 corrupt: Sequence[float] = (0.5, 0.5, 0.0)):
        mode = mode.upper()
        if mode not in ("G", "NG"):
            raise ValueError("mode must be 'G' or 'NG'")
        if dataset.n_entities == 0:
            raise ValueError("dataset has no entities")
        self.n_entities = dataset.n_entities
        self.n_relations = dataset.n_relations
        self.mode = mode
        if mode == "G":
            if hierarchy is None:
                raise ValueError("G mode needs the implication hierarchy")
            self.reject = frozenset(entailed_triples(dataset.known, hierarchy))
        else:
            self.reject = dataset.known
        weights = np.asarray(corrupt, dtype=float)
        if self.n_relations < 2:
            weights[2] = 0.0
        self.weights = weights / weights.sum()

    def sample(self, triple: Triple, rng: np.random.Generator) -> Triple:
        h, r, t = triple
        for _ in range(MAX_REJECTIONS):
            side = rng.choice(3, p=self.weights)
            if side == 0:
                cand = Triple(int(rng.integers(self.n_entities)), r, t)
            elif side == 1:
                cand = Triple(h, r, int(rng.integers(self.n_entities)))
            else:
                other = int(rng.integers(self.n_relations - 1))
                cand = Triple(h, other + (other >= r), t)
            if cand not in self.reject and cand != triple:
                return cand
        raise SamplingExhausted(f"no valid corruption of {tuple(triple)} after {MAX_REJECTIONS} draws")

    def sample_batch(self, triples: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.array([self.sample(Triple(*map(int, t)), rng) for t in triples], dtype=np.int64).reshape(-1, 3)


def sample_negative(triple: Triple, dataset: Dataset, mode: str, rng: np.random.Generator,
                    hierarchy: ImplicationHierarchy | None = None, corrupt=(0.5, 0.5, 0.0)) -> Triple:
    return NegativeSampler(dataset, mode, hierarchy, corrupt).sample(triple, rng)


def margin_loss(f_pos: float, f_neg: float, gamma: float) -> float:
    """``max(0, f_pos^2 + gamma - f_neg^2)``."""
    return max(0.0, f_pos * f_pos + gamma - f_neg * f_neg)


# ------------------------------------------------------------------ gradients


def batch_loss(params: ModelParams, geo: RelationGeometry, pos, neg, gamma: float) -> float:
    f_pos = score_triples(geo, params, pos)
    f_neg = score_triples(geo, params, neg)
    m = f_pos ** 2 + gamma - f_neg ** 2
    return float(np.sum(m[m > 0]))


def _basis_gradient(geo: RelationGeometry, rel: int, terms: list) -> np.ndarray:
    """Gradient w.r.t. the seed rows spanning ``geo.bases[rel]``.

    ``terms`` holds pairs ``(W, V)`` such that the loss changes by
    ``sum_n W[n] . dPi V[n]`` where ``Pi`` is the orthogonal projector onto
    the span of the seeds.  With seeds as columns of ``C`` (so ``Pi = C C^+``),
    ``dPi = (I - Pi) dC C^+ + (C^+)^T dC^T (I - Pi)``.
    """
    w = np.vstack([t[0] for t in terms])
    v = np.vstack([t[1] for t in terms])
    q = geo.bases[rel].vectors
    lt = geo.lower[rel].T  # C^+ y = lower^-T Q y
    cv = np.linalg.solve(lt, q @ v.T)
    cw = np.linalg.solve(lt, q @ w.T)
    g = cv @ w + cw @ v
    return g - (g @ q.T) @ q


def loss_and_gradients(params: ModelParams, geo: RelationGeometry, pos, neg, gamma: float):
    """Summed margin loss over paired positives/negatives and its exact gradient.

    Returns ``(loss, grads)`` where ``grads`` maps the names of
    :meth:`ModelParams.arrays` to arrays of the same shapes.
    """
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(neg, dtype=np.int64).reshape(-1, 3)
    f_pos = score_triples(geo, params, pos)
    f_neg = score_triples(geo, params, neg)
    margins = f_pos ** 2 + gamma - f_neg ** 2
    # non-finite margins stay active so the NaN reaches the gradient check
    active = (margins > 0) | ~np.isfinite(margins)
    loss = float(np.sum(margins[active]))
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    if not np.any(active):
        return loss, grads

    trip = np.concatenate([pos[active], neg[active]])
    coef = np.concatenate([np.ones(np.count_nonzero(active)), -np.ones(np.count_nonzero(active))])
    ent = params.entity_vecs
    u = ent[trip[:, 2]] - ent[trip[:, 0]]
    n_rel, d = params.translation_seeds.shape
    g_r = np.zeros((n_rel, d))
    has_bases = params.kind is not ModelKind.TRANSE
    terms: list[list] = [[] for _ in range(n_rel)]

    for rel in np.unique(trip[:, 1]):
        idx = np.nonzero(trip[:, 1] == rel)[0]
        z = geo.project(rel, u[idx]) - geo.translations[rel]
        w = -2.0 * coef[idx, None] * z  # dL/dr for each term
        np.add.at(grads["entity"], trip[idx, 2], -w)
        np.add.at(grads["entity"], trip[idx, 0], w)
        g_r[rel] += w.sum(axis=0)
        if has_bases:
            terms[rel].append((w, u[idx]))

    x = params.translation_seeds
    if not has_bases:
        grads["translation"] += g_r
        return loss, grads

    hier = geo.hierarchy
    for r in hier.order:  # specific first, so g_r[r] is complete when visited
        gr = g_r[r]
        parent = hier.parent(r)
        if parent is None:
            grads["translation"][r] += geo.project(r, gr)
            terms[r].append((-gr[None, :], x[r][None, :]))
        else:
            y = geo.project(r, x[r])
            terms[parent].append((gr[None, :], y[None, :]))
            gy = geo.complement(parent, gr)
            grads["translation"][r] += geo.project(r, gy)
            terms[r].append((-gy[None, :], x[r][None, :]))
            g_r[parent] += gr

    for r in range(n_rel):
        if terms[r]:
            grads["basis"][list(geo.seed_order[r])] += _basis_gradient(geo, r, terms[r])
    return loss, grads


# ------------------------------------------------------------------ SGD


def check_constraints(geo: RelationGeometry, tol: float = 1e-8) -> float:
    """Largest violation of the structural geometry invariants (should be ~0)."""
    worst = 0.0
    if geo.bases[0] is None:
        return worst
    hier = geo.hierarchy
    for r in range(hier.n_relations):
        worst = max(worst, float(np.linalg.norm(geo.complement(r, geo.translations[r]))))
    for s, g in hier.edges():
        qs, qg = geo.bases[s].vectors, geo.bases[g].vectors
        worst = max(worst, float(np.linalg.norm(qs - (qs @ qg.T) @ qg, ord=2)))
        worst = max(worst, float(np.linalg.norm(geo.project(g, geo.translations[s]) - geo.translations[g])))
    if worst > tol:
        raise TrainingError(f"geometry constraints violated by {worst:.3e}")
    return worst


def _normalize(params: ModelParams, hierarchy: ImplicationHierarchy, config: TrainConfig) -> None:
    if config.normalize_entities:
        params.entity_vecs /= np.linalg.norm(params.entity_vecs, axis=1, keepdims=True)
    if config.normalize_translations:
        params.translation_seeds /= np.linalg.norm(params.translation_seeds, axis=1, keepdims=True)
    if config.normalize_bases and params.basis_seeds is not None:
        orthonormalize_seeds(params, hierarchy)
    params.touch()


def sgd_epoch(params: ModelParams, hierarchy: ImplicationHierarchy, train_triples: np.ndarray,
              sampler: NegativeSampler, config: TrainConfig, rng: np.random.Generator, epoch: int,
              verify: bool = False) -> EpochStats:
    """One pass over ``train_triples`` in ``config.batches_per_epoch`` shuffled batches.

    Updates ``params`` in place.  With ``verify`` the geometry invariants are
    re-checked after every batch.
    """
    lr = config.learning_rate(epoch)
    train_triples = np.asarray(train_triples, dtype=np.int64).reshape(-1, 3)
    order = rng.permutation(len(train_triples))
    total = 0.0
    for b, idx in enumerate(np.array_split(order, min(config.batches_per_epoch, max(len(order), 1)))):
        if len(idx) == 0:
            continue
        pos = train_triples[idx]
        neg = sampler.sample_batch(pos, rng)
        geo = geometry(params, hierarchy)
        loss, grads = loss_and_gradients(params, geo, pos, neg, config.gamma)
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, batch {b}, parameter {name!r}")
        total += loss
        if loss > 0:
            arrays = params.arrays()
            for name, g in grads.items():
                arrays[name] -= lr * g
            _normalize(params, hierarchy, config)
        elif config.normalize_entities or config.normalize_translations or config.normalize_bases:
            _normalize(params, hierarchy, config)
        if verify:
            check_constraints(geometry(params, hierarchy))
    mean = total / len(train_triples) if len(train_triples) else 0.0
    if not math.isfinite(mean):
        raise TrainingError(f"non-finite loss at epoch {epoch}")
    return EpochStats(epoch=epoch, loss=mean, lr=lr)


@dataclass
class TrainResult:
    params: ModelParams
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_med: float | None = None


def training_triples(dataset: Dataset, hierarchy: ImplicationHierarchy, mode: str) -> list[Triple]:
    """Training split, plus inverse-rule consequences in G mode."""
    triples = list(dataset.train)
    if mode.upper() == "G":
        triples += grounded_positives(dataset.train, hierarchy)
    return triples


def train(dataset: Dataset, hierarchy: ImplicationHierarchy, config: TrainConfig,
          progress: Callable[[EpochStats], None] | None = None, verify: bool = False,
          params: ModelParams | None = None) -> TrainResult:
    """Run SGD with early stopping on filtered validation median rank.

    Validation runs every ``config.eval_every`` epochs when the dataset has a
    validation split; training stops once ``config.patience`` + 1
    consecutive evaluations fail to improve the best median rank, and the
    best snapshot is returned.  Without a validation split the final
    parameters are returned.
    """
    if params is None:
        params = init_params(hierarchy, dataset.n_entities, config.d, config.seed, config.model)
    rng = np.random.default_rng(config.seed)
    triples = np.array(training_triples(dataset, hierarchy, config.grounding), dtype=np.int64).reshape(-1, 3)
    sampler = NegativeSampler(dataset, config.grounding, hierarchy, config.corrupt)
    result = TrainResult(params=params)
    best_med = math.inf
    best = None
    stale = 0
    for epoch in range(config.max_epochs):
        stats = sgd_epoch(params, hierarchy, triples, sampler, config, rng, epoch, verify=verify)
        if dataset.valid and (epoch + 1) % config.eval_every == 0:
            stats.val_med = filtered_median_rank(geometry(params, hierarchy), params, dataset, dataset.valid)
            if stats.val_med < best_med:
                best_med, best, stale = stats.val_med, params.copy(), 0
                result.best_epoch, result.best_val_med = epoch, stats.val_med
            else:
                stale += 1
        result.history.append(stats)
        logger.info(stats.line())
        if progress is not None:
            progress(stats)
        if best is not None and stale > config.patience:
            break
    if best is not None:
        result.params = best
    return result

