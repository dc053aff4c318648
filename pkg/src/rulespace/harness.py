"""Randomized verification of the projection algebra and the rule/geometry correspondence.

Every check is deterministic for a fixed seed.  A failing check records the
seed and the first offending instance so it can be replayed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import ImplicationHierarchy, Rule, RuleKind, build_hierarchy
from .linalg import ComplementBasis, dense_oracle, gram_schmidt, inclusion_gap, project, residual
from .model import ModelParams, RelationGeometry, compile_geometry, init_params, required_dim, score_triples

TOL = 1e-8
CONTROL_MARGIN = 1e-4
NORM_TOL = 1e-12
MEMBERSHIP_TOL = 1e-9
GROUNDING_TOL = 1e-9
BALL_RADIUS = 10.0


@dataclass
class CheckResult:
    """Outcome of one named check.

    For ordinary checks ``value`` is the largest violation seen and the
    check passes when it is at most ``threshold``.  For negative controls
    (``control=True``) ``value`` is the smallest deviation seen and the
    check passes when it exceeds ``threshold``.
    """

    name: str
    instances: int
    value: float
    threshold: float
    passed: bool
    seed: int
    control: bool = False
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        stat = "min deviation" if self.control else "max violation"
        out = f"{status} {self.name}: {self.instances} instances, {stat} {self.value:.3e} (threshold {self.threshold:g})"
        if not self.passed:
            out += f" [seed {self.seed}] {self.detail}"
        return out


def _bound(name, values, threshold, seed, describe) -> CheckResult:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return CheckResult(name, 0, 0.0, threshold, True, seed)
    worst = int(np.argmax(values))
    passed = bool(values[worst] <= threshold)
    return CheckResult(name, int(values.size), float(values[worst]), threshold, passed, seed,
                       detail="" if passed else describe(worst))


def _control(name, values, threshold, seed, describe) -> CheckResult:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return CheckResult(name, 0, float("inf"), threshold, True, seed, control=True)
    worst = int(np.argmin(values))
    passed = bool(values[worst] > threshold)
    return CheckResult(name, int(values.size), float(values[worst]), threshold, passed, seed, control=True,
                       detail="" if passed else describe(worst))


@dataclass
class HarnessReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, check: CheckResult) -> None:
        self.checks.append(check)

    def extend(self, other: "HarnessReport") -> None:
        self.checks.extend(other.checks)

    def merged(self) -> "HarnessReport":
        """Combine checks sharing a name: instances add up, the worst value wins."""
        out: dict[str, CheckResult] = {}
        for c in self.checks:
            prev = out.get(c.name)
            if prev is None:
                out[c.name] = dataclasses.replace(c)
                continue
            worse = c.value < prev.value if c.control else c.value > prev.value
            keep = c if (not c.passed and prev.passed) or (c.passed == prev.passed and worse) else prev
            out[c.name] = dataclasses.replace(keep, instances=prev.instances + c.instances,
                                              passed=prev.passed and c.passed)
        return HarnessReport(list(out.values()))

    def text(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append(f"{'PASS' if self.passed else 'FAIL'}: {sum(c.passed for c in self.checks)}"
                     f"/{len(self.checks)} checks passed")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [dataclasses.asdict(c) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def _random_basis(rng, k: int, d: int) -> ComplementBasis:
    while True:
        try:
            return gram_schmidt(rng.standard_normal((k, d)))
        except ValueError:
            continue


def _fro(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, "fro"))


def _extended_basis(rng, basis: ComplementBasis, extra: int) -> ComplementBasis:
    while True:
        try:
            return gram_schmidt(np.vstack([basis.vectors, rng.standard_normal((extra, basis.dim))]))
        except ValueError:
            continue


# ---------------------------------------------------------------- projection lemmas


def check_lemmas(d_range: tuple[int, int] = (2, 16), trials: int = 200, seed: int = 0) -> HarnessReport:
    """Projection identities on random subspaces with ``d`` drawn from ``d_range`` (inclusive).

    Nested pairs are built by extending a complement basis with extra
    vectors; the negative controls use independent random subspaces and
    must violate the nested-case identities by more than ``1e-4``.
    """
    lo, hi = d_range
    if not 2 <= lo <= hi <= 32:
        raise ValueError(f"d_range must lie within [2, 32], got {d_range}")
    names = ("invariance", "complement", "norm", "commuting", "sol_inclusion")
    viol = {n: [] for n in names}
    ctrl = {"commuting": [], "sol_inclusion": []}
    where = {n: [] for n in list(names) + ["commuting-control", "sol_inclusion-control"]}

    for trial in range(trials):
        rng = _rng(seed, 1, trial)
        d = int(rng.integers(lo, hi + 1))
        k = int(rng.integers(1, d))
        basis = _random_basis(rng, k, d)
        p = dense_oracle(basis)
        desc = f"trial {trial}, d={d}, rank {k}"

        # a vector of H is fixed by P; a vector off H is moved by exactly its complement part
        y = rng.standard_normal(d)
        x_in = project(basis, y)
        off = residual(basis, y)
        viol["invariance"].append(max(np.linalg.norm(project(basis, x_in) - x_in),
                                      abs(np.linalg.norm(project(basis, y) - y) - np.linalg.norm(off))))
        where["invariance"].append(desc)

        # I - P is a projection and P (I - P) = 0
        q = np.eye(d) - p
        viol["complement"].append(max(np.abs(q @ q - q).max(), np.abs(p @ q).max()))
        where["complement"].append(desc)

        xs = rng.standard_normal((5, d)) * rng.uniform(0.1, 10.0)
        viol["norm"].append(max(0.0, float(np.max(np.linalg.norm(project(basis, xs), axis=1)
                                                    - np.linalg.norm(xs, axis=1)))))
        where["norm"].append(desc)

        # nested: complement of H1 extends complement of H2, so H1 is inside H2
        extra = int(rng.integers(1, d - k + 1))
        inner_basis = _extended_basis(rng, basis, extra)
        p1, p2 = dense_oracle(inner_basis), p
        viol["commuting"].append(max(_fro(p1 @ p2 - p1), _fro(p1 @ p2 - p2 @ p1)))
        where["commuting"].append(desc + f", nested rank {inner_basis.rank}")

        vk = project(basis, rng.standard_normal(d))
        c = rng.standard_normal((8, k)) * BALL_RADIUS
        xs = vk + c @ basis.vectors
        lhs = project(inner_basis, xs)
        viol["sol_inclusion"].append(float(np.max(np.linalg.norm(lhs - project(inner_basis, vk), axis=1))))
        where["sol_inclusion"].append(desc)

        # negative controls: an independent subspace of the same rank is not nested
        other = _random_basis(rng, k, d)
        p_rand = dense_oracle(other)
        ctrl["commuting"].append(max(_fro(p_rand @ p2 - p_rand), _fro(p_rand @ p2 - p2 @ p_rand)))
        where["commuting-control"].append(desc)
        lhs = project(other, xs)
        ctrl["sol_inclusion"].append(float(np.max(np.linalg.norm(lhs - project(other, vk), axis=1))))
        where["sol_inclusion-control"].append(desc)

    report = HarnessReport()
    thresholds = {"norm": NORM_TOL}
    for n in names:
        report.add(_bound(f"lemma-{n}", viol[n], thresholds.get(n, TOL), seed, lambda i, n=n: where[n][i]))
    for n in ctrl:
        report.add(_control(f"lemma-{n}-control", ctrl[n], CONTROL_MARGIN, seed,
                            lambda i, n=n: where[f"{n}-control"][i]))
    return report


# ---------------------------------------------------------------- isomorphism


def random_forest(rng: np.random.Generator, max_relations: int = 8, max_depth: int = 4) -> tuple[list[Rule], int]:
    """Random implication forest as ``(rules, n_relations)``; each relation has at most one direct generalization."""
    n = int(rng.integers(2, max_relations + 1))
    depth = [0] * n
    rules = []
    for r in range(1, n):
        choices = [g for g in range(r) if depth[g] < max_depth - 1]
        if choices and rng.random() < 0.75:
            g = int(rng.choice(choices))
            depth[r] = depth[g] + 1
            rules.append(Rule(RuleKind.IMPLICATION, (r,), g))
    # relabel so relation ids do not encode the depth
    perm = rng.permutation(n)
    return [Rule(RuleKind.IMPLICATION, (int(perm[r.premise]),), int(perm[r.conclusion])) for r in rules], n


def _band_scores(basis: ComplementBasis, r: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.linalg.norm(project(basis, v) - r, axis=1)


def _sample_band(rng, basis: ComplementBasis, r: np.ndarray, eps: float, n: int) -> np.ndarray:
    """Points with ``||P v - r|| < eps``: a free part in the complement ball plus bounded noise in ``H``."""
    d, k = basis.dim, basis.rank
    c = rng.standard_normal((n, k))
    c *= (BALL_RADIUS * rng.random(n) ** (1.0 / k) / np.linalg.norm(c, axis=1))[:, None]
    v = r + c @ basis.vectors
    if eps > 0:
        noise = project(basis, rng.standard_normal((n, d)))
        norms = np.linalg.norm(noise, axis=1)
        norms[norms == 0] = 1.0
        v += noise * (eps * rng.random(n) / norms)[:, None]
    return v


def _witness(geo: RelationGeometry, i: int, j: int, eps: float) -> np.ndarray | None:
    """A vector inside relation i's band but outside relation j's band, when i does not imply j."""
    qi, qj = geo.bases[i], geo.bases[j]
    ri, rj = geo.translations[i], geo.translations[j]
    delta = project(qj, ri) - rj
    moved = project(qj, qi.vectors)
    gains = np.linalg.norm(moved, axis=1)
    best = int(np.argmax(gains))
    if gains[best] > 1e-6:
        scale = 2.0 * (eps + np.linalg.norm(delta)) / gains[best] + 1.0
        return ri + scale * qi.vectors[best]
    size = float(np.linalg.norm(delta))
    if size <= CONTROL_MARGIN:
        return None
    if size >= eps:
        return ri.copy()
    # slide along delta inside H_i, staying within eps of relation i
    return ri + (eps - size / 2) * delta / size


def check_isomorphism(hierarchy: ImplicationHierarchy, d: int, eps_list: Sequence[float] = (0.01, 0.1, 1.0),
                      trials: int = 1000, seed: int = 0, params: ModelParams | None = None,
                      label: str = "", geometry: RelationGeometry | None = None) -> HarnessReport:
    """Both directions of the rule/geometry correspondence, band inclusion, and strict witnesses.

    ``eps = 0`` checks exact solution-set inclusion with tolerance ``1e-9``.
    A precompiled ``geometry`` overrides ``params`` (used for fault injection).
    """
    if geometry is not None:
        geo = geometry
    else:
        if params is None:
            params = init_params(hierarchy, 1, d, seed=seed)
        geo = compile_geometry(params, hierarchy)
    n = hierarchy.n_relations
    tag = f"{label}d={d}"
    implied, forward, where = [], [], []
    for i in range(n):
        implied.append(float(np.linalg.norm(residual(geo.bases[i], geo.translations[i]))))
        where.append(f"{tag}: r_{i} off H_{i}")
    missing, not_implied_where = [], []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            gap = inclusion_gap(geo.bases[i], geo.bases[j])
            proj = float(np.linalg.norm(project(geo.bases[j], geo.translations[i]) - geo.translations[j]))
            if hierarchy.implies(i, j):
                forward.append(max(gap, proj))
                where.append(f"{tag}: {i}=>{j} gap {gap:.3e} projection {proj:.3e}")
            else:
                missing.append(max(gap, proj))
                not_implied_where.append(f"{tag}: {i}=/=>{j}")
    report = HarnessReport()
    report.add(_bound("iso-rules-to-geometry", implied + forward, TOL, seed, lambda k: where[k]))
    report.add(_control("iso-geometry-to-rules", missing, CONTROL_MARGIN, seed, lambda k: not_implied_where[k]))

    rng = _rng(seed, 2, d)
    for eps in eps_list:
        bad, checked, first = 0, 0, ""
        for s, g in hierarchy.edges():
            v = _sample_band(rng, geo.bases[s], geo.translations[s], eps, trials)
            inside_s = _band_scores(geo.bases[s], geo.translations[s], v)
            outside = _band_scores(geo.bases[g], geo.translations[g], v)
            if eps == 0:
                ok_s, ok_g = inside_s <= MEMBERSHIP_TOL, outside <= MEMBERSHIP_TOL
            else:
                ok_s, ok_g = inside_s < eps, outside < eps
            fails = int(np.count_nonzero(ok_s & ~ok_g)) + int(np.count_nonzero(~ok_s))
            if fails and not first:
                first = f"{tag}: edge {s}=>{g}, eps={eps}"
            bad += fails
            checked += len(v)
        report.add(CheckResult(f"band-inclusion eps={eps:g}", checked, float(bad), 0.0, bad == 0, seed,
                               detail=first))

    for eps in [e for e in eps_list if e > 0]:
        bad, count, first = 0, 0, ""
        for i in range(n):
            for j in range(n):
                if i == j or hierarchy.implies(i, j):
                    continue
                count += 1
                v = _witness(geo, i, j, eps)
                ok = v is not None
                if ok:
                    v = v[None, :]
                    ok = bool(_band_scores(geo.bases[i], geo.translations[i], v)[0] < eps
                              and _band_scores(geo.bases[j], geo.translations[j], v)[0] >= eps)
                if not ok:
                    bad += 1
                    first = first or f"{tag}: no witness for {i}=/=>{j} at eps={eps}"
        report.add(CheckResult(f"strict-witness eps={eps:g}", count, float(bad), 0.0, bad == 0, seed, detail=first))
    return report


def check_random_forests(n_forests: int = 50, eps_list: Sequence[float] = (0.01, 0.1, 1.0), trials: int = 1000,
                         seed: int = 0, max_relations: int = 8, max_depth: int = 4) -> HarnessReport:
    """:func:`check_isomorphism` over random forests, merged per check name."""
    report = HarnessReport()
    for k in range(n_forests):
        rng = _rng(seed, 3, k)
        rules, n = random_forest(rng, max_relations, max_depth)
        hierarchy = build_hierarchy(rules, n)
        d = required_dim(hierarchy) + int(rng.integers(0, 4))
        report.extend(check_isomorphism(hierarchy, d, eps_list, trials, seed=int(rng.integers(2**31)),
                                        label=f"forest {k} ({len(rules)} rules), "))
    merged = report.merged()
    for c in merged.checks:
        c.seed = seed
    return merged


# ---------------------------------------------------------------- auto-grounding


def check_autogrounding(params: ModelParams, hierarchy: ImplicationHierarchy, trials: int = 10_000, seed: int = 0,
                        geometry: RelationGeometry | None = None, name: str = "autogrounding") -> HarnessReport:
    """``score(h, g, t) <= score(h, s, t) + 1e-9`` for random entity pairs and every implication ``s => g``."""
    geo = geometry if geometry is not None else compile_geometry(params, hierarchy)
    rng = _rng(seed, 4)
    heads = rng.integers(params.n_entities, size=trials)
    tails = rng.integers(params.n_entities, size=trials)
    worst, first, checked = [], [], 0
    for s, g in hierarchy.edges():
        spec = score_triples(geo, params, np.stack([heads, np.full(trials, s), tails], axis=1))
        gen = score_triples(geo, params, np.stack([heads, np.full(trials, g), tails], axis=1))
        excess = gen - spec
        k = int(np.argmax(excess))
        worst.append(float(excess[k]))
        first.append(f"edge {s}=>{g}, h={int(heads[k])}, t={int(tails[k])}")
        checked += trials
    report = HarnessReport()
    check = _bound(name, worst, GROUNDING_TOL, seed, lambda i: first[i])
    check.instances = checked
    report.add(check)
    return report


def inject_fault(geometry: RelationGeometry, magnitude: float = 10.0, seed: int = 0) -> RelationGeometry:
    """Copy of ``geometry`` whose most general translations are pushed off their constraint."""
    hier = geometry.hierarchy
    rng = _rng(seed, 5)
    translations = geometry.translations.copy()
    targets = [g for g in range(hier.n_relations) if hier.parent(g) is None and hier.specializations[g]]
    for g in targets or range(hier.n_relations):
        push = project(geometry.bases[g], rng.standard_normal(translations.shape[1]))
        translations[g] += magnitude * push / max(np.linalg.norm(push), 1e-12)
    return dataclasses.replace(geometry, translations=translations, version=-1)


def run_all(seed: int = 0, d_values: Iterable[int] = (2, 4, 8, 16), trials: int = 200, forests: int = 50,
            samples: int = 1000, eps_list: Sequence[float] = (0.01, 0.1, 1.0), inject: bool = False) -> HarnessReport:
    """The default verification suite driven by the ``verify`` command."""
    from .synthetic import family_kg

    d_values = sorted(d_values)
    report = check_lemmas((d_values[0], d_values[-1]), trials, seed)
    report.extend(check_random_forests(forests, eps_list, samples, seed))
    dataset, rules = family_kg(seed)
    hierarchy = build_hierarchy(rules, dataset.n_relations)
    d = max(required_dim(hierarchy), d_values[-1])
    params = init_params(hierarchy, dataset.n_entities, d, seed=seed)
    geo = compile_geometry(params, hierarchy)
    if inject:
        geo = inject_fault(geo, seed=seed)
    report.extend(check_autogrounding(params, hierarchy, 10_000, seed, geometry=geo))
    return report
