"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured values
and runtime, then asserts the criterion at its stated tolerance.
"""

import time

import numpy as np
import pytest
from gradcheck import max_violation, random_instance

from rulespace.data import build_hierarchy
from rulespace.evaluation import link_prediction
from rulespace.harness import check_autogrounding, check_lemmas, check_random_forests, random_forest
from rulespace.model import ModelKind, empty_hierarchy, geometry, init_params, required_dim
from rulespace.persistence import SavedModel, dumps, loads
from rulespace.semantics import CANDIDATE, mine
from rulespace.synthetic import family_kg, subset_kg
from rulespace.training import TrainConfig, train

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(name: str, passed: bool, detail: str, start: float):
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} [{name}] {detail} ({time.perf_counter() - start:.1f} s)")
        assert passed, f"{name}: {detail}"

    return emit


def test_projection_algebra(verdict):
    start = time.perf_counter()
    report = check_lemmas((2, 16), trials=200, seed=0)
    bounds = [c for c in report.checks if not c.control]
    controls = [c for c in report.checks if c.control]
    elapsed = time.perf_counter() - start
    passed = (all(c.instances >= 200 and c.value <= 1e-8 for c in bounds)
              and all(c.value > 1e-4 for c in controls) and elapsed < 10)
    detail = (f"{len(bounds)} identities, max violation {max(c.value for c in bounds):.2e}; "
              f"controls min deviation {min(c.value for c in controls):.2e}")
    verdict("projection algebra", passed, detail, start)


def test_isomorphism(verdict):
    start = time.perf_counter()
    report = check_random_forests(50, (0.01, 0.1, 1.0), trials=1000, seed=0, max_relations=8, max_depth=4)
    elapsed = time.perf_counter() - start
    checks = {c.name: c for c in report.checks}
    passed = report.passed and checks["iso-rules-to-geometry"].value <= 1e-8 and elapsed < 60
    bands = sum(int(c.value) for n, c in checks.items() if n.startswith("band"))
    witnesses = sum(int(c.value) for n, c in checks.items() if n.startswith("strict"))
    detail = (f"50 forests, constraint violation {checks['iso-rules-to-geometry'].value:.2e}, "
              f"{bands} band violations, {witnesses} missing witnesses"
              + ("" if report.passed else "; " + "; ".join(c.line() for c in report.checks if not c.passed)))
    verdict("isomorphism", passed, detail, start)


def test_autogrounding(verdict):
    start = time.perf_counter()
    dataset, rules = family_kg(0)
    hier = build_hierarchy(rules, dataset.n_relations)
    params = init_params(hier, dataset.n_entities, 16, seed=0)
    before = check_autogrounding(params, hier, 10_000, seed=0)
    result = train(dataset, hier, TrainConfig(d=16, eta=0.01, gamma=1.0, batches_per_epoch=4, max_epochs=100),
                   params=params)
    after = check_autogrounding(result.params, hier, 10_000, seed=1)
    elapsed = time.perf_counter() - start
    passed = before.passed and after.passed and len(result.history) == 100 and elapsed < 30
    detail = (f"max excess at init {before.checks[0].value:.2e}, after 100 epochs {after.checks[0].value:.2e} "
              f"(tolerance 1e-9)")
    verdict("auto-grounding", passed, detail, start)


def test_gradients(verdict):
    start = time.perf_counter()
    worst = max(max_violation(*random_instance(seed, "iso")) for seed in range(20))
    elapsed = time.perf_counter() - start
    verdict("gradients", worst <= 1.0 and elapsed < 30,
            f"20 instances, worst error / tolerance {worst:.2e}", start)


def test_parameter_parity(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    configs = []
    dataset, rules = family_kg(0)
    configs.append((build_hierarchy(rules, dataset.n_relations), dataset.n_entities))
    configs.append((empty_hierarchy(5), 20))
    for _ in range(20):
        forest, n = random_forest(rng)
        configs.append((build_hierarchy(forest, n), int(rng.integers(1, 100))))
    bad = []
    for hier, n_e in configs:
        for d in (required_dim(hier), 16, 50):
            if d < required_dim(hier):
                continue
            iso = init_params(hier, n_e, d, kind=ModelKind.ISO).parameter_count()
            transh = init_params(hier, n_e, d, kind=ModelKind.TRANSH).parameter_count()
            expected = (n_e + 2 * hier.n_relations) * d
            if not iso == transh == expected:
                bad.append((n_e, hier.n_relations, d, iso, transh))
    verdict("parameter parity", not bad, f"{len(configs)} hierarchies x 3 dims, mismatches {bad}", start)


def test_end_to_end(verdict):
    start = time.perf_counter()
    rows, wins, good = [], 0, 0
    for seed in range(5):
        dataset, rules = family_kg(seed)
        scores = {}
        for kind, hier in (("iso", build_hierarchy(rules, dataset.n_relations)),
                           ("transe", empty_hierarchy(dataset.n_relations))):
            cfg = TrainConfig(d=16, eta=0.01, gamma=1.0, batches_per_epoch=4, max_epochs=300, grounding="NG",
                              model=kind, seed=seed)
            result = train(dataset, hier, cfg)
            scores[kind] = link_prediction(geometry(result.params, hier), result.params, dataset).filtered.hits[10]
        ok = scores["iso"] >= 80.0 and scores["iso"] > scores["transe"]
        wins += ok
        rows.append(f"seed {seed}: {scores['iso']:.1f} vs {scores['transe']:.1f}")
    elapsed = time.perf_counter() - start
    verdict("synthetic end-to-end", wins >= 4 and elapsed < 300,
            f"filtered Hits@10 iso vs TransE, {wins}/5 seeds meet the bar; " + "; ".join(rows), start)


def test_metric_plumbing(verdict):
    start = time.perf_counter()
    dataset, rules = family_kg(2)
    hier = build_hierarchy(rules, dataset.n_relations)
    params = train(dataset, hier, TrainConfig(d=8, eta=0.01, batches_per_epoch=4, max_epochs=20)).params
    snapshot = params.copy()
    report = link_prediction(geometry(params, hier), params, dataset)
    filtered_ok = all(f <= r for f, r in zip(report.filtered.ranks, report.raw.ranks))
    hits_ok = all(m.hits[1] <= m.hits[3] <= m.hits[5] <= m.hits[10] for m in (report.raw, report.filtered))
    untouched = params.same_values(snapshot)
    text = dumps(SavedModel(params, dataset.entities, dataset.relations, rules))
    round_trip = dumps(loads(text)) == text
    detail = (f"filtered<=raw {filtered_ok} over {len(report.raw.ranks)} ranks, hits monotone {hits_ok}, "
              f"read-only {untouched}, round-trip identical {round_trip}")
    verdict("metric plumbing", filtered_ok and hits_ok and untouched and round_trip, detail, start)


def test_semantics(verdict):
    start = time.perf_counter()
    # rule-connected pairs after training
    dataset, rules = family_kg(0)
    hier = build_hierarchy(rules, dataset.n_relations)
    params = train(dataset, hier, TrainConfig(d=16, eta=0.01, batches_per_epoch=4, max_epochs=50)).params
    family_pairs = mine(geometry(params, hier), params, dataset)
    rule_angle = max(p.angle for p in family_pairs if p.known)

    planted, imbs, rows = 0, [p.imb for p in family_pairs if p.imb is not None], []
    for seed in range(5):
        data, _ = subset_kg(seed)
        flat = empty_hierarchy(data.n_relations)
        cfg = TrainConfig(d=16, eta=0.05, gamma=1.0, batches_per_epoch=4, max_epochs=300, normalize_entities=True,
                          normalize_translations=True, corrupt=(0.25, 0.25, 0.5), seed=seed)
        trained = train(data, flat, cfg).params
        pairs = mine(geometry(trained, flat), trained, data)
        imbs += [p.imb for p in pairs if p.imb is not None]
        born_lives = next(p for p in pairs if (p.r1, p.r2) == (0, 1))
        hit = born_lives.verdict == CANDIDATE and born_lives.direction == (0, 1)
        planted += hit
        rows.append(f"seed {seed}: angle {born_lives.angle:.1f}, imb {born_lives.imb:.2f}, {born_lives.verdict}")
    imb_ok = all(v >= 1.0 for v in imbs)
    passed = rule_angle <= 1e-6 and imb_ok and planted >= 4
    detail = (f"rule pair angle {rule_angle:.1e} deg, imb>=1 {imb_ok}, planted subset found on {planted}/5 seeds; "
              + "; ".join(rows))
    verdict("semantics", passed, detail, start)
