import json

import numpy as np
import pytest

from rulespace.data import Rule, RuleKind, build_hierarchy
from rulespace.harness import (
    CheckResult,
    HarnessReport,
    check_autogrounding,
    check_isomorphism,
    check_lemmas,
    check_random_forests,
    inject_fault,
    random_forest,
    run_all,
)
from rulespace.model import compile_geometry, empty_hierarchy, init_params
from rulespace.synthetic import family_kg


def imp(a, b):
    return Rule(RuleKind.IMPLICATION, (a,), b)


def by_name(report):
    return {c.name: c for c in report.checks}


class TestLemmas:
    @pytest.fixture(scope="class")
    @staticmethod
    def report():
        return check_lemmas((2, 16), trials=200, seed=0)

    def test_all_pass(self, report):
        assert report.passed, report.text()

    @pytest.mark.parametrize("name", ["lemma-invariance", "lemma-complement", "lemma-norm", "lemma-commuting",
                                      "lemma-sol_inclusion"])
    def test_instances(self, report, name):
        assert by_name(report)[name].instances >= 200

    def test_controls_detect_non_nested(self, report):
        checks = by_name(report)
        for name in ("lemma-commuting-control", "lemma-sol_inclusion-control"):
            assert checks[name].control and checks[name].value > 1e-4

    def test_deterministic(self, report):
        assert check_lemmas((2, 16), trials=200, seed=0).to_dict() == report.to_dict()


class TestIsomorphism:
    def test_chain(self):
        hier = build_hierarchy([imp(0, 1), imp(1, 2)], 3)
        report = check_isomorphism(hier, 6, (0.1,), trials=1000, seed=1)
        assert report.passed, report.text()
        checks = by_name(report)
        assert checks["band-inclusion eps=0.1"].value == 0
        assert checks["band-inclusion eps=0.1"].instances == 3000  # three closure edges

    def test_unrelated_heads_have_witnesses(self):
        report = check_isomorphism(empty_hierarchy(3), 5, (0.01, 1.0), trials=10, seed=2)
        checks = by_name(report)
        assert checks["strict-witness eps=0.01"].instances == 6
        assert checks["strict-witness eps=1"].passed

    def test_exact_inclusion_case(self):
        hier = build_hierarchy([imp(0, 1)], 2)
        report = check_isomorphism(hier, 4, (0.0,), trials=500, seed=3)
        assert by_name(report)["band-inclusion eps=0"].passed
        assert not any(name.startswith("strict-witness") for name in by_name(report))

    def test_broken_geometry_fails(self):
        hier = build_hierarchy([imp(0, 1)], 2)
        geo = inject_fault(compile_geometry(init_params(hier, 1, 4, seed=0), hier))
        report = check_isomorphism(hier, 4, (0.1,), trials=200, seed=0, geometry=geo)
        failed = {c.name for c in report.checks if not c.passed}
        assert "iso-rules-to-geometry" in failed and "band-inclusion eps=0.1" in failed
        assert "seed 0" in report.text()

    def test_random_forests(self):
        report = check_random_forests(10, (0.01, 0.1, 1.0), trials=200, seed=5)
        assert report.passed, report.text()
        assert len({c.name for c in report.checks}) == len(report.checks)

    def test_random_forest_shape(self, rng):
        for _ in range(50):
            rules, n = random_forest(rng, 8, 4)
            hier = build_hierarchy(rules, n)
            assert 2 <= n <= 8
            assert all(len(g) <= 1 for g in hier.generalizations)


class TestAutogrounding:
    def test_fresh_init(self, family):
        ds, _, hier = family
        params = init_params(hier, ds.n_entities, 8, seed=0)
        report = check_autogrounding(params, hier, 10_000, seed=0)
        assert report.passed and report.checks[0].instances == 10_000 * len(hier.edges())

    def test_fault_injection_detected(self, family):
        ds, _, hier = family
        params = init_params(hier, ds.n_entities, 8, seed=0)
        geo = inject_fault(compile_geometry(params, hier))
        report = check_autogrounding(params, hier, 1000, seed=0, geometry=geo)
        assert not report.passed
        assert "edge" in report.checks[0].detail


class TestReport:
    def test_merge_keeps_worst_and_sums(self):
        report = HarnessReport([CheckResult("a", 3, 1e-10, 1e-8, True, 0), CheckResult("a", 2, 1e-6, 1e-8, False, 0,
                                                                                         detail="x"),
                                CheckResult("c", 1, 0.5, 1e-4, True, 0, control=True),
                                CheckResult("c", 1, 0.2, 1e-4, True, 0, control=True)])
        merged = by_name(report.merged())
        assert merged["a"].instances == 5 and not merged["a"].passed and merged["a"].detail == "x"
        assert merged["c"].value == 0.2

    def test_text_and_json(self):
        report = HarnessReport([CheckResult("a", 3, 0.0, 1e-8, True, 7), CheckResult("b", 1, 2.0, 1.0, False, 7,
                                                                                      detail="here")])
        text = report.text()
        assert text.splitlines()[0].startswith("PASS a: 3 instances")
        assert "FAIL b" in text and "[seed 7] here" in text
        assert text.splitlines()[-1] == "FAIL: 1/2 checks passed"
        doc = json.loads(report.to_json())
        assert doc["passed"] is False and doc["checks"][1]["seed"] == 7


class TestRunAll:
    def test_default_suite_passes(self):
        report = run_all(seed=0, forests=10, samples=200, trials=50)
        assert report.passed, report.text()

    def test_injected_fault_fails(self):
        report = run_all(seed=0, forests=2, samples=50, trials=20, inject=True)
        assert not report.passed
        assert [c.name for c in report.checks if not c.passed] == ["autogrounding"]

    def test_family_dimension(self):
        ds, rules = family_kg(0)
        hier = build_hierarchy(rules, ds.n_relations)
        assert np.all([c.passed for c in check_autogrounding(init_params(hier, ds.n_entities, 5), hier, 100).checks])
