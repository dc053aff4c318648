import math

import numpy as np
import pytest
from gradcheck import max_violation, random_instance

from rulespace.data import Dataset, Rule, RuleKind, Triple, Vocabulary, build_hierarchy
from rulespace.evaluation import filtered_median_rank
from rulespace.model import compile_geometry, empty_hierarchy, geometry, init_params, score_triples
from rulespace.synthetic import family_kg
from rulespace.training import (
    EpochStats,
    NegativeSampler,
    SamplingExhausted,
    TrainConfig,
    TrainingError,
    check_constraints,
    loss_and_gradients,
    margin_loss,
    sample_negative,
    sgd_epoch,
    train,
    training_triples,
)


def tiny_family():
    ents = Vocabulary(["tom", "harry", "ann"])
    rels = Vocabulary(["is_father_of", "is_parent_of"])
    ds = Dataset(ents, rels, [Triple(0, 0, 1)])
    return ds, build_hierarchy([Rule(RuleKind.IMPLICATION, (0,), 1)], 2, rels)


class TestMarginLoss:
    @pytest.mark.parametrize("f_pos, f_neg, gamma, expected", [
        (0.5, 2.0, 1.0, 0.0),
        (1.0, 1.0, 1.0, 1.0),
        (0.0, math.sqrt(2.0), 2.0, 0.0),
        (2.0, 0.0, 0.5, 4.5),
    ])
    def test_examples(self, f_pos, f_neg, gamma, expected):
        assert margin_loss(f_pos, f_neg, gamma) == pytest.approx(expected, abs=1e-15)

    def test_scores_enter_squared(self):
        # unsquared scores would give max(0, 3 + 1 - 2) = 2
        assert margin_loss(3.0, 2.0, 1.0) == pytest.approx(6.0)


class TestNegativeSampler:
    def test_tail_corruption(self, rng):
        ds, _ = tiny_family()
        for _ in range(50):
            neg = sample_negative(Triple(0, 0, 1), ds, "NG", rng, corrupt=(0, 1, 0))
            assert neg.head == 0 and neg.rel == 0 and neg.tail != 1
            assert neg not in ds.known

    def test_grounded_mode_rejects_entailed(self, rng):
        ds, hier = tiny_family()
        sampler = NegativeSampler(ds, "G", hier, corrupt=(0, 0, 1))
        # the only relation corruption of (tom, father, harry) is (tom, parent, harry), which is entailed
        with pytest.raises(SamplingExhausted):
            sampler.sample(Triple(0, 0, 1), rng)

    def test_plain_mode_accepts_entailed(self, rng):
        ds, hier = tiny_family()
        sampler = NegativeSampler(ds, "NG", hier, corrupt=(0, 0, 1))
        assert sampler.sample(Triple(0, 0, 1), rng) == Triple(0, 1, 1)

    def test_exhausted_on_complete_graph(self, rng):
        ents, rels = Vocabulary(["a", "b"]), Vocabulary(["r"])
        full = [Triple(h, 0, t) for h in range(2) for t in range(2)]
        with pytest.raises(SamplingExhausted):
            NegativeSampler(Dataset(ents, rels, full)).sample(full[0], rng)

    def test_head_tail_split(self, family, rng):
        dataset, _, _ = family
        sampler = NegativeSampler(dataset)
        pos = np.array(dataset.train[:1] * 2000)
        neg = sampler.sample_batch(pos, rng)
        heads = np.mean(neg[:, 0] != pos[:, 0])
        assert heads == pytest.approx(0.5, abs=0.05)
        assert np.all(neg[:, 1] == pos[:, 1])

    def test_grounded_mode_needs_hierarchy(self, family):
        with pytest.raises(ValueError):
            NegativeSampler(family[0], "G")


class TestGradients:
    @pytest.mark.parametrize("kind", ["iso", "transe", "transh"])
    def test_finite_differences(self, kind):
        for seed in range(20):
            assert max_violation(*random_instance(seed, kind)) <= 1.0, seed

    def test_inactive_margins_give_zero_gradient(self, family):
        dataset, _, hier = family
        params = init_params(hier, dataset.n_entities, 8)
        pos = np.array(dataset.train[:3])
        loss, grads = loss_and_gradients(params, geometry(params, hier), pos, pos, 1e-9)
        # f_pos == f_neg, so each margin equals gamma > 0: still active
        assert loss == pytest.approx(3e-9)
        loss, grads = loss_and_gradients(params, geometry(params, hier), pos[:0], pos[:0], 1.0)
        assert loss == 0 and all(not g.any() for g in grads.values())


class TestSgdEpoch:
    def test_learning_rate_schedule(self):
        cfg = TrainConfig(eta=0.01, alpha=0.95)
        assert cfg.learning_rate(9) == pytest.approx(0.01)
        assert cfg.learning_rate(10) == pytest.approx(0.0095)
        assert cfg.learning_rate(25) == pytest.approx(0.01 * 0.95 ** 2)

    def test_satisfied_triple_leaves_parameters_unchanged(self, rng):
        ents, rels = Vocabulary(["a", "b", "c"]), Vocabulary(["r"])
        ds = Dataset(ents, rels, [Triple(0, 0, 1)])
        hier = empty_hierarchy(1)
        params = init_params(hier, 3, 4, seed=1)
        geo = compile_geometry(params, hier)
        # place b exactly at a + r, and c far away so every corruption is satisfied
        params.entity_vecs[1] = params.entity_vecs[0] + geo.translations[0]
        params.entity_vecs[2] = params.entity_vecs[0] + geo.translations[0] + 100 * np.eye(4)[0] + 100 * np.eye(4)[1]
        params.touch()
        geo = compile_geometry(params, hier)
        assert score_triples(geo, params, [[0, 0, 2], [2, 0, 1]]).min() > 10
        before = params.copy()
        sampler = NegativeSampler(ds)
        stats = sgd_epoch(params, hier, np.array(ds.train), sampler, TrainConfig(d=4, gamma=1.0), rng, 0)
        assert stats.loss == 0.0
        assert params.same_values(before)

    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_non_finite_gradient_reports_location(self, family, rng):
        dataset, _, hier = family
        params = init_params(hier, dataset.n_entities, 8)
        params.entity_vecs[dataset.train[0].head] = np.inf
        params.touch()
        cfg = TrainConfig(d=8, batches_per_epoch=1)
        with pytest.raises(TrainingError, match="epoch 3, batch 0"):
            sgd_epoch(params, hier, np.array(dataset.train), NegativeSampler(dataset), cfg, rng, 3)

    @pytest.mark.parametrize("normalize", [{}, {"normalize_entities": True, "normalize_translations": True,
                                               "normalize_bases": True}])
    def test_constraints_hold_after_every_batch(self, family, normalize):
        dataset, _, hier = family
        cfg = TrainConfig(d=8, eta=0.05, batches_per_epoch=5, max_epochs=5, **normalize)
        result = train(dataset, hier, cfg, verify=True)
        assert check_constraints(geometry(result.params, hier)) <= 1e-8
        if normalize.get("normalize_entities"):
            np.testing.assert_allclose(np.linalg.norm(result.params.entity_vecs, axis=1), 1.0)


class TestTrain:
    def test_deterministic(self, family):
        dataset, _, hier = family
        cfg = TrainConfig(d=8, eta=0.05, batches_per_epoch=4, max_epochs=6, seed=7)
        a, b = train(dataset, hier, cfg), train(dataset, hier, cfg)
        assert a.params.same_values(b.params)
        assert [s.loss for s in a.history] == [s.loss for s in b.history]

    def test_autogrounding_after_every_epoch(self, family):
        dataset, _, hier = family
        rng = np.random.default_rng(0)
        checked = []

        def progress(stats):
            geo = geometry(params, hier)
            pairs = rng.integers(dataset.n_entities, size=(100, 2))
            for s, g in [(0, 2), (1, 2), (2, 3), (0, 3)]:
                spec = score_triples(geo, params, np.column_stack([pairs[:, 0], np.full(100, s), pairs[:, 1]]))
                gen = score_triples(geo, params, np.column_stack([pairs[:, 0], np.full(100, g), pairs[:, 1]]))
                assert np.all(gen <= spec + 1e-9)
            checked.append(stats.epoch)

        params = init_params(hier, dataset.n_entities, 8, seed=0)
        train(dataset, hier, TrainConfig(d=8, eta=0.05, batches_per_epoch=4, max_epochs=10), progress, params=params)
        assert checked == list(range(10))

    def test_patience_zero_stops_at_first_non_improving_evaluation(self):
        dataset, rules = family_kg(0, n_valid=6)
        hier = build_hierarchy(rules, dataset.n_relations)
        cfg = TrainConfig(d=8, eta=0.05, batches_per_epoch=4, max_epochs=400, patience=0, eval_every=1)
        result = train(dataset, hier, cfg)
        meds = [s.val_med for s in result.history]
        # every evaluation but the last improved on the best so far
        assert all(m < min(meds[:i], default=math.inf) for i, m in enumerate(meds[:-1]))
        assert len(meds) == 400 or meds[-1] >= min(meds[:-1])
        assert result.best_val_med == min(meds)

    def test_best_snapshot_returned(self):
        dataset, rules = family_kg(1, n_valid=6)
        hier = build_hierarchy(rules, dataset.n_relations)
        cfg = TrainConfig(d=8, eta=0.05, batches_per_epoch=4, max_epochs=30, patience=100)
        result = train(dataset, hier, cfg)
        assert filtered_median_rank(geometry(result.params, hier), result.params, dataset,
                                    dataset.valid) == result.best_val_med
        assert result.best_epoch % cfg.eval_every == cfg.eval_every - 1

    @pytest.mark.parametrize("seed", range(5))
    def test_loss_decreases(self, family, seed):
        dataset, _, hier = family
        cfg = TrainConfig(d=8, eta=0.02, batches_per_epoch=4, max_epochs=100, seed=seed)
        losses = [s.loss for s in train(dataset, hier, cfg).history]
        tenth = len(losses) // 10
        assert np.median(losses[-tenth:]) < np.median(losses[:tenth])

    def test_grounded_mode_adds_inverse_consequences(self):
        ents = Vocabulary(["acme", "sue"])
        rels = Vocabulary(["hired", "works_for"])
        ds = Dataset(ents, rels, [Triple(0, 0, 1)])
        hier = build_hierarchy([Rule(RuleKind.INVERSE, (0,), 1)], 2, rels)
        assert training_triples(ds, hier, "NG") == [Triple(0, 0, 1)]
        assert training_triples(ds, hier, "G") == [Triple(0, 0, 1), Triple(1, 1, 0)]


class TestConfig:
    @pytest.mark.parametrize("bad", [{"eta": 0}, {"gamma": -1}, {"alpha": 0}, {"alpha": 1.5},
                                     {"batches_per_epoch": 0}, {"grounding": "X"}, {"corrupt": (0, 0, 0)},
                                     {"patience": -1}])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_with_and_normalized_fields(self):
        cfg = TrainConfig(grounding="g", corrupt=[1, 1, 0])
        assert cfg.grounding == "G" and cfg.corrupt == (1.0, 1.0, 0.0)
        assert cfg.with_(eta=0.1).eta == 0.1 and cfg.eta == 0.01
        assert "patience" in TrainConfig.field_names()

    def test_epoch_line(self):
        assert EpochStats(3, 0.5, 0.01).line() == "epoch=3 loss=0.5 lr=0.01 val_med=na"
        assert EpochStats(4, 0.25, 0.01, 2.0).line() == "epoch=4 loss=0.25 lr=0.01 val_med=2"
