"""Small generated knowledge graphs for tests, demos and the verify command."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Dataset, Rule, RuleKind, Triple, Vocabulary

FAMILY_RULES = ("is_father_of => is_parent_of", "is_mother_of => is_parent_of", "is_parent_of => is_family_of")


def family_kg(seed: int = 0, n_couples: int = 10, children_per_couple: int = 3, n_valid: int = 0):
    """Couples with children; fathers and mothers are observed, parents and family held out.

    Returns ``(dataset, rules)``.  With the defaults there are 50 entities.
    ``train`` holds ``is_father_of`` / ``is_mother_of`` triples (minus
    ``n_valid`` of them moved to ``valid``); ``test`` holds every
    ``is_parent_of`` and ``is_family_of`` triple implied by them.
    """
    rng = np.random.default_rng(seed)
    entities = Vocabulary()
    relations = Vocabulary(["is_father_of", "is_mother_of", "is_parent_of", "is_family_of"])
    father, mother, parent, family = range(4)
    observed, implied = [], []
    for c in range(n_couples):
        f = entities.add(f"father{c}")
        m = entities.add(f"mother{c}")
        for k in range(children_per_couple):
            child = entities.add(f"child{c}_{k}")
            observed += [Triple(f, father, child), Triple(m, mother, child)]
            for p in (f, m):
                implied += [Triple(p, parent, child), Triple(p, family, child)]
    perm = rng.permutation(len(observed))
    observed = [observed[i] for i in perm]
    rules = [Rule(RuleKind.IMPLICATION, (a,), b) for a, b in ((father, parent), (mother, parent), (parent, family))]
    return Dataset(entities, relations, observed[n_valid:], observed[:n_valid], implied), rules


def subset_kg(seed: int = 0, n_homes: int = 4, n_offices: int = 8, n_persons: int = 32, fraction: float = 0.5):
    """Persons with a home and a workplace; ``born_in`` pairs are a strict subset of ``lives_in`` pairs.

    Each person lives in one home city and works in one office; a random
    ``fraction`` of them were also born in their home city.  ``works_in``
    keeps persons of the same city apart.  No rules connect the relations,
    so the nesting is only present in the data.  Relation ids:
    ``born_in`` 0, ``lives_in`` 1, ``works_in`` 2.
    """
    rng = np.random.default_rng(seed)
    entities = Vocabulary()
    relations = Vocabulary(["born_in", "lives_in", "works_in"])
    homes = [entities.add(f"home{i}") for i in range(n_homes)]
    offices = [entities.add(f"office{i}") for i in range(n_offices)]
    born, lives, works = [], [], []
    for k in range(n_persons):
        person = entities.add(f"person{k}")
        home = homes[k % n_homes]
        lives.append(Triple(person, 1, home))
        works.append(Triple(person, 2, offices[int(rng.integers(n_offices))]))
        if rng.random() < fraction:
            born.append(Triple(person, 0, home))
    # keep the subset strict and non-trivial
    if len(born) < 2:
        born = [Triple(t.head, 0, t.tail) for t in lives[:2]]
    if len(born) == len(lives):
        born.pop()
    return Dataset(entities, relations, born + lives + works, [], []), []


def write_dataset(dataset: Dataset, rules, directory) -> Path:
    """Write ``train.txt``, ``valid.txt``, ``test.txt`` and ``rules.txt`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split in ("train", "valid", "test"):
        with (directory / f"{split}.txt").open("w", encoding="utf-8") as fh:
            for triple in getattr(dataset, split):
                fh.write("\t".join(dataset.named(triple)) + "\n")
    with (directory / "rules.txt").open("w", encoding="utf-8") as fh:
        for rule in rules:
            fh.write(rule.to_text(dataset.relations) + "\n")
    return directory
