"""Versioned model files.

A model file is a JSON document.  Floats are written with 17 significant
digits, which is enough to reproduce every double exactly, so a
save/load/save cycle gives byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ImplicationHierarchy, Rule, Vocabulary, build_hierarchy, parse_rule
from .model import ModelKind, ModelParams

FORMAT = "rulespace-model"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass
class SavedModel:
    params: ModelParams
    entities: Vocabulary
    relations: Vocabulary
    rules: list[Rule]
    config: dict = field(default_factory=dict)

    def hierarchy(self) -> ImplicationHierarchy:
        return build_hierarchy(self.rules, len(self.relations), self.relations)


def _float(x: float) -> str:
    if not math.isfinite(x):
        raise ModelFileError(f"cannot store non-finite value {x!r}")
    return format(float(x), ".17g")


def _matrix(a: np.ndarray, indent: str) -> str:
    rows = [indent + "  [" + ", ".join(_float(v) for v in row) + "]" for row in np.asarray(a, dtype=float)]
    if not rows:
        return "[]"
    return "[\n" + ",\n".join(rows) + "\n" + indent + "]"


def dumps(model: SavedModel) -> str:
    p = model.params
    header = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "kind": ModelKind(p.kind).value,
        "dim": p.dim,
        "seed": int(p.seed),
        "entities": model.entities.names,
        "relations": model.relations.names,
        "rules": [r.to_text(model.relations) for r in model.rules],
        "config": model.config,
    }
    lines = ["{"]
    for key, value in header.items():
        lines.append(f"  {json.dumps(key)}: {json.dumps(value, sort_keys=True)},")
    arrays = p.arrays()
    body = [f'    "{name}": {_matrix(arr, "    ")}' for name, arr in arrays.items()]
    lines.append('  "arrays": {')
    lines.append(",\n".join(body))
    lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_model(model: SavedModel, path) -> Path:
    path = Path(path)
    path.write_text(dumps(model), encoding="utf-8")
    return path


def _array(doc: dict, name: str, shape: tuple) -> np.ndarray:
    try:
        arr = np.array(doc["arrays"][name], dtype=float)
    except KeyError:
        raise ModelFileError(f"missing array {name!r}") from None
    if arr.size == 0:
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise ModelFileError(f"array {name!r} has shape {arr.shape}, expected {shape}")
    return arr


def loads(text: str, source="<string>") -> SavedModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{source}: not a model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFileError(f"{source}: not a model file")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFileError(f"{source}: unsupported format version {doc.get('version')!r}")
    kind = ModelKind(doc["kind"])
    d = int(doc["dim"])
    entities = Vocabulary(doc["entities"])
    relations = Vocabulary(doc["relations"])
    rules = [parse_rule(line, relations, source, i + 1) for i, line in enumerate(doc["rules"])]
    n_e, n_r = len(entities), len(relations)
    basis = None if kind is ModelKind.TRANSE else _array(doc, "basis", (n_r, d))
    params = ModelParams(
        kind,
        _array(doc, "entity", (n_e, d)),
        _array(doc, "translation", (n_r, d)),
        basis,
        seed=int(doc["seed"]),
    )
    return SavedModel(params, entities, relations, rules, dict(doc.get("config") or {}))


def load_model(path) -> SavedModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    return loads(path.read_text(encoding="utf-8"), path)
