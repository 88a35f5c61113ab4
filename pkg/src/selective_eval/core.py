"""Shared domain types: labels, preference instances, datasets, majority vote."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import DomainError, SchemaError


class Label(Enum):
    """Pairwise preference label. Declaration order is the global tie-break order."""

    FIRST = "A"
    SECOND = "B"
    TIE = "tie"

    @property
    def order(self) -> int:
        return _LABEL_ORDER[self]

    @classmethod
    def parse(cls, token: str) -> "Label":
        try:
            return _TOKENS[token.strip().lower()]
        except (KeyError, AttributeError):
            raise DomainError(f"unknown label {token!r}") from None

    def other(self) -> "Label":
        if self is Label.TIE:
            raise DomainError("TIE has no opposite preference")
        return Label.SECOND if self is Label.FIRST else Label.FIRST


_LABEL_ORDER = {lab: i for i, lab in enumerate(Label)}
_TOKENS = {"a": Label.FIRST, "b": Label.SECOND, "tie": Label.TIE}

BINARY = frozenset({Label.FIRST, Label.SECOND})
WITH_TIE = frozenset(Label)


def ordered_labels(space: Iterable[Label]) -> tuple[Label, ...]:
    return tuple(sorted(space, key=lambda lab: lab.order))


@dataclass(frozen=True)
class PreferenceInstance:
    id: str
    query: str
    response_a: str
    response_b: str
    annotations: tuple[Label, ...] = ()
    meta: Mapping[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "query": self.query,
            "response_a": self.response_a,
            "response_b": self.response_b,
            "annotations": [lab.value for lab in self.annotations],
            "meta": dict(self.meta),
        }


@dataclass(frozen=True)
class MajorityLabel:
    """Outcome of a human vote. ``label is None`` means the top counts were tied."""

    label: Optional[Label]
    count: int
    total: int

    @property
    def has_winner(self) -> bool:
        return self.label is not None


def majority_label(annotations: Sequence[Label], label_space: Optional[Iterable[Label]] = None) -> MajorityLabel:
    """Strict plurality over the votes; equal top counts give a no-winner result.

    TIE votes form their own category. They may only win when TIE belongs to
    ``label_space`` (a TIE vote outside the declared space is an error).
    """
    if not annotations:
        raise DomainError("majority_label needs at least one annotation")
    space = frozenset(label_space) if label_space is not None else None
    counts = Counter(annotations)
    if space is not None:
        stray = set(counts) - space
        if stray:
            raise DomainError(f"annotations outside the label space: {sorted(s.value for s in stray)}")
    total = len(annotations)
    ranked = counts.most_common()
    top_label, top = ranked[0]
    if len(ranked) > 1 and ranked[1][1] == top:
        return MajorityLabel(None, top, total)
    return MajorityLabel(top_label, top, total)


def agreement_density(m: MajorityLabel) -> float:
    if not m.has_winner:
        raise DomainError("agreement density is undefined without a majority winner")
    return m.count / m.total


@dataclass(frozen=True)
class Dataset:
    label_space: frozenset
    instances: tuple[PreferenceInstance, ...]

    def __post_init__(self):
        seen = set()
        for inst in self.instances:
            if inst.id in seen:
                raise DomainError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)
            stray = set(inst.annotations) - self.label_space
            if stray:
                raise DomainError(f"instance {inst.id!r} has labels outside the label space")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(self.label_space, tuple(self.instances[i] for i in indices))

    def with_instances(self, instances: Iterable[PreferenceInstance]) -> "Dataset":
        return Dataset(self.label_space, tuple(instances))

    def majorities(self) -> dict[str, Optional[MajorityLabel]]:
        """Majority vote per instance id; ``None`` for instances without annotations."""
        return {
            inst.id: majority_label(inst.annotations, self.label_space) if inst.annotations else None
            for inst in self.instances
        }


_REQUIRED = ("id", "query", "response_a", "response_b")


def parse_instance(obj: object, *, where: str, label_space: frozenset) -> PreferenceInstance:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected a JSON object")
    for key in _REQUIRED:
        if not isinstance(obj.get(key), str):
            raise SchemaError(f"{where}: field {key!r} must be a string")
    raw = obj.get("annotations", [])
    if not isinstance(raw, list):
        raise SchemaError(f"{where}: field 'annotations' must be a list")
    try:
        annotations = tuple(Label.parse(a) for a in raw)
    except DomainError as exc:
        raise SchemaError(f"{where}: {exc}") from None
    if set(annotations) - label_space:
        raise SchemaError(f"{where}: 'tie' annotation but the label space excludes ties")
    meta = obj.get("meta", {})
    if not isinstance(meta, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in meta.items()):
        raise SchemaError(f"{where}: field 'meta' must map strings to strings")
    return PreferenceInstance(obj["id"], obj["query"], obj["response_a"], obj["response_b"], annotations, dict(meta))


def load_dataset(path, *, allow_tie: bool = False) -> Dataset:
    """Read a dataset JSONL file. Schema problems are reported with line numbers."""
    label_space = WITH_TIE if allow_tie else BINARY
    instances = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{where}: invalid JSON ({exc.msg})") from None
            inst = parse_instance(obj, where=where, label_space=label_space)
            if inst.id in seen:
                raise SchemaError(f"{where}: duplicate id {inst.id!r} (first seen on line {seen[inst.id]})")
            seen[inst.id] = lineno
            instances.append(inst)
    return Dataset(label_space, tuple(instances))


def dataset_lines(dataset: Dataset) -> list[str]:
    return [json.dumps(inst.to_json(), ensure_ascii=False) for inst in dataset]


def write_dataset(path, dataset: Dataset) -> None:
    from .io import atomic_write_text

    atomic_write_text(Path(path), "".join(line + "\n" for line in dataset_lines(dataset)))
