"""Task/dataset/sample data model, JSONL I/O, and stratified sampling.

A dataset is a line-delimited JSON file, one object per line:

    {"id": str, "task": str, "text": str, "text2": str|null,
     "target": str|null, "label": str}

``text2`` is required for the sentence-pair tasks (mrpc, rte) and must be
null otherwise; ``target`` is required for stance and must be null
otherwise. Labels are stored lowercase with internal single spaces.
"""

from __future__ import annotations

import enum
import json
import math
import random
import re
from dataclasses import dataclass

from .errors import ValidationError


class TaskKind(enum.Enum):
    EMOTION = "emotion"
    IRONY = "irony"
    STANCE = "stance"
    MRPC = "mrpc"
    RTE = "rte"

    @classmethod
    def from_name(cls, name: str) -> "TaskKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(t.value for t in cls)
            raise ValidationError(f"unknown task {name!r}; expected one of: {valid}")


PAIR_TASKS = frozenset({TaskKind.MRPC, TaskKind.RTE})

# Canonical label spaces, matching the prompt answer options verbatim.
LABEL_SPACES: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.EMOTION: ("joy", "optimism", "sadness", "anger"),
    TaskKind.IRONY: ("irony", "not irony"),
    TaskKind.STANCE: ("favor", "against", "neutral"),
    TaskKind.MRPC: ("semantically equivalent", "not semantically equivalent"),
    TaskKind.RTE: ("entailment", "not entailment"),
}

# Key under which eval prompts ask for the answer in their JSON format.
ANSWER_KEYS: dict[TaskKind, str] = {
    TaskKind.EMOTION: "emotion",
    TaskKind.IRONY: "irony detection",
    TaskKind.STANCE: "stance",
    TaskKind.MRPC: "mrpc",
    TaskKind.RTE: "rte",
}

VARIANTS = ("original", "semantic", "updated")
SPLITS = ("train", "test")


def label_space(task: TaskKind) -> tuple[str, ...]:
    return LABEL_SPACES[task]


def normalize_label(text: str) -> str:
    """Lowercase, trim, and collapse internal whitespace."""
    return re.sub(r"\s+", " ", text.strip().lower())


@dataclass(frozen=True)
class Sample:
    id: str
    task: TaskKind
    text_primary: str
    label: str
    text_secondary: str | None = None
    target: str | None = None

    def __post_init__(self):
        problems = []
        if not self.id:
            problems.append("id is empty")
        if not self.text_primary.strip():
            problems.append("text is empty")
        if self.label not in LABEL_SPACES[self.task]:
            space = ", ".join(LABEL_SPACES[self.task])
            problems.append(f"label {self.label!r} not in {{{space}}}")
        if self.task in PAIR_TASKS:
            if self.text_secondary is None or not self.text_secondary.strip():
                problems.append("text2 is required for pair tasks")
        elif self.text_secondary is not None:
            problems.append("text2 must be null for single-text tasks")
        if self.task is TaskKind.STANCE:
            if self.target is None or not self.target.strip():
                problems.append("target is required for stance")
        elif self.target is not None:
            problems.append("target must be null for non-stance tasks")
        if problems:
            raise ValidationError(f"invalid sample {self.id!r}", problems)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "task": self.task.value,
            "text": self.text_primary,
            "text2": self.text_secondary,
            "target": self.target,
            "label": self.label,
        }


@dataclass(frozen=True)
class Dataset:
    task: TaskKind
    split: str
    samples: tuple[Sample, ...]
    variant: str = "original"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        seen: set[str] = set()
        dups = []
        for s in self.samples:
            if s.task is not self.task:
                raise ValidationError(
                    f"sample {s.id!r} has task {s.task.value}, dataset is {self.task.value}"
                )
            if s.id in seen:
                dups.append(s.id)
            seen.add(s.id)
        if dups:
            raise ValidationError("duplicate sample ids", dups)

    def __len__(self) -> int:
        return len(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}


def _sample_from_record(record: dict, task: TaskKind, line_no: int) -> Sample:
    for key in ("id", "task", "text", "label"):
        if key not in record or record[key] is None:
            raise ValidationError(f"line {line_no}: missing field {key!r}")
    rec_task = TaskKind.from_name(str(record["task"]))
    if rec_task is not task:
        raise ValidationError(
            f"line {line_no}: record task {rec_task.value!r} does not match "
            f"declared task {task.value!r}"
        )
    text2 = record.get("text2")
    target = record.get("target")
    return Sample(
        id=str(record["id"]),
        task=task,
        text_primary=str(record["text"]).strip(),
        label=normalize_label(str(record["label"])),
        text_secondary=str(text2).strip() if text2 is not None else None,
        target=str(target).strip() if target is not None else None,
    )


def load_dataset(path, task: TaskKind, split: str, variant: str = "original") -> Dataset:
    """Load and validate a line-delimited JSON dataset.

    Raises ValidationError naming the line number for malformed JSON, and
    a single aggregated ValidationError listing offending ids for samples
    that violate task invariants (bad label, missing target/text2, ...).
    """
    samples: list[Sample] = []
    problems: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: malformed JSON on line {line_no}: {exc.msg}")
            if not isinstance(record, dict):
                raise ValidationError(f"{path}: line {line_no} is not a JSON object")
            try:
                samples.append(_sample_from_record(record, task, line_no))
            except ValidationError as exc:
                rid = record.get("id", f"<line {line_no}>")
                problems.append(f"{rid}: {exc}")
    if problems:
        raise ValidationError(f"{path}: {len(problems)} invalid record(s)", problems)
    return Dataset(task=task, split=split, samples=tuple(samples), variant=variant)


def save_dataset(dataset: Dataset, path) -> str:
    """Write a dataset as line-delimited JSON; round-trips through
    load_dataset field-for-field."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample in dataset.samples:
            fh.write(json.dumps(sample.to_record(), ensure_ascii=False) + "\n")
    return str(path)


def _largest_remainder(counts: list[int], fraction: float, total: int) -> list[int]:
    """Allocate ``total`` across strata proportionally to ``counts`` by
    the largest-remainder rule. Ties break on stratum order."""
    quotas = [fraction * c for c in counts]
    alloc = [min(math.floor(q), c) for q, c in zip(quotas, counts)]
    short = total - sum(alloc)
    order = sorted(
        range(len(counts)),
        key=lambda i: (-(quotas[i] - math.floor(quotas[i])), i),
    )
    while short > 0:
        progressed = False
        for i in order:
            if short == 0:
                break
            if alloc[i] < counts[i]:
                alloc[i] += 1
                short -= 1
                progressed = True
        if not progressed:
            raise ValueError("quota total exceeds available samples")
    return alloc


def stratified_quotas(per_label: dict[str, int], fraction: float) -> dict[str, int]:
    """Per-label sample quotas for a fraction, totalling round(fraction*n)."""
    labels = list(per_label)
    counts = [per_label[lab] for lab in labels]
    total = int(round(fraction * sum(counts)))
    alloc = _largest_remainder(counts, fraction, total)
    return dict(zip(labels, alloc))


def stratified_sample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Deterministic label-stratified subsample.

    Per-label counts follow round(fraction * per-label count) with
    largest-remainder correction so the total equals round(fraction * n).
    Output preserves input order; fraction=1.0 returns every sample.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not dataset.samples:
        raise ValueError("dataset is empty")
    if fraction == 1.0:
        return dataset

    strata: dict[str, list[int]] = {lab: [] for lab in LABEL_SPACES[dataset.task]}
    for idx, sample in enumerate(dataset.samples):
        strata[sample.label].append(idx)
    quotas = stratified_quotas(
        {lab: len(idxs) for lab, idxs in strata.items()}, fraction
    )
    rng = random.Random(seed)
    chosen: list[int] = []
    for lab in LABEL_SPACES[dataset.task]:
        idxs = strata[lab]
        k = quotas[lab]
        if k:
            chosen.extend(rng.sample(idxs, k))
    chosen.sort()
    return Dataset(
        task=dataset.task,
        split=dataset.split,
        samples=tuple(dataset.samples[i] for i in chosen),
        variant=dataset.variant,
    )
