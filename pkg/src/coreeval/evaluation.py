"""Metrics and contamination simulations: prediction parsing, macro-F1,
template averaging, the two performance-gain deltas, proportion sweeps,
a synthetic memorizing model, and Fleiss' kappa.

Scores are carried in percent (0-100) at full float precision and only
rounded for display. Macro-F1 averages over the task's full declared
label space; classes with no mass score 0, and an Invalid prediction
counts as a false negative for the gold class without crediting any
class. Both conventions are isolated here so an alternate policy is a
one-line change.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
from dataclasses import dataclass

from .datamodel import (
    ANSWER_KEYS,
    LABEL_SPACES,
    Dataset,
    TaskKind,
    normalize_label,
    stratified_quotas,
    stratified_sample,
)
from .errors import InputError, MatrixError, ReportError, UndefinedKappaError
from .jsonparse import parse_json_object

ROLES = ("zero", "test_tuned", "train_tuned", "train_test_tuned")
CONTAMINATION_MODES = ("labels_and_text", "text_only")
DEFAULT_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    template_id: str
    raw_output: str
    parsed_label: str | None  # None means Invalid


def parse_prediction(raw_output: str, task: TaskKind) -> str | None:
    """Extract a label from raw model output.

    Tries the task's JSON answer format first (first balanced object,
    task answer key, case-insensitive label match), then a substring
    scan over the label space taking the earliest longest match (so
    "not irony" always beats "irony"), else Invalid (None).
    """
    space = LABEL_SPACES[task]
    obj = parse_json_object(raw_output)
    if obj is not None:
        answer_key = ANSWER_KEYS[task]
        for key, value in obj.items():
            if str(key).strip().lower() == answer_key and isinstance(value, str):
                candidate = normalize_label(value)
                if candidate in space:
                    return candidate
    haystack = raw_output.lower()
    best: tuple[int, int, str] | None = None
    for label in space:
        position = haystack.find(label)
        if position >= 0:
            ranked = (position, -len(label), label)
            if best is None or ranked < best:
                best = ranked
    return best[2] if best else None


def _check_alignment(predictions: list[PredictionRecord], gold: Dataset) -> dict[str, PredictionRecord]:
    by_id: dict[str, PredictionRecord] = {}
    duplicates: list[str] = []
    unknown: list[str] = []
    gold_ids = set(gold.ids())
    for record in predictions:
        if record.sample_id in by_id:
            duplicates.append(record.sample_id)
        by_id[record.sample_id] = record
        if record.sample_id not in gold_ids:
            unknown.append(record.sample_id)
    missing = [sid for sid in gold.ids() if sid not in by_id]
    if duplicates:
        raise InputError("duplicate predictions", sorted(set(duplicates)))
    if unknown:
        raise InputError("predictions for unknown sample ids", sorted(set(unknown)))
    if missing:
        raise InputError("missing predictions", missing)
    return by_id


def macro_f1(predictions: list[PredictionRecord], gold: Dataset) -> float:
    """Macro F1 in percent over the task's full label space.

    Exactly one prediction per gold sample is required. Invalid
    predictions add a false negative for the gold class and no false
    positive anywhere; zero-denominator classes score 0.
    """
    space = LABEL_SPACES[gold.task]
    by_id = _check_alignment(predictions, gold)
    bad = [r.sample_id for r in predictions if r.parsed_label is not None and r.parsed_label not in space]
    if bad:
        raise InputError("predicted labels outside the label space", sorted(set(bad)))
    tp = {label: 0 for label in space}
    fp = {label: 0 for label in space}
    fn = {label: 0 for label in space}
    for sample in gold.samples:
        predicted = by_id[sample.id].parsed_label
        if predicted == sample.label:
            tp[sample.label] += 1
        else:
            fn[sample.label] += 1
            if predicted is not None:
                fp[predicted] += 1
    scores = []
    for label in space:
        denominator = 2 * tp[label] + fp[label] + fn[label]
        scores.append((2 * tp[label] / denominator) if denominator else 0.0)
    return 100.0 * sum(scores) / len(scores)


@dataclass(frozen=True)
class EvalReport:
    per_template_f1: dict[str, float]
    averaged_f1: float
    n_samples: int
    n_invalid: int

    def to_json(self) -> dict:
        return {
            "per_template_f1": dict(sorted(self.per_template_f1.items())),
            "averaged_f1": self.averaged_f1,
            "n_samples": self.n_samples,
            "n_invalid": self.n_invalid,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "EvalReport":
        return cls(
            per_template_f1={str(k): float(v) for k, v in payload["per_template_f1"].items()},
            averaged_f1=float(payload["averaged_f1"]),
            n_samples=int(payload["n_samples"]),
            n_invalid=int(payload["n_invalid"]),
        )


def group_by_template(predictions: list[PredictionRecord]) -> dict[str, list[PredictionRecord]]:
    grouped: dict[str, list[PredictionRecord]] = {}
    for record in predictions:
        grouped.setdefault(record.template_id, []).append(record)
    return grouped


def evaluate_run(predictions, gold: Dataset) -> EvalReport:
    """Per-template macro-F1 plus the arithmetic mean across templates.

    ``predictions`` is either a flat record list or a mapping
    template_id -> records; every template must cover the gold set
    exactly.
    """
    grouped = predictions if isinstance(predictions, dict) else group_by_template(predictions)
    if not grouped:
        raise InputError("no predictions")
    per_template: dict[str, float] = {}
    n_invalid = 0
    for template_id in sorted(grouped):
        records = grouped[template_id]
        try:
            per_template[template_id] = macro_f1(records, gold)
        except InputError as exc:
            raise InputError(f"template {template_id!r}: {exc}")
        n_invalid += sum(1 for r in records if r.parsed_label is None)
    averaged = sum(per_template.values()) / len(per_template)
    return EvalReport(
        per_template_f1=per_template,
        averaged_f1=averaged,
        n_samples=len(gold),
        n_invalid=n_invalid,
    )


def _check_score(name: str, value: float) -> None:
    if not (0.0 <= value <= 100.0):
        raise ValueError(f"{name} must be in [0, 100], got {value}")


def delta1(p_test: float, p_zero: float) -> float:
    """Gain of the test-set-tuned run over the zero-shot run (may be negative)."""
    _check_score("p_test", p_test)
    _check_score("p_zero", p_zero)
    return p_test - p_zero


def delta2(p_train_test: float, p_train: float) -> float:
    """Gain of the train+test-tuned run over the train-only-tuned run."""
    _check_score("p_train_test", p_train_test)
    _check_score("p_train", p_train)
    return p_train_test - p_train


@dataclass(frozen=True)
class RunManifest:
    role: str
    task: TaskKind
    dataset_variant: str
    contamination_mode: str = "labels_and_text"
    proportion: float = 1.0
    model: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise InputError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.dataset_variant not in ("original", "semantic", "updated"):
            raise InputError(f"bad dataset_variant {self.dataset_variant!r}")
        if self.contamination_mode not in CONTAMINATION_MODES:
            raise InputError(f"bad contamination_mode {self.contamination_mode!r}")
        if not (0.0 < self.proportion <= 1.0):
            raise InputError(f"proportion must be in (0, 1], got {self.proportion}")

    def pair_key(self) -> tuple:
        return (
            self.model,
            self.task.value,
            self.dataset_variant,
            self.contamination_mode,
            self.proportion,
        )

    def to_json(self) -> dict:
        return {
            "role": self.role,
            "task": self.task.value,
            "dataset_variant": self.dataset_variant,
            "contamination_mode": self.contamination_mode,
            "proportion": self.proportion,
            "model": self.model,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "RunManifest":
        return cls(
            role=str(payload["role"]),
            task=TaskKind.from_name(str(payload["task"])),
            dataset_variant=str(payload["dataset_variant"]),
            contamination_mode=str(payload.get("contamination_mode", "labels_and_text")),
            proportion=float(payload.get("proportion", 1.0)),
            model=str(payload.get("model", "")),
        )


@dataclass(frozen=True)
class DeltaEntry:
    model: str
    task: TaskKind
    dataset_variant: str
    contamination_mode: str
    proportion: float
    delta1: float | None = None
    p_zero: float | None = None
    p_test: float | None = None
    delta2: float | None = None
    p_train: float | None = None
    p_train_test: float | None = None

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "task": self.task.value,
            "dataset_variant": self.dataset_variant,
            "contamination_mode": self.contamination_mode,
            "proportion": self.proportion,
            "delta1": self.delta1,
            "p_zero": self.p_zero,
            "p_test": self.p_test,
            "delta2": self.delta2,
            "p_train": self.p_train,
            "p_train_test": self.p_train_test,
        }


@dataclass(frozen=True)
class DeltaReport:
    entries: tuple[DeltaEntry, ...]

    def to_json(self) -> dict:
        return {"entries": [entry.to_json() for entry in self.entries]}


def contamination_report(runs: list[tuple[RunManifest, EvalReport]]) -> DeltaReport:
    """Pair runs by (model, task, variant, mode, proportion) and emit
    delta1 for every (zero, test_tuned) pair and delta2 for every
    (train_tuned, train_test_tuned) pair.

    A role whose counterpart is absent is an error naming the missing
    role; a pair that is absent entirely is simply not reported.
    """
    groups: dict[tuple, dict[str, EvalReport]] = {}
    for manifest, report in runs:
        group = groups.setdefault(manifest.pair_key(), {})
        if manifest.role in group:
            raise InputError(f"duplicate run for role {manifest.role!r} in group {manifest.pair_key()}")
        group[manifest.role] = report
    entries = []
    for key in sorted(groups):
        model, task_name, variant, mode, proportion = key
        group = groups[key]
        values: dict[str, float | None] = {
            "delta1": None,
            "p_zero": None,
            "p_test": None,
            "delta2": None,
            "p_train": None,
            "p_train_test": None,
        }
        for a, b, delta_fn, delta_key, key_a, key_b in (
            ("zero", "test_tuned", delta1, "delta1", "p_zero", "p_test"),
            ("train_tuned", "train_test_tuned", delta2, "delta2", "p_train", "p_train_test"),
        ):
            has_a, has_b = a in group, b in group
            if has_a != has_b:
                missing = a if not has_a else b
                raise ReportError(f"missing role: {missing} (group {key})")
            if has_a and has_b:
                values[key_a] = group[a].averaged_f1
                values[key_b] = group[b].averaged_f1
                values[delta_key] = delta_fn(group[b].averaged_f1, group[a].averaged_f1)
        if values["delta1"] is None and values["delta2"] is None:
            continue
        entries.append(
            DeltaEntry(
                model=model,
                task=TaskKind.from_name(task_name),
                dataset_variant=variant,
                contamination_mode=mode,
                proportion=proportion,
                **values,
            )
        )
    return DeltaReport(entries=tuple(entries))


_VARIANT_ABBREV = {"original": "orig", "semantic": "semt", "updated": "ours"}
_TASK_DISPLAY = {
    TaskKind.EMOTION: "Emotion",
    TaskKind.IRONY: "Irony",
    TaskKind.STANCE: "Stance",
    TaskKind.MRPC: "MRPC",
    TaskKind.RTE: "RTE",
}


def _format_delta(value: float | None) -> str:
    return f"{value:.2f}" if value is not None else "-"


def render_delta_table(report: DeltaReport) -> str:
    """Text table of delta1/delta2 per (model, variant, task); text-only
    contamination runs are listed in their own section. The proportion
    column only appears when some run used a partial proportion."""
    sections: list[tuple[str, list[DeltaEntry]]] = [
        ("contamination (labels and text)", [e for e in report.entries if e.contamination_mode == "labels_and_text"]),
        ("contamination (text-only)", [e for e in report.entries if e.contamination_mode == "text_only"]),
    ]
    show_proportion = any(e.proportion != 1.0 for e in report.entries)
    lines: list[str] = []
    for title, entries in sections:
        if not entries:
            continue
        if lines:
            lines.append("")
        lines.append(f"== {title} ==")
        header = f"{'model':<14} {'data':<5} {'task':<8}"
        if show_proportion:
            header += f" {'prop':>5}"
        lines.append(header + f" {'d1':>8} {'d2':>8}")
        for entry in entries:
            row = (
                f"{entry.model or '-':<14} "
                f"{_VARIANT_ABBREV[entry.dataset_variant]:<5} "
                f"{_TASK_DISPLAY[entry.task]:<8}"
            )
            if show_proportion:
                row += f" {entry.proportion:>5.2f}"
            row += f" {_format_delta(entry.delta1):>8} {_format_delta(entry.delta2):>8}"
            lines.append(row)
    return "\n".join(lines) + "\n"


def simulate_memorizing_model(
    gold: Dataset,
    memorized_fraction: float,
    base_accuracy: float,
    seed: int,
    template_ids: tuple[str, ...] = ("sim",),
) -> list[PredictionRecord]:
    """Desk-scale stand-in for a fine-tuned model.

    A stratified, seeded round(memorized_fraction * n) subset is always
    predicted correctly; the rest are correct with probability
    base_accuracy via a per-sample seeded draw (so the output is a pure
    function of the inputs and memorized sets are nested across
    fractions). Outputs use the task's JSON answer format.
    """
    if not (0.0 <= memorized_fraction <= 1.0):
        raise ValueError("memorized_fraction must be in [0, 1]")
    if not (0.0 <= base_accuracy <= 1.0):
        raise ValueError("base_accuracy must be in [0, 1]")
    space = LABEL_SPACES[gold.task]
    strata: dict[str, list[str]] = {label: [] for label in space}
    for sample in gold.samples:
        strata[sample.label].append(sample.id)
    quotas = stratified_quotas({label: len(ids) for label, ids in strata.items()}, memorized_fraction)
    memorized: set[str] = set()
    for label in space:
        ranked = sorted(
            strata[label],
            key=lambda sid: hashlib.sha256(f"{seed}:memrank:{sid}".encode()).hexdigest(),
        )
        memorized.update(ranked[: quotas[label]])
    answer_key = ANSWER_KEYS[gold.task]
    records: list[PredictionRecord] = []
    for sample in gold.samples:
        if sample.id in memorized:
            label = sample.label
        else:
            rng = random.Random(f"{seed}:acc:{sample.id}")
            if rng.random() < base_accuracy:
                label = sample.label
            else:
                label = rng.choice([l for l in space if l != sample.label])
        raw = json.dumps({answer_key: label}, ensure_ascii=False)
        for template_id in template_ids:
            records.append(
                PredictionRecord(
                    sample_id=sample.id,
                    template_id=template_id,
                    raw_output=raw,
                    parsed_label=label,
                )
            )
    return records


@dataclass(frozen=True)
class SweepRun:
    """One run fed into a proportion sweep: its manifest, its full-data
    report, and (for subset evaluation) its raw predictions."""

    manifest: RunManifest
    report: EvalReport | None = None
    predictions: list[PredictionRecord] | None = None


@dataclass(frozen=True)
class SweepPoint:
    fraction: float
    delta1: float | None = None
    delta1_source: str | None = None
    delta2: float | None = None
    delta2_source: str | None = None

    def to_json(self) -> dict:
        return {
            "fraction": self.fraction,
            "delta1": self.delta1,
            "delta1_source": self.delta1_source,
            "delta2": self.delta2,
            "delta2_source": self.delta2_source,
        }


@dataclass(frozen=True)
class SweepReport:
    seed: int
    fractions: tuple[float, ...]
    groups: tuple[dict, ...]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "fractions": list(self.fractions),
            "groups": list(self.groups),
        }


def _subset_score(run: SweepRun, subset: Dataset) -> float:
    if run.predictions is None:
        raise ReportError(
            f"run {run.manifest.role}@{run.manifest.proportion} has no predictions "
            "for subset evaluation"
        )
    subset_ids = set(subset.ids())
    filtered = [r for r in run.predictions if r.sample_id in subset_ids]
    return evaluate_run(filtered, subset).averaged_f1


def _sweep_point(
    by_role: dict[tuple[str, float], SweepRun],
    key: tuple,
    fraction: float,
    seed: int,
    gold: Dataset | None,
) -> SweepPoint:
    def find(role: str, frac: float) -> SweepRun | None:
        return by_role.get((role, frac))

    d1 = d1_source = d2 = d2_source = None

    zero_f = find("zero", fraction) or find("zero", 1.0)
    test_f = find("test_tuned", fraction)
    if test_f is not None and zero_f is not None and test_f.report and zero_f.report:
        d1 = delta1(test_f.report.averaged_f1, zero_f.report.averaged_f1)
        d1_source = "per_fraction_runs" if fraction != 1.0 else "full_runs"
    else:
        zero_full = find("zero", 1.0)
        test_full = find("test_tuned", 1.0)
        if zero_full is not None and test_full is not None:
            if gold is None:
                raise ReportError("subset evaluation needs the gold dataset")
            subset = stratified_sample(gold, fraction, seed)
            d1 = delta1(_subset_score(test_full, subset), _subset_score(zero_full, subset))
            d1_source = "subset_eval"
        elif (zero_full is None) != (test_full is None):
            missing = "zero" if zero_full is None else "test_tuned"
            raise ReportError(f"missing role: {missing} (group {key})")

    train_f = find("train_tuned", fraction)
    traintest_f = find("train_test_tuned", fraction)
    if train_f is not None and traintest_f is not None and train_f.report and traintest_f.report:
        d2 = delta2(traintest_f.report.averaged_f1, train_f.report.averaged_f1)
        d2_source = "per_fraction_runs" if fraction != 1.0 else "full_runs"
    elif (train_f is None) != (traintest_f is None):
        missing = "train_tuned" if train_f is None else "train_test_tuned"
        raise ReportError(f"missing role: {missing} at proportion {fraction} (group {key})")

    return SweepPoint(
        fraction=fraction,
        delta1=d1,
        delta1_source=d1_source,
        delta2=d2,
        delta2_source=d2_source,
    )


def proportion_sweep(
    runs: list[SweepRun],
    fractions: list[float],
    seed: int,
    gold: Dataset | None = None,
    parallelism: int = 1,
) -> SweepReport:
    """Delta series across data proportions.

    For each fraction, delta1 prefers a (zero, test_tuned) pair whose
    manifests carry that proportion; otherwise the full-proportion pair
    is re-evaluated on a stratified subset of the test gold (sampling
    the test set). delta2 pairs per-fraction train-side runs, the
    full-proportion pair qualifying at fraction 1.0 — train-side
    proportioning happens in training, upstream of this harness.

    Points may be computed in parallel; results are joined in fraction
    order, so the report never depends on the worker count.
    """
    if not fractions:
        raise ValueError("fractions is empty")
    if any(not (0.0 < f <= 1.0) for f in fractions):
        raise ValueError("fractions must be in (0, 1]")
    if sorted(fractions) != list(fractions):
        raise ValueError("fractions must be sorted ascending")

    base_groups: dict[tuple, dict[tuple[str, float], SweepRun]] = {}
    for run in runs:
        m = run.manifest
        key = (m.model, m.task.value, m.dataset_variant, m.contamination_mode)
        base_groups.setdefault(key, {})[(m.role, m.proportion)] = run

    jobs = [(key, fraction) for key in sorted(base_groups) for fraction in fractions]

    def compute(job: tuple) -> SweepPoint:
        key, fraction = job
        return _sweep_point(base_groups[key], key, fraction, seed, gold)

    if parallelism > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            point_list = list(pool.map(compute, jobs))
    else:
        point_list = [compute(job) for job in jobs]
    points_by_job = dict(zip(jobs, point_list))

    groups_out = []
    for key in sorted(base_groups):
        model, task_name, variant, mode = key
        groups_out.append(
            {
                "model": model,
                "task": task_name,
                "dataset_variant": variant,
                "contamination_mode": mode,
                "points": [points_by_job[(key, fraction)].to_json() for fraction in fractions],
            }
        )
    return SweepReport(seed=seed, fractions=tuple(fractions), groups=tuple(groups_out))


def synthetic_sweep_runs(
    gold: Dataset,
    fractions: list[float],
    base_accuracy: float,
    seed: int,
    train_gain: float = 0.5,
    model: str = "memorizing-sim",
    dataset_variant: str = "original",
    template_ids: tuple[str, ...] = ("sim",),
) -> list[SweepRun]:
    """Generate per-fraction run pairs from the memorizing model.

    test-side: memorizing round(f*n) of the test set raises delta1 with
    f; train-side: task understanding grows with the train fraction
    (base_accuracy + train_gain headroom), so delta2 shrinks with f.
    """

    def run(role: str, fraction: float, memorized: float, accuracy: float, offset: int) -> SweepRun:
        predictions = simulate_memorizing_model(
            gold, memorized, accuracy, seed + offset, template_ids=template_ids
        )
        manifest = RunManifest(
            role=role,
            task=gold.task,
            dataset_variant=dataset_variant,
            proportion=fraction,
            model=model,
        )
        return SweepRun(
            manifest=manifest,
            report=evaluate_run(predictions, gold),
            predictions=predictions,
        )

    runs = [run("zero", 1.0, 0.0, base_accuracy, 0)]
    for fraction in fractions:
        runs.append(run("test_tuned", fraction, fraction, base_accuracy, 0))
        trained_accuracy = min(1.0, base_accuracy + (1.0 - base_accuracy) * train_gain * fraction)
        runs.append(run("train_tuned", fraction, 0.0, trained_accuracy, 1))
        runs.append(run("train_test_tuned", fraction, 1.0, trained_accuracy, 1))
    return runs


@dataclass(frozen=True)
class AgreementMatrix:
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.counts) < 2:
            raise MatrixError("need at least 2 items")
        widths = {len(row) for row in self.counts}
        if len(widths) != 1:
            raise MatrixError("ragged rows: item rows have differing category counts")
        if widths.pop() < 2:
            raise MatrixError("need at least 2 categories")
        sums = {sum(row) for row in self.counts}
        if len(sums) != 1:
            raise MatrixError("ragged rows: rating counts differ across items")
        if any(cell < 0 for row in self.counts for cell in row):
            raise MatrixError("counts must be non-negative")
        if sums.pop() < 2:
            raise MatrixError("need at least 2 raters")

    @property
    def n_raters(self) -> int:
        return sum(self.counts[0])


def fleiss_kappa(matrix: AgreementMatrix) -> float:
    """Chance-corrected agreement for n raters over categorical items.

    Per-item agreement is (sum of squared counts - n) / (n(n-1)); the
    expected agreement is the sum of squared category proportions.
    Perfect agreement returns exactly 1.0; all mass in one category
    makes kappa undefined.
    """
    n = matrix.n_raters
    n_items = len(matrix.counts)
    per_item = [
        (sum(cell * cell for cell in row) - n) / (n * (n - 1)) for row in matrix.counts
    ]
    observed = sum(per_item) / n_items
    total = n_items * n
    proportions = [
        sum(row[j] for row in matrix.counts) / total for j in range(len(matrix.counts[0]))
    ]
    expected = sum(p * p for p in proportions)
    if 1.0 - expected == 0.0:
        raise UndefinedKappaError("expected agreement is 1 (all ratings in one category)")
    return (observed - expected) / (1.0 - expected)


def load_agreement_csv(path) -> AgreementMatrix:
    """Read an items x categories grid of integer counts."""
    rows: list[tuple[int, ...]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append(tuple(int(cell.strip()) for cell in row if cell.strip() != ""))
            except ValueError:
                raise MatrixError(f"line {line_no}: non-integer cell in {row!r}")
    return AgreementMatrix(counts=tuple(rows))
