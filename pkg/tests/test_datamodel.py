import json

import pytest

from conftest import random_dataset
from coreeval.datamodel import (
    LABEL_SPACES,
    Dataset,
    Sample,
    TaskKind,
    load_dataset,
    normalize_label,
    save_dataset,
    stratified_quotas,
    stratified_sample,
)
from coreeval.errors import ValidationError


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def emotion_record(i, label="joy", **overrides):
    record = {
        "id": f"e{i}",
        "task": "emotion",
        "text": f"text {i}",
        "text2": None,
        "target": None,
        "label": label,
    }
    record.update(overrides)
    return record


class TestLabelSpaces:
    def test_canonical_spaces_verbatim(self):
        assert LABEL_SPACES[TaskKind.EMOTION] == ("joy", "optimism", "sadness", "anger")
        assert LABEL_SPACES[TaskKind.IRONY] == ("irony", "not irony")
        assert LABEL_SPACES[TaskKind.STANCE] == ("favor", "against", "neutral")
        assert LABEL_SPACES[TaskKind.MRPC] == (
            "semantically equivalent",
            "not semantically equivalent",
        )
        assert LABEL_SPACES[TaskKind.RTE] == ("entailment", "not entailment")

    def test_normalize_label(self):
        assert normalize_label("  Not   Irony ") == "not irony"


class TestSampleInvariants:
    def test_stance_requires_target(self):
        with pytest.raises(ValidationError, match="target"):
            Sample(id="x", task=TaskKind.STANCE, text_primary="t", label="favor")

    def test_pair_task_requires_text2(self):
        with pytest.raises(ValidationError, match="text2"):
            Sample(id="x", task=TaskKind.MRPC, text_primary="t", label="semantically equivalent")

    def test_single_task_forbids_text2(self):
        with pytest.raises(ValidationError, match="text2"):
            Sample(id="x", task=TaskKind.IRONY, text_primary="t", label="irony", text_secondary="y")

    def test_label_outside_space(self):
        with pytest.raises(ValidationError, match="fear"):
            Sample(id="x", task=TaskKind.EMOTION, text_primary="t", label="fear")

    def test_empty_text(self):
        with pytest.raises(ValidationError, match="text is empty"):
            Sample(id="x", task=TaskKind.EMOTION, text_primary="  ", label="joy")


class TestLoadDataset:
    def test_three_valid_records(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [emotion_record(i) for i in range(3)])
        ds = load_dataset(path, TaskKind.EMOTION, "test")
        assert len(ds) == 3
        assert ds.ids() == ["e0", "e1", "e2"]

    def test_label_outside_space_lists_ids(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [emotion_record(0), emotion_record(1, label="fear")])
        with pytest.raises(ValidationError) as err:
            load_dataset(path, TaskKind.EMOTION, "test")
        assert "e1" in str(err.value)
        assert "fear" in str(err.value)

    def test_stance_missing_target_names_field(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(
            path,
            [{"id": "s0", "task": "stance", "text": "t", "text2": None, "target": None, "label": "favor"}],
        )
        with pytest.raises(ValidationError, match="target"):
            load_dataset(path, TaskKind.STANCE, "test")

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "task": "emotion"}\n{broken\n', encoding="utf-8")
        with pytest.raises(ValidationError, match="line 2"):
            load_dataset(path, TaskKind.EMOTION, "test")

    def test_task_mismatch(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [emotion_record(0)])
        with pytest.raises(ValidationError, match="does not match"):
            load_dataset(path, TaskKind.IRONY, "test")

    def test_duplicate_ids(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [emotion_record(0), emotion_record(0)])
        with pytest.raises(ValidationError, match="duplicate"):
            load_dataset(path, TaskKind.EMOTION, "test")


class TestSaveRoundTrip:
    def test_save_load_identity(self, tmp_path, rng):
        for trial in range(50):
            ds = random_dataset(rng)
            path = tmp_path / f"rt{trial}.jsonl"
            save_dataset(ds, path)
            back = load_dataset(path, ds.task, ds.split, variant=ds.variant)
            assert back == ds

    def test_empty_dataset(self, tmp_path):
        ds = Dataset(task=TaskKind.EMOTION, split="test", samples=())
        path = tmp_path / "empty.jsonl"
        save_dataset(ds, path)
        assert path.read_text(encoding="utf-8") == ""
        assert load_dataset(path, TaskKind.EMOTION, "test") == ds

    def test_unicode_faithful(self, tmp_path):
        sample = Sample(
            id="u1", task=TaskKind.EMOTION, text_primary="café 東京 🚀 é́", label="joy"
        )
        ds = Dataset(task=TaskKind.EMOTION, split="test", samples=(sample,))
        path = tmp_path / "u.jsonl"
        save_dataset(ds, path)
        back = load_dataset(path, TaskKind.EMOTION, "test")
        assert back.samples[0].text_primary == sample.text_primary


def two_label_dataset(n_per_label=50):
    samples = []
    for i in range(n_per_label):
        samples.append(Sample(id=f"j{i}", task=TaskKind.IRONY, text_primary="t", label="irony"))
        samples.append(Sample(id=f"n{i}", task=TaskKind.IRONY, text_primary="t", label="not irony"))
    return Dataset(task=TaskKind.IRONY, split="test", samples=tuple(samples))


class TestStratifiedSample:
    def test_fraction_one_is_identity(self):
        ds = two_label_dataset()
        assert stratified_sample(ds, 1.0, seed=99) == ds

    def test_worked_example_50_50(self):
        ds = two_label_dataset(50)
        out = stratified_sample(ds, 0.2, seed=7)
        assert len(out) == 20
        per_label = {"irony": 0, "not irony": 0}
        for sample in out.samples:
            per_label[sample.label] += 1
        assert per_label == {"irony": 10, "not irony": 10}

    def test_deterministic_repeat(self, rng):
        for _ in range(100):
            ds = random_dataset(rng, n=rng.randint(2, 20))
            fraction = rng.choice([0.2, 0.4, 0.6, 0.8, 0.99])
            seed = rng.randint(0, 10**6)
            first = stratified_sample(ds, fraction, seed)
            second = stratified_sample(ds, fraction, seed)
            assert first.ids() == second.ids()
            assert set(first.ids()) <= set(ds.ids())

    def test_quota_oracle(self, rng):
        # independent largest-remainder recomputation
        for _ in range(200):
            counts = {f"l{i}": rng.randint(0, 30) for i in range(rng.randint(1, 5))}
            if sum(counts.values()) == 0:
                continue
            fraction = rng.uniform(0.05, 1.0)
            quotas = stratified_quotas(counts, fraction)
            total = int(round(fraction * sum(counts.values())))
            assert sum(quotas.values()) == total
            for label, count in counts.items():
                assert 0 <= quotas[label] <= count
                assert abs(quotas[label] - fraction * count) < 1.0 + 1e-9

    def test_subset_order_preserved(self):
        ds = two_label_dataset(10)
        out = stratified_sample(ds, 0.5, seed=3)
        positions = [ds.ids().index(sid) for sid in out.ids()]
        assert positions == sorted(positions)

    def test_bad_fraction(self):
        ds = two_label_dataset(5)
        for fraction in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                stratified_sample(ds, fraction, seed=1)

    def test_empty_dataset(self):
        ds = Dataset(task=TaskKind.EMOTION, split="test", samples=())
        with pytest.raises(ValueError):
            stratified_sample(ds, 0.5, seed=1)
