import datetime as dt
import json

import pytest

from conftest import fixture_records, make_dataset, pipeline_rules
from coreeval.datamodel import TaskKind
from coreeval.gateway import Gateway, MockBackend
from coreeval.knowledge import FixtureGdeltClient, TimeWindow, write_fixture
from coreeval.pipeline import PipelineConfig, update_dataset
from coreeval.prompts import load_template_pack

PACK = load_template_pack()
WINDOW = TimeWindow(dt.date(2025, 1, 1), dt.date(2025, 3, 31))


@pytest.fixture
def gdelt(tmp_path):
    path = tmp_path / "fixture.json"
    write_fixture(fixture_records(), path)
    return FixtureGdeltClient(path)


def run(dataset, gdelt, always_fail=False, parallelism=1, max_rounds=3):
    gateway = Gateway(MockBackend(rules=pipeline_rules(always_fail_reflection=always_fail)))
    config = PipelineConfig(window=WINDOW, parallelism=parallelism, max_rounds=max_rounds)
    return update_dataset(dataset, gateway, gdelt, PACK, config)


class TestUpdateDataset:
    def test_all_accepted(self, gdelt):
        dataset = make_dataset(TaskKind.EMOTION, 10)
        result = run(dataset, gdelt)
        assert result.stats == {"accepted": 10, "unresolved": 0, "no_knowledge": 0, "total": 10}
        assert len(result.updated) == 10
        assert result.updated.variant == "updated"
        assert len(result.semantic) == 10
        assert result.semantic.variant == "semantic"

    def test_labels_and_ids_preserved(self, gdelt):
        dataset = make_dataset(TaskKind.EMOTION, 10)
        result = run(dataset, gdelt)
        for original, updated in zip(dataset.samples, result.updated.samples):
            assert updated.id == original.id
            assert updated.label == original.label
            assert updated.text_primary != original.text_primary

    def test_no_knowledge_routing(self, gdelt):
        dataset = make_dataset(TaskKind.EMOTION, 10, markers={2: "ghost", 7: "ghost"})
        result = run(dataset, gdelt)
        assert result.stats["no_knowledge"] == 2
        assert result.stats["accepted"] == 8
        updated_ids = set(result.updated.ids())
        semantic_ids = set(result.semantic.ids())
        for idx in (2, 7):
            sid = dataset.samples[idx].id
            assert sid not in updated_ids  # joins the semantic set only
            assert sid in semantic_ids

    def test_unresolved_routing(self, gdelt):
        dataset = make_dataset(TaskKind.EMOTION, 10, markers={3: "cursed"})
        result = run(dataset, gdelt)
        assert result.stats["unresolved"] == 1
        assert result.stats["accepted"] == 9
        record = result.provenance[3]
        assert record["status"] == "unresolved"
        assert len(record["reflection"]) == 3  # max_rounds attempts logged

    def test_always_fail_reflection(self, gdelt):
        dataset = make_dataset(TaskKind.EMOTION, 10)
        result = run(dataset, gdelt, always_fail=True)
        assert result.stats == {"accepted": 0, "unresolved": 10, "no_knowledge": 0, "total": 10}
        assert len(result.updated) == 0

    def test_conservation_mixed(self, gdelt):
        dataset = make_dataset(TaskKind.EMOTION, 30, markers={1: "ghost", 5: "cursed", 9: "ghost"})
        result = run(dataset, gdelt)
        stats = result.stats
        assert stats["accepted"] + stats["unresolved"] + stats["no_knowledge"] == 30
        assert stats["no_knowledge"] == 2
        assert stats["unresolved"] == 1

    def test_provenance_chain_complete_for_accepted(self, gdelt):
        dataset = make_dataset(TaskKind.EMOTION, 6)
        result = run(dataset, gdelt)
        for record in result.provenance:
            assert record["status"] == "accepted"
            assert record["entities"]
            assert record["records"]
            assert record["summary"]
            assert record["triples"]
            assert record["updates"]
            assert record["d_u"]["text"]
            assert record["d_s"]["text"]
            assert record["d_hat"]["text"]
            assert record["reflection"]
            assert record["reflection"][-1]["decision"] == "accept"

    def test_parallelism_identical_output(self, gdelt):
        dataset = make_dataset(TaskKind.EMOTION, 20, markers={2: "ghost", 11: "cursed"})
        serial = run(dataset, gdelt, parallelism=1)
        parallel = run(dataset, gdelt, parallelism=8)
        assert serial.updated == parallel.updated
        assert serial.semantic == parallel.semantic
        assert json.dumps(serial.provenance, sort_keys=True) == json.dumps(parallel.provenance, sort_keys=True)
        assert serial.stats == parallel.stats

    def test_pair_task_pipeline(self, gdelt):
        dataset = make_dataset(TaskKind.MRPC, 4)
        result = run(dataset, gdelt)
        assert result.stats["accepted"] == 4
        for sample in result.updated.samples:
            assert sample.text_secondary
        record = result.provenance[0]
        assert record["d_hat"]["text2"]

    def test_widened_window_recovers(self, tmp_path):
        # records fall before the configured window; the doubled-back
        # window picks them up
        records = [
            {"date": "2024-12-20", "title": "Acme Corp early note", "url": "u1"},
            {"date": "2024-12-25", "title": "Widget early note", "url": "u2"},
        ]
        path = tmp_path / "early.json"
        write_fixture(records, path)
        dataset = make_dataset(TaskKind.EMOTION, 2)
        window = TimeWindow(dt.date(2025, 1, 1), dt.date(2025, 1, 31))
        gateway = Gateway(MockBackend(rules=pipeline_rules()))
        config = PipelineConfig(window=window, parallelism=1)
        result = update_dataset(dataset, gateway, FixtureGdeltClient(path), PACK, config)
        assert result.stats["accepted"] == 2
        # span 30d doubled back from t_end: 2025-01-31 minus 60 days
        assert result.provenance[0]["window"]["t_start"] == "2024-12-02"

    def test_retrieval_failure_binned_not_fatal(self):
        class FailingClient:
            def fetch(self, entities, window):
                from coreeval.errors import RetrievalError

                raise RetrievalError("boom")

        dataset = make_dataset(TaskKind.EMOTION, 3)
        gateway = Gateway(MockBackend(rules=pipeline_rules()))
        result = update_dataset(
            dataset, gateway, FailingClient(), PACK, PipelineConfig(window=WINDOW)
        )
        assert result.stats == {"accepted": 0, "unresolved": 0, "no_knowledge": 3, "total": 3}
        assert all("retrieval failed" in p["error"] for p in result.provenance)

    def test_backend_transport_failure_binned_not_fatal(self, gdelt):
        from coreeval.errors import TransportError

        class DeadBackend:
            backend_id = "dead"

            def complete(self, request):
                raise TransportError("offline", status=503)

        dataset = make_dataset(TaskKind.EMOTION, 2)
        result = update_dataset(
            dataset, Gateway(DeadBackend()), gdelt, PACK, PipelineConfig(window=WINDOW)
        )
        # entity extraction never returned, so no knowledge was obtained
        assert result.stats["no_knowledge"] == 2
        assert result.stats["accepted"] + result.stats["unresolved"] + result.stats["no_knowledge"] == 2
        assert len(result.semantic) == 0  # fallback rewrite also failed; logged, omitted

    def test_rejects_non_original_variant(self, gdelt):
        dataset = make_dataset(TaskKind.EMOTION, 2)
        semantic = type(dataset)(
            task=dataset.task, split=dataset.split, samples=dataset.samples, variant="semantic"
        )
        gateway = Gateway(MockBackend(rules=pipeline_rules()))
        with pytest.raises(Exception):
            update_dataset(semantic, gateway, gdelt, PACK, PipelineConfig(window=WINDOW))
