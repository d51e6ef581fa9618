"""Shared builders: sample/dataset factories, the scripted pipeline mock,
and GDELT fixture records."""

from __future__ import annotations

import json
import random

import pytest

from coreeval.datamodel import LABEL_SPACES, Dataset, Sample, TaskKind
from coreeval.gateway import Gateway, MockBackend, MockRule

WINDOW_START = "2025-01-01"
WINDOW_END = "2025-03-31"

SUMMARY_TEXT = "Acme Corp acquired BetaSoft in February 2025 and rebranded Widget as Gizmo."


def make_sample(task: TaskKind, idx: int, label: str | None = None, text: str | None = None) -> Sample:
    space = LABEL_SPACES[task]
    label = label or space[idx % len(space)]
    text = text or f"Sample {idx} reports that Acme Corp launched Widget."
    return Sample(
        id=f"{task.value}-{idx:03d}",
        task=task,
        text_primary=text,
        label=label,
        text_secondary=f"Companion sentence {idx} about Acme Corp." if task in (TaskKind.MRPC, TaskKind.RTE) else None,
        target="Acme Corp" if task is TaskKind.STANCE else None,
    )


def make_dataset(task: TaskKind, n: int, split: str = "test", markers: dict[int, str] | None = None) -> Dataset:
    """Build n samples; ``markers`` maps sample index -> extra token woven
    into the text (used to route scripted mock rules)."""
    markers = markers or {}
    samples = []
    for i in range(n):
        text = f"Sample {i} reports that Acme Corp launched Widget."
        if i in markers:
            text = f"Sample {i} {markers[i]} reports that Acme Corp launched Widget."
        samples.append(make_sample(task, i, text=text))
    return Dataset(task=task, split=split, samples=tuple(samples))


def fixture_records() -> list[dict]:
    """In-window records mentioning the scripted entities, plus one stale
    record outside the window."""
    return [
        {"date": "2025-02-10", "title": "Acme Corp completes BetaSoft acquisition", "url": "https://news.example/a", "tone": 1.5},
        {"date": "2025-02-11", "title": "Widget rebrand announced by Acme Corp", "url": "https://news.example/b", "tone": 0.3},
        {"date": "2025-01-20", "title": "Widget sales beat estimates", "url": "https://news.example/c"},
        {"date": "2024-11-01", "title": "Acme Corp quarterly report", "url": "https://news.example/stale"},
    ]


def pipeline_rules(always_fail_reflection: bool = False) -> list[MockRule]:
    """Scripted responses for every pipeline step.

    Sample texts containing "ghost" extract an entity no fixture record
    mentions (-> no_knowledge); texts containing "cursed" synthesize a
    candidate the factuality check always rejects (-> unresolved).
    """
    pair_rewrite = json.dumps({"text": "Styled first text about Acme Corp.", "text2": "Styled second text about Acme Corp."})
    pair_final = json.dumps({"text": "Updated first text: Acme Corp acquired BetaSoft.", "text2": "Updated second text mentioning Gizmo."})
    rules = [
        MockRule(template_id="step_entity_extraction", contains="ghost", response='["Zzyzx Phantom"]'),
        MockRule(template_id="step_entity_extraction", response='["Acme Corp", "Widget"]'),
        MockRule(template_id="step_knowledge_summary", response=SUMMARY_TEXT),
        MockRule(template_id="step_triple_extraction", response='[["Acme Corp", "launched", "Widget"]]'),
        MockRule(template_id="step_triple_update", response='[["Acme Corp", "acquired", "BetaSoft"]]'),
        MockRule(template_id="step_semantic_rewrite", response="A styled note about Acme Corp and its product line."),
        MockRule(template_id="step_semantic_rewrite_pair", response=pair_rewrite),
        MockRule(template_id="step_synthesis", contains="cursed", response="Cursed update: Acme Corp acquired BetaSoft."),
        MockRule(template_id="step_synthesis", response="Fresh update: Acme Corp acquired BetaSoft."),
        MockRule(template_id="step_synthesis_pair", response=pair_final),
    ]
    if always_fail_reflection:
        rules += [
            MockRule(template_id="step_reflection_factuality", response='{"pass": false, "rationale": "scripted rejection"}'),
            MockRule(template_id="step_reflection_label", response='{"pass": true, "rationale": "label fine"}'),
        ]
    else:
        rules += [
            MockRule(template_id="step_reflection_factuality", contains="Cursed", response='{"pass": false, "rationale": "contradicts the summary"}'),
            MockRule(template_id="step_reflection_factuality", response='{"pass": true, "rationale": "consistent with the summary"}'),
            MockRule(template_id="step_reflection_label", response='{"pass": true, "rationale": "label preserved"}'),
        ]
    return rules


def pipeline_script_payload(always_fail_reflection: bool = False) -> dict:
    """The same scripted rules, as a JSON payload for the CLI mock backend."""
    return {
        "rules": [
            {"template_id": rule.template_id, "contains": rule.contains, "response": rule.response}
            for rule in pipeline_rules(always_fail_reflection)
        ]
    }


@pytest.fixture
def pipeline_gateway() -> Gateway:
    return Gateway(MockBackend(rules=pipeline_rules()))


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20250808)


def random_text(rng: random.Random) -> str:
    words = ["alpha", "beta", "Paris", "vote", "café", "naïve", "東京", "🚀", "data", "storm"]
    return " ".join(rng.choice(words) for _ in range(rng.randint(1, 8)))


def random_sample(rng: random.Random, task: TaskKind, idx: int) -> Sample:
    space = LABEL_SPACES[task]
    return Sample(
        id=f"r{idx:04d}",
        task=task,
        text_primary=random_text(rng),
        label=rng.choice(space),
        text_secondary=random_text(rng) if task in (TaskKind.MRPC, TaskKind.RTE) else None,
        target=random_text(rng) if task is TaskKind.STANCE else None,
    )


def random_dataset(rng: random.Random, task: TaskKind | None = None, n: int | None = None) -> Dataset:
    task = task or rng.choice(list(TaskKind))
    n = n if n is not None else rng.randint(1, 20)
    return Dataset(
        task=task,
        split=rng.choice(["train", "test"]),
        samples=tuple(random_sample(rng, task, i) for i in range(n)),
    )
