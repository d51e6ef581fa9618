import datetime as dt

import pytest

from conftest import make_sample
from coreeval.datamodel import TaskKind
from coreeval.errors import ValidationError, VerdictError
from coreeval.gateway import Gateway, MockBackend, MockRule
from coreeval.knowledge import KnowledgeSummary, TimeWindow
from coreeval.prompts import load_template_pack
from coreeval.recontext import CandidateText, Triple, TripleUpdate
from coreeval.reflection import (
    ReflectionConfig,
    ReflectionContext,
    ReflectionVerdict,
    check_incorrect_information,
    check_label_alignment,
    parse_verdict,
    reflect_and_refine,
)

PACK = load_template_pack()
WINDOW = TimeWindow(dt.date(2025, 1, 1), dt.date(2025, 3, 31))
SUMMARY = KnowledgeSummary(text="Harris held a rally in March.", record_count=2, window=WINDOW)
UPDATES = [
    TripleUpdate(
        original=Triple("Clinton", "delivered", "speech"),
        replacement=Triple("Harris", "held", "rally"),
    )
]


def context(candidate_text: str | None, failure: str | None = None) -> ReflectionContext:
    candidate = None
    if candidate_text is not None:
        candidate = CandidateText(stage="final", text=candidate_text)
    return ReflectionContext(
        summary=SUMMARY,
        updates=UPDATES,
        substituted=CandidateText(stage="substituted", text="sub draft Harris rally"),
        semantic=CandidateText(stage="semantic", text="style ref"),
        candidate=candidate,
        synthesis_failure=failure,
    )


class TestParseVerdict:
    def test_json_verdict(self):
        assert parse_verdict('{"pass": true, "rationale": "consistent"}') == (True, "consistent")

    def test_json_false(self):
        ok, rationale = parse_verdict('thinking...\n{"pass": false, "rationale": "date wrong"}')
        assert ok is False and rationale == "date wrong"

    def test_yes_no_fallback(self):
        ok, rationale = parse_verdict("No — the date contradicts the summary")
        assert ok is False
        assert rationale == "No — the date contradicts the summary"

    def test_yes_token(self):
        assert parse_verdict("Yes, looks fine")[0] is True

    def test_unparseable(self):
        with pytest.raises(VerdictError):
            parse_verdict("maybe")

    def test_non_bool_pass_field(self):
        with pytest.raises(VerdictError):
            parse_verdict('{"pass": 0.7}')


class TestVerdictInvariant:
    def test_accept_requires_both(self):
        with pytest.raises(ValidationError):
            ReflectionVerdict(factuality_ok=True, label_ok=False, rationale="r", decision="accept")

    def test_from_checks(self):
        verdict = ReflectionVerdict.from_checks(True, True, "r")
        assert verdict.decision == "accept"
        assert ReflectionVerdict.from_checks(True, False, "r").decision == "regenerate"


class TestChecks:
    def test_factuality_pass(self):
        gateway = Gateway(MockBackend(default='{"pass": true, "rationale": "consistent"}'))
        ok, rationale = check_incorrect_information(
            CandidateText(stage="final", text="t"), SUMMARY, gateway, PACK
        )
        assert ok is True and rationale == "consistent"

    def test_label_fail(self):
        gateway = Gateway(MockBackend(default='{"pass": false, "rationale": "reads as against"}'))
        ok, rationale = check_label_alignment(
            CandidateText(stage="final", text="t"), "favor", TaskKind.STANCE, gateway, PACK, target="X"
        )
        assert ok is False and "against" in rationale

    def test_config_bounds(self):
        with pytest.raises(ValidationError):
            ReflectionConfig(max_rounds=0)


def scripted_gateway(rules) -> tuple[Gateway, MockBackend]:
    backend = MockBackend(rules=rules)
    return Gateway(backend), backend


class TestReflectLoop:
    def fail_fail_pass_rules(self):
        # v1 fails with rationale r1; synthesis sees r1 -> v2; v2 fails with r2;
        # synthesis sees r2 -> v3; v3 passes. All matching is on prompt content,
        # so the mock stays a pure function of the request.
        return [
            MockRule(template_id="step_reflection_factuality", contains="v3", response='{"pass": true, "rationale": "ok"}'),
            MockRule(template_id="step_reflection_factuality", contains="v2", response='{"pass": false, "rationale": "r2"}'),
            MockRule(template_id="step_reflection_factuality", contains="v1", response='{"pass": false, "rationale": "r1"}'),
            MockRule(template_id="step_reflection_label", response='{"pass": true, "rationale": "label ok"}'),
            MockRule(template_id="step_synthesis", contains="r2", response="v3 Harris rally"),
            MockRule(template_id="step_synthesis", contains="r1", response="v2 Harris rally"),
        ]

    def test_fail_fail_pass_three_attempts(self):
        sample = make_sample(TaskKind.EMOTION, 1)
        gateway, backend = scripted_gateway(self.fail_fail_pass_rules())
        outcome = reflect_and_refine(sample, context("v1 Harris rally"), ReflectionConfig(3), gateway, PACK)
        assert outcome.accepted is True
        assert outcome.attempts == 3
        # two regenerations inside the loop; attempt 1 happened upstream
        assert backend.calls_by_template.get("step_synthesis", 0) == 2
        assert [r.decision for r in outcome.rounds] == ["regenerate", "regenerate", "accept"]
        assert outcome.sample.label == sample.label
        assert outcome.sample.id == sample.id
        assert outcome.sample.text_primary == "v3 Harris rally"

    def test_always_fail_unresolved_after_max_rounds(self):
        sample = make_sample(TaskKind.EMOTION, 1)
        rules = [
            MockRule(template_id="step_reflection_factuality", response='{"pass": false, "rationale": "never"}'),
            MockRule(template_id="step_reflection_label", response='{"pass": true, "rationale": "fine"}'),
            MockRule(template_id="step_synthesis", response="retry Harris rally"),
        ]
        gateway, backend = scripted_gateway(rules)
        outcome = reflect_and_refine(sample, context("v1 Harris rally"), ReflectionConfig(3), gateway, PACK)
        assert outcome.accepted is False
        assert outcome.attempts == 3
        assert outcome.unresolved.id == sample.id
        assert len(outcome.rounds) == 3
        assert backend.calls_by_template.get("step_synthesis", 0) == 2  # no 4th attempt
        assert len(outcome.unresolved.last_rationales) == 3

    def test_pass_first_single_attempt(self):
        sample = make_sample(TaskKind.EMOTION, 1)
        rules = [
            MockRule(template_id="step_reflection_factuality", response='{"pass": true, "rationale": "ok"}'),
            MockRule(template_id="step_reflection_label", response='{"pass": true, "rationale": "ok"}'),
        ]
        gateway, backend = scripted_gateway(rules)
        outcome = reflect_and_refine(sample, context("v1 Harris rally"), ReflectionConfig(3), gateway, PACK)
        assert outcome.accepted is True
        assert outcome.attempts == 1
        assert backend.calls_by_template.get("step_synthesis", 0) == 0

    def test_unparseable_verdict_counts_as_failed_round(self):
        sample = make_sample(TaskKind.EMOTION, 1)
        rules = [
            MockRule(template_id="step_reflection_factuality", response="maybe"),
            MockRule(template_id="step_reflection_label", response='{"pass": true, "rationale": "ok"}'),
            MockRule(template_id="step_synthesis", response="retry Harris rally"),
        ]
        gateway, _ = scripted_gateway(rules)
        outcome = reflect_and_refine(sample, context("v1 Harris rally"), ReflectionConfig(2), gateway, PACK)
        assert outcome.accepted is False
        assert "unparseable factuality verdict" in outcome.rounds[0].rationale

    def test_initial_synthesis_failure_consumes_round_one(self):
        sample = make_sample(TaskKind.EMOTION, 1)
        rules = [
            MockRule(template_id="step_reflection_factuality", response='{"pass": true, "rationale": "ok"}'),
            MockRule(template_id="step_reflection_label", response='{"pass": true, "rationale": "ok"}'),
            MockRule(template_id="step_synthesis", response="recovered Harris rally"),
        ]
        gateway, backend = scripted_gateway(rules)
        outcome = reflect_and_refine(
            sample, context(None, failure="missing surface 'rally'"), ReflectionConfig(3), gateway, PACK
        )
        assert outcome.accepted is True
        assert outcome.attempts == 2
        assert outcome.rounds[0].decision == "regenerate"
        assert "synthesis failed" in outcome.rounds[0].rationale

    def test_empty_candidate_fails_round(self):
        sample = make_sample(TaskKind.EMOTION, 1)
        rules = [
            MockRule(template_id="step_reflection_factuality", response='{"pass": true, "rationale": "ok"}'),
            MockRule(template_id="step_reflection_label", response='{"pass": true, "rationale": "ok"}'),
        ]
        gateway, _ = scripted_gateway(rules)
        outcome = reflect_and_refine(sample, context(""), ReflectionConfig(1), gateway, PACK)
        assert outcome.accepted is False
        assert "empty" in outcome.rounds[0].rationale

    def test_attempts_always_within_bounds(self):
        sample = make_sample(TaskKind.EMOTION, 1)
        for max_rounds in (1, 2, 3, 5):
            rules = [
                MockRule(template_id="step_reflection_factuality", response='{"pass": false, "rationale": "no"}'),
                MockRule(template_id="step_reflection_label", response='{"pass": false, "rationale": "no"}'),
                MockRule(template_id="step_synthesis", response="retry Harris rally"),
            ]
            gateway, _ = scripted_gateway(rules)
            outcome = reflect_and_refine(
                sample, context("v1 Harris rally"), ReflectionConfig(max_rounds), gateway, PACK
            )
            assert 1 <= outcome.attempts <= max_rounds
            assert outcome.attempts == max_rounds
