"""Data reflection: verify factual consistency and label alignment of a
final candidate, and regenerate with the reviewer's rationale until it
passes or the round budget runs out.

Labels are verified, never rewritten; a candidate that cannot be made to
pass is excluded from the updated dataset rather than reverted to the
original (reverting would re-admit potentially contaminated text).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .datamodel import Sample, label_space
from .errors import SynthesisError, ValidationError, VerdictError
from .gateway import build_request
from .jsonparse import parse_json_object
from .knowledge import KnowledgeSummary
from .prompts import TemplatePack, render_step
from .recontext import CandidateText, TripleUpdate, synthesize_updated_text

_YES_NO_RE = re.compile(r"^\W*(yes|no)\b", re.IGNORECASE)


@dataclass(frozen=True)
class ReflectionVerdict:
    factuality_ok: bool
    label_ok: bool
    rationale: str
    decision: str

    def __post_init__(self):
        expected = "accept" if (self.factuality_ok and self.label_ok) else "regenerate"
        if self.decision != expected:
            raise ValidationError(
                f"decision {self.decision!r} contradicts check results "
                f"(factuality={self.factuality_ok}, label={self.label_ok})"
            )

    @classmethod
    def from_checks(cls, factuality_ok: bool, label_ok: bool, rationale: str) -> "ReflectionVerdict":
        return cls(
            factuality_ok=factuality_ok,
            label_ok=label_ok,
            rationale=rationale,
            decision="accept" if (factuality_ok and label_ok) else "regenerate",
        )


@dataclass(frozen=True)
class ReflectionConfig:
    max_rounds: int = 3

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be >= 1")


@dataclass(frozen=True)
class ReflectionRound:
    round: int
    factuality_ok: bool
    label_ok: bool
    rationale: str
    decision: str

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "factuality_ok": self.factuality_ok,
            "label_ok": self.label_ok,
            "rationale": self.rationale,
            "decision": self.decision,
        }


@dataclass(frozen=True)
class Unresolved:
    id: str
    last_rationales: tuple[str, ...]


@dataclass
class ReflectionContext:
    """Everything the loop needs to re-run synthesis: the precursors of
    the final text plus the current candidate. ``candidate`` may be None
    when the initial synthesis already failed its containment check; the
    failure message then seeds round one."""

    summary: KnowledgeSummary
    updates: list[TripleUpdate]
    substituted: CandidateText
    semantic: CandidateText
    candidate: CandidateText | None
    synthesis_failure: str | None = None


@dataclass(frozen=True)
class ReflectionOutcome:
    accepted: bool
    rounds: tuple[ReflectionRound, ...]
    attempts: int
    sample: Sample | None = None
    unresolved: Unresolved | None = None
    candidate: CandidateText | None = None


def parse_verdict(raw: str) -> tuple[bool, str]:
    """Parse a reviewer verdict.

    Primary form: a JSON object with a boolean "pass" and a "rationale".
    Fallback: a leading yes/no token, with the full text as rationale.
    """
    obj = parse_json_object(raw)
    if obj is not None and "pass" in obj:
        value = obj["pass"]
        if isinstance(value, bool):
            ok = value
        elif isinstance(value, str) and value.strip().lower() in {"yes", "no", "true", "false"}:
            ok = value.strip().lower() in {"yes", "true"}
        else:
            raise VerdictError(f"verdict 'pass' field is not a boolean: {value!r}", raw=raw)
        rationale = str(obj.get("rationale") or "").strip() or raw.strip()
        return ok, rationale
    match = _YES_NO_RE.match(raw.strip())
    if match:
        return match.group(1).lower() == "yes", raw.strip()
    raise VerdictError("verdict is neither pass/rationale JSON nor a yes/no answer", raw=raw)


def check_incorrect_information(
    candidate: CandidateText,
    summary: KnowledgeSummary,
    gateway,
    pack: TemplatePack,
) -> tuple[bool, str]:
    """Does the candidate accurately reflect the retrieved knowledge?"""
    prompt = render_step(
        pack.step("step_reflection_factuality"),
        {
            "candidate": candidate.text,
            "candidate2": candidate.pair_second or "",
            "summary": summary.text,
        },
    )
    response = gateway(
        build_request(gateway, "step_reflection_factuality", prompt)
    )
    return parse_verdict(response.text)


def check_label_alignment(
    candidate: CandidateText,
    label: str,
    task,
    gateway,
    pack: TemplatePack,
    target: str = "",
) -> tuple[bool, str]:
    """Does the candidate still read as its gold label?"""
    prompt = render_step(
        pack.step("step_reflection_label"),
        {
            "candidate": candidate.text,
            "candidate2": candidate.pair_second or "",
            "label": label,
            "label_space": ", ".join(label_space(task)),
            "task": task.value,
            "target": target,
        },
    )
    response = gateway(
        build_request(gateway, "step_reflection_label", prompt)
    )
    return parse_verdict(response.text)


def _vet_candidate(
    sample: Sample, candidate: CandidateText, context: ReflectionContext, gateway, pack
) -> tuple[bool, bool, str]:
    if not candidate.text.strip():
        return False, False, "candidate text is empty"
    try:
        f_ok, f_rationale = check_incorrect_information(candidate, context.summary, gateway, pack)
    except VerdictError as exc:
        f_ok, f_rationale = False, f"unparseable factuality verdict: {exc.raw or exc}"
    try:
        l_ok, l_rationale = check_label_alignment(
            candidate, sample.label, sample.task, gateway, pack, target=sample.target or ""
        )
    except VerdictError as exc:
        l_ok, l_rationale = False, f"unparseable label verdict: {exc.raw or exc}"
    return f_ok, l_ok, f"factuality: {f_rationale} | label: {l_rationale}"


def _as_updated_sample(sample: Sample, candidate: CandidateText) -> Sample:
    return Sample(
        id=sample.id,
        task=sample.task,
        text_primary=candidate.text,
        label=sample.label,
        text_secondary=candidate.pair_second if sample.text_secondary is not None else None,
        target=sample.target,
    )


def reflect_and_refine(
    sample: Sample,
    context: ReflectionContext,
    config: ReflectionConfig,
    gateway,
    pack: TemplatePack,
) -> ReflectionOutcome:
    """Run the verify/regenerate loop.

    Each round vets exactly one synthesis attempt; on rejection the
    verdict rationale is fed back into the next synthesis. After
    ``max_rounds`` failed attempts the sample is Unresolved and excluded
    from the updated dataset.
    """
    rounds: list[ReflectionRound] = []
    candidate = context.candidate
    failure = context.synthesis_failure
    for round_no in range(1, config.max_rounds + 1):
        updated: Sample | None = None
        if candidate is None:
            f_ok, l_ok = False, False
            rationale = f"synthesis failed: {failure}"
        else:
            f_ok, l_ok, rationale = _vet_candidate(sample, candidate, context, gateway, pack)
            if f_ok and l_ok:
                try:
                    updated = _as_updated_sample(sample, candidate)
                except ValidationError as exc:
                    f_ok, l_ok = False, False
                    rationale = f"accepted candidate is not a valid sample: {exc}"
        verdict = ReflectionVerdict.from_checks(f_ok, l_ok, rationale)
        rounds.append(
            ReflectionRound(
                round=round_no,
                factuality_ok=f_ok,
                label_ok=l_ok,
                rationale=rationale,
                decision=verdict.decision,
            )
        )
        if updated is not None:
            return ReflectionOutcome(
                accepted=True,
                rounds=tuple(rounds),
                attempts=round_no,
                sample=updated,
                candidate=candidate,
            )
        if round_no < config.max_rounds:
            try:
                candidate = synthesize_updated_text(
                    sample,
                    context.substituted,
                    context.updates,
                    context.semantic,
                    gateway,
                    pack,
                    feedback=rationale,
                )
                failure = None
            except SynthesisError as exc:
                candidate = None
                failure = str(exc)
    return ReflectionOutcome(
        accepted=False,
        rounds=tuple(rounds),
        attempts=config.max_rounds,
        unresolved=Unresolved(
            id=sample.id, last_rationales=tuple(r.rationale for r in rounds)
        ),
    )
