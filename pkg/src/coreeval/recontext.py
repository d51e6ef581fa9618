"""Knowledge recontextualization: triple extraction, triple updating,
deterministic surface substitution, semantic rewriting, and final text
synthesis.

The replacement operation is deliberately not an LLM call: original
head/tail surface forms are swapped for their replacements by a
deterministic, longest-first, word-boundary, case-insensitive scan, so
the substituted draft is exactly reproducible. The generator only
harmonizes fluency in the synthesis step.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

from .datamodel import Dataset, Sample
from .errors import (
    CoreEvalError,
    ExtractionError,
    SynthesisError,
    UpdateError,
    ValidationError,
)
from .gateway import build_request
from .jsonparse import parse_json_array, parse_json_object
from .knowledge import KnowledgeSummary
from .prompts import TemplatePack, render_step

log = logging.getLogger(__name__)

DEFAULT_MAX_TRIPLES = 5

STAGES = ("substituted", "semantic", "final")


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str

    def __post_init__(self):
        for name, value in (("head", self.head), ("relation", self.relation), ("tail", self.tail)):
            if not value.strip():
                raise ValidationError(f"triple {name} is empty")

    @classmethod
    def from_parts(cls, parts) -> "Triple":
        if len(parts) != 3:
            raise ValidationError(f"triple needs 3 elements, got {len(parts)}")
        return cls(*(str(p).strip() for p in parts))

    def to_list(self) -> list[str]:
        return [self.head, self.relation, self.tail]


@dataclass(frozen=True)
class TripleSet:
    triples: tuple[Triple, ...]
    source_sample: str
    origins: tuple[str, ...] | None = None  # "primary"/"secondary" per triple, pair tasks

    def __post_init__(self):
        if len(set(self.triples)) != len(self.triples):
            raise ValidationError("duplicate triples")
        if self.origins is not None and len(self.origins) != len(self.triples):
            raise ValidationError("origins must align with triples")

    def __len__(self) -> int:
        return len(self.triples)


@dataclass(frozen=True)
class TripleUpdate:
    original: Triple
    replacement: Triple

    def __post_init__(self):
        if self.replacement == self.original:
            raise ValidationError("replacement is identical to the original triple")


@dataclass(frozen=True)
class CandidateText:
    stage: str
    text: str
    pair_second: str | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValidationError(f"stage must be one of {STAGES}, got {self.stage!r}")

    def combined(self) -> str:
        if self.pair_second is None:
            return self.text
        return self.text + "\n" + self.pair_second


def format_triples(triples) -> str:
    return "\n".join(json.dumps(t.to_list(), ensure_ascii=False) for t in triples)


def format_updates(updates: list[TripleUpdate]) -> str:
    return "\n".join(
        json.dumps(u.original.to_list(), ensure_ascii=False)
        + " -> "
        + json.dumps(u.replacement.to_list(), ensure_ascii=False)
        for u in updates
    )


def _parse_triple_list(raw: str) -> list[Triple]:
    parsed = parse_json_array(raw)
    if parsed is not None:
        return [Triple.from_parts(item) for item in parsed]
    triples = []
    for line in raw.splitlines():
        if "|" in line:
            triples.append(Triple.from_parts([p.strip() for p in line.split("|")]))
    if not triples:
        raise ExtractionError("no parseable triples in response", raw=raw)
    return triples


def _extract_from_text(text: str, text2: str, gateway, pack: TemplatePack, max_triples: int) -> list[Triple]:
    prompt = render_step(
        pack.step("step_triple_extraction"),
        {"text": text, "text2": text2, "max_triples": str(max_triples)},
    )
    response = gateway(
        build_request(gateway, "step_triple_extraction", prompt)
    )
    return _parse_triple_list(response.text)


def extract_triples(
    sample: Sample,
    gateway,
    pack: TemplatePack,
    max_triples: int = DEFAULT_MAX_TRIPLES,
) -> TripleSet:
    """Extract relation triples from a sample.

    Pair tasks extract from each sentence separately and tag each
    triple's origin; exact duplicates are dropped and the combined list
    is capped at ``max_triples`` (order preserved).
    """
    gathered: list[tuple[Triple, str]] = []
    for triple in _extract_from_text(sample.text_primary, "", gateway, pack, max_triples):
        gathered.append((triple, "primary"))
    if sample.text_secondary is not None:
        for triple in _extract_from_text(sample.text_secondary, "", gateway, pack, max_triples):
            gathered.append((triple, "secondary"))
    seen: set[Triple] = set()
    triples: list[Triple] = []
    origins: list[str] = []
    for triple, origin in gathered:
        if triple in seen:
            continue
        seen.add(triple)
        triples.append(triple)
        origins.append(origin)
        if len(triples) >= max_triples:
            break
    return TripleSet(
        triples=tuple(triples),
        source_sample=sample.id,
        origins=tuple(origins) if sample.text_secondary is not None else None,
    )


def update_triples(
    triples: TripleSet,
    summary: KnowledgeSummary,
    gateway,
    pack: TemplatePack,
) -> list[TripleUpdate]:
    """Generate one grounded replacement per input triple, aligned by index."""
    if not triples.triples:
        raise ValueError("triple set is empty")
    if summary.record_count <= 0:
        raise ValueError("knowledge summary covers no records")
    prompt = render_step(
        pack.step("step_triple_update"),
        {"triples": format_triples(triples.triples), "summary": summary.text},
    )
    response = gateway(build_request(gateway, "step_triple_update", prompt))
    try:
        replacements = _parse_triple_list(response.text)
    except ExtractionError as exc:
        raise UpdateError(f"unparseable replacement triples: {exc}")
    if len(replacements) != len(triples.triples):
        raise UpdateError(
            f"alignment mismatch: {len(triples.triples)} triples in, "
            f"{len(replacements)} replacements out"
        )
    updates = []
    for i, (original, replacement) in enumerate(zip(triples.triples, replacements)):
        try:
            updates.append(TripleUpdate(original=original, replacement=replacement))
        except ValidationError:
            raise UpdateError(f"replacement at index {i} is identical to its original")
    return updates


@dataclass(frozen=True)
class HitCount:
    head: int = 0
    tail: int = 0

    @property
    def unanchored(self) -> bool:
        return self.head == 0 and self.tail == 0


@dataclass(frozen=True)
class SubstitutionResult:
    candidate: CandidateText
    hits: tuple[HitCount, ...]

    def unanchored_indices(self) -> list[int]:
        return [i for i, h in enumerate(self.hits) if h.unanchored]


class _Substituter:
    """Single-pass, longest-first, case-insensitive, word-boundary
    replacement over the original text. Replaced spans are never
    rescanned, so overlapping surface forms cannot clobber each other."""

    def __init__(self, updates: list[TripleUpdate]):
        entries = []
        for idx, update in enumerate(updates):
            entries.append((update.original.head, update.replacement.head, idx, "head"))
            entries.append((update.original.tail, update.replacement.tail, idx, "tail"))
        order = sorted(range(len(entries)), key=lambda j: (-len(entries[j][0]), j))
        self._by_key: dict[str, tuple[str, int, str]] = {}
        patterns: list[str] = []
        for j in order:
            surface, replacement, idx, fld = entries[j]
            key = surface.lower()
            if key in self._by_key:
                continue
            self._by_key[key] = (replacement, idx, fld)
            self._by_key.setdefault(surface.casefold(), (replacement, idx, fld))
            patterns.append(re.escape(surface))
        self._regex = (
            re.compile(r"(?<!\w)(?:" + "|".join(patterns) + r")(?!\w)", re.IGNORECASE)
            if patterns
            else None
        )
        self.counts: dict[tuple[int, str], int] = {}

    def apply(self, text: str) -> str:
        if self._regex is None:
            return text

        def repl(match: re.Match) -> str:
            matched = match.group(0)
            entry = self._by_key.get(matched.lower()) or self._by_key.get(matched.casefold())
            if entry is None:  # unicode casing oddity; leave untouched
                return matched
            replacement, idx, fld = entry
            self.counts[(idx, fld)] = self.counts.get((idx, fld), 0) + 1
            return replacement

        return self._regex.sub(repl, text)


def substitute_triples(sample: Sample, updates: list[TripleUpdate]) -> SubstitutionResult:
    """Apply the replacement operation to the sample text(s).

    Every case-insensitive, word-boundary occurrence of an original head
    or tail is replaced by its counterpart, longest original surface
    first. Relations are never surface-substituted. Zero hits are
    allowed; such updates are flagged unanchored for the synthesis step.
    """
    if not updates:
        raise ValueError("no triple updates to apply")
    sub = _Substituter(updates)
    text = sub.apply(sample.text_primary)
    pair_second = sub.apply(sample.text_secondary) if sample.text_secondary is not None else None
    hits = tuple(
        HitCount(head=sub.counts.get((i, "head"), 0), tail=sub.counts.get((i, "tail"), 0))
        for i in range(len(updates))
    )
    return SubstitutionResult(
        candidate=CandidateText(stage="substituted", text=text, pair_second=pair_second),
        hits=hits,
    )


def _parse_pair_output(raw: str) -> tuple[str, str]:
    obj = parse_json_object(raw)
    if obj is not None:
        for k1, k2 in (("text", "text2"), ("sentence1", "sentence2"), ("premise", "hypothesis")):
            if k1 in obj and k2 in obj:
                return str(obj[k1]).strip(), str(obj[k2]).strip()
    parts = re.split(r"\n\s*\n", raw.strip(), maxsplit=1)
    if len(parts) == 2:
        return parts[0].strip(), parts[1].strip()
    return raw.strip(), ""


def semantic_rewrite(
    sample: Sample,
    triples: TripleSet,
    gateway,
    pack: TemplatePack,
) -> CandidateText:
    """Restate the sample in a new style while preserving its triples.

    Pair tasks rewrite both sentences in one call. An empty response
    yields an empty-text candidate (rejected downstream), not an error.
    """
    if sample.text_secondary is not None:
        prompt = render_step(
            pack.step("step_semantic_rewrite_pair"),
            {
                "text": sample.text_primary,
                "text2": sample.text_secondary,
                "triples": format_triples(triples.triples),
            },
        )
        response = gateway(
            build_request(gateway, "step_semantic_rewrite_pair", prompt)
        )
        first, second = _parse_pair_output(response.text)
        return CandidateText(stage="semantic", text=first, pair_second=second)
    prompt = render_step(
        pack.step("step_semantic_rewrite"),
        {"text": sample.text_primary, "triples": format_triples(triples.triples)},
    )
    response = gateway(
        build_request(gateway, "step_semantic_rewrite", prompt)
    )
    return CandidateText(stage="semantic", text=response.text.strip(), pair_second=None)


def synthesize_updated_text(
    sample: Sample,
    substituted: CandidateText,
    updates: list[TripleUpdate],
    semantic: CandidateText,
    gateway,
    pack: TemplatePack,
    feedback: str = "",
) -> CandidateText:
    """Produce the final updated text from the substituted draft, the
    replacement triples, and the semantic style reference.

    Enforces that every replacement head and tail surface form appears
    (case-insensitive) in the output; the carried label is always the
    original sample's label, copied by the caller, never generated.
    """
    if sample.text_secondary is not None:
        prompt = render_step(
            pack.step("step_synthesis_pair"),
            {
                "text": sample.text_primary,
                "text2": sample.text_secondary,
                "substituted": substituted.text,
                "substituted2": substituted.pair_second or "",
                "updates": format_updates(updates),
                "semantic": semantic.text,
                "semantic2": semantic.pair_second or "",
                "feedback": feedback or "(none)",
            },
        )
        response = gateway(
            build_request(gateway, "step_synthesis_pair", prompt)
        )
        first, second = _parse_pair_output(response.text)
        candidate = CandidateText(stage="final", text=first, pair_second=second)
    else:
        prompt = render_step(
            pack.step("step_synthesis"),
            {
                "text": sample.text_primary,
                "substituted": substituted.text,
                "updates": format_updates(updates),
                "semantic": semantic.text,
                "feedback": feedback or "(none)",
            },
        )
        response = gateway(build_request(gateway, "step_synthesis", prompt))
        candidate = CandidateText(stage="final", text=response.text.strip(), pair_second=None)

    haystack = candidate.combined().lower()
    missing = []
    for update in updates:
        for surface in (update.replacement.head, update.replacement.tail):
            if surface.lower() not in haystack:
                missing.append(surface)
    if missing:
        raise SynthesisError(
            "synthesized text is missing replacement surface forms: "
            + ", ".join(sorted(set(missing)))
        )
    return candidate


def build_semantic_dataset(
    dataset: Dataset,
    gateway,
    pack: TemplatePack,
    max_triples: int = DEFAULT_MAX_TRIPLES,
) -> Dataset:
    """Rewrite every sample for style only; ids and labels are preserved.

    Samples whose rewrite fails are logged and omitted.
    """
    if dataset.variant != "original":
        raise ValueError("semantic datasets are built from the original variant")
    rewritten: list[Sample] = []
    for sample in dataset.samples:
        try:
            try:
                triples = extract_triples(sample, gateway, pack, max_triples=max_triples)
            except ExtractionError:
                triples = TripleSet(triples=(), source_sample=sample.id)
            candidate = semantic_rewrite(sample, triples, gateway, pack)
            rewritten.append(
                Sample(
                    id=sample.id,
                    task=sample.task,
                    text_primary=candidate.text,
                    label=sample.label,
                    text_secondary=candidate.pair_second if sample.text_secondary is not None else None,
                    target=sample.target,
                )
            )
        except CoreEvalError as exc:
            log.warning("semantic rewrite failed for %s: %s", sample.id, exc)
    return Dataset(
        task=dataset.task,
        split=dataset.split,
        samples=tuple(rewritten),
        variant="semantic",
    )
