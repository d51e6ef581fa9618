"""End-to-end per-sample update flow: entities -> retrieval -> summary ->
triples -> replacements -> substitution -> semantic rewrite -> synthesis
-> reflection.

Every sample lands in exactly one of three bins — accepted, unresolved,
or no_knowledge — so accepted + unresolved + no_knowledge always equals
the input size. Retrieval misses are retried once on a backward-doubled
window, then routed to the semantic-rewrite-only path (the sample joins
the semantic dataset but not the updated one). Failures after knowledge
was found count as unresolved, with the error recorded in provenance.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .datamodel import Dataset, Sample
from .errors import CoreEvalError, ExtractionError, SynthesisError, ValidationError
from .knowledge import (
    DEFAULT_MAX_ENTITIES,
    DEFAULT_MAX_RECORDS,
    TimeWindow,
    extract_entities,
    query_gdelt,
    summarize_knowledge,
)
from .prompts import TemplatePack
from .recontext import (
    DEFAULT_MAX_TRIPLES,
    CandidateText,
    TripleSet,
    extract_triples,
    semantic_rewrite,
    substitute_triples,
    synthesize_updated_text,
    update_triples,
)
from .reflection import ReflectionConfig, ReflectionContext, reflect_and_refine

log = logging.getLogger(__name__)

STATUSES = ("accepted", "unresolved", "no_knowledge")


@dataclass(frozen=True)
class PipelineConfig:
    window: TimeWindow
    max_entities: int = DEFAULT_MAX_ENTITIES
    max_records: int = DEFAULT_MAX_RECORDS
    max_triples: int = DEFAULT_MAX_TRIPLES
    max_rounds: int = 3
    parallelism: int = 1

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValidationError("parallelism must be >= 1")
        if self.max_entities < 1 or self.max_records < 1 or self.max_triples < 1:
            raise ValidationError("pipeline caps must be >= 1")


@dataclass(frozen=True)
class SampleOutcome:
    status: str
    provenance: dict
    updated: Sample | None = None
    semantic: Sample | None = None


@dataclass(frozen=True)
class UpdateResult:
    updated: Dataset
    semantic: Dataset
    provenance: list[dict]
    stats: dict


def _candidate_json(candidate: CandidateText | None) -> dict | None:
    if candidate is None:
        return None
    return {"text": candidate.text, "text2": candidate.pair_second}


def _semantic_to_sample(sample: Sample, candidate: CandidateText) -> Sample | None:
    try:
        return Sample(
            id=sample.id,
            task=sample.task,
            text_primary=candidate.text,
            label=sample.label,
            text_secondary=candidate.pair_second if sample.text_secondary is not None else None,
            target=sample.target,
        )
    except ValidationError as exc:
        log.warning("sample=%s stage=semantic invalid rewrite: %s", sample.id, exc)
        return None


def process_sample(
    sample: Sample,
    gateway,
    gdelt_client,
    pack: TemplatePack,
    config: PipelineConfig,
) -> SampleOutcome:
    provenance: dict = {
        "id": sample.id,
        "entities": [],
        "window": config.window.to_json(),
        "records": [],
        "summary": "",
        "triples": [],
        "updates": [],
        "d_u": None,
        "d_s": None,
        "d_hat": None,
        "reflection": [],
        "status": "",
        "error": None,
    }

    semantic_sample: Sample | None = None

    def no_knowledge(reason: str) -> SampleOutcome:
        provenance["status"] = "no_knowledge"
        provenance["error"] = reason
        fallback = None
        try:
            candidate = semantic_rewrite(
                sample, TripleSet(triples=(), source_sample=sample.id), gateway, pack
            )
            provenance["d_s"] = _candidate_json(candidate)
            fallback = _semantic_to_sample(sample, candidate)
        except CoreEvalError as exc:
            log.warning("sample=%s stage=semantic fallback failed: %s", sample.id, exc)
        log.info("sample=%s stage=done status=no_knowledge", sample.id)
        return SampleOutcome(status="no_knowledge", provenance=provenance, semantic=fallback)

    def unresolved(reason: str) -> SampleOutcome:
        provenance["status"] = "unresolved"
        provenance["error"] = reason
        log.info("sample=%s stage=done status=unresolved", sample.id)
        return SampleOutcome(status="unresolved", provenance=provenance, semantic=semantic_sample)

    # failures before any knowledge is in hand take the semantic-only
    # route; failures after that count as unresolved
    try:
        entities = extract_entities(sample, gateway, pack, max_entities=config.max_entities)
        provenance["entities"] = list(entities.entities)
        log.info("sample=%s stage=entities n=%d", sample.id, len(entities))
        if not entities.entities:
            return no_knowledge("no_entities")

        window = config.window
        records = query_gdelt(gdelt_client, entities, window, max_records=config.max_records)
        if not records:
            window = window.widen_back()
            provenance["window"] = window.to_json()
            records = query_gdelt(gdelt_client, entities, window, max_records=config.max_records)
        if not records:
            return no_knowledge("no_knowledge")
    except ExtractionError as exc:
        return no_knowledge(f"entity extraction failed: {exc}")
    except CoreEvalError as exc:
        return no_knowledge(f"retrieval failed: {exc}")
    provenance["records"] = [r.to_json() for r in records]
    log.info("sample=%s stage=retrieval n=%d", sample.id, len(records))

    try:
        summary = summarize_knowledge(records, gateway, pack, window)
        provenance["summary"] = summary.text
        log.info("sample=%s stage=summary chars=%d", sample.id, len(summary.text))

        triples = extract_triples(sample, gateway, pack, max_triples=config.max_triples)
        provenance["triples"] = [t.to_list() for t in triples.triples]
        log.info("sample=%s stage=triples n=%d", sample.id, len(triples))

        updates = update_triples(triples, summary, gateway, pack)
        substitution = substitute_triples(sample, updates)
        provenance["updates"] = [
            {
                "original": u.original.to_list(),
                "replacement": u.replacement.to_list(),
                "hits": {"head": h.head, "tail": h.tail},
            }
            for u, h in zip(updates, substitution.hits)
        ]
        provenance["d_u"] = _candidate_json(substitution.candidate)
        log.info(
            "sample=%s stage=substitute unanchored=%d",
            sample.id,
            len(substitution.unanchored_indices()),
        )

        semantic_candidate = semantic_rewrite(sample, triples, gateway, pack)
        provenance["d_s"] = _candidate_json(semantic_candidate)
        semantic_sample = _semantic_to_sample(sample, semantic_candidate)
        log.info("sample=%s stage=semantic chars=%d", sample.id, len(semantic_candidate.text))

        synthesis_failure = None
        try:
            candidate = synthesize_updated_text(
                sample, substitution.candidate, updates, semantic_candidate, gateway, pack
            )
        except SynthesisError as exc:
            candidate = None
            synthesis_failure = str(exc)

        context = ReflectionContext(
            summary=summary,
            updates=updates,
            substituted=substitution.candidate,
            semantic=semantic_candidate,
            candidate=candidate,
            synthesis_failure=synthesis_failure,
        )
        outcome = reflect_and_refine(
            sample, context, ReflectionConfig(max_rounds=config.max_rounds), gateway, pack
        )
        provenance["reflection"] = [r.to_json() for r in outcome.rounds]
        log.info(
            "sample=%s stage=reflection attempts=%d accepted=%s",
            sample.id,
            outcome.attempts,
            outcome.accepted,
        )
    except CoreEvalError as exc:
        return unresolved(str(exc))

    if not outcome.accepted:
        return unresolved("reflection exhausted")
    provenance["d_hat"] = _candidate_json(outcome.candidate)
    provenance["status"] = "accepted"
    log.info("sample=%s stage=done status=accepted", sample.id)
    return SampleOutcome(
        status="accepted",
        provenance=provenance,
        updated=outcome.sample,
        semantic=semantic_sample,
    )


def update_dataset(
    dataset: Dataset,
    gateway,
    gdelt_client,
    pack: TemplatePack,
    config: PipelineConfig,
) -> UpdateResult:
    """Run the full update flow over a dataset.

    Per-sample pipelines are independent; with parallelism > 1 they run
    on a bounded thread pool and results are joined in input order, so
    output content never depends on the worker count.
    """
    if dataset.variant != "original":
        raise ValidationError("updates start from the original dataset variant")

    def worker(sample: Sample) -> SampleOutcome:
        return process_sample(sample, gateway, gdelt_client, pack, config)

    if config.parallelism > 1 and len(dataset) > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            outcomes = list(pool.map(worker, dataset.samples))
    else:
        outcomes = [worker(s) for s in dataset.samples]

    stats = {status: 0 for status in STATUSES}
    updated_samples: list[Sample] = []
    semantic_samples: list[Sample] = []
    for outcome in outcomes:
        stats[outcome.status] += 1
        if outcome.updated is not None:
            updated_samples.append(outcome.updated)
        if outcome.semantic is not None:
            semantic_samples.append(outcome.semantic)
    stats["total"] = len(dataset)

    return UpdateResult(
        updated=Dataset(
            task=dataset.task,
            split=dataset.split,
            samples=tuple(updated_samples),
            variant="updated",
        ),
        semantic=Dataset(
            task=dataset.task,
            split=dataset.split,
            samples=tuple(semantic_samples),
            variant="semantic",
        ),
        provenance=[o.provenance for o in outcomes],
        stats=stats,
    )
