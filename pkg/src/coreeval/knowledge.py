"""Real-world knowledge attainment: entity extraction, event retrieval
within a time window, and knowledge summarization.

Retrieval has two interchangeable clients. The live client hits the
public GDELT DOC 2.0 full-text endpoint (keyless HTTP GET); the fixture
client reads exported record files. Both feed ``query_gdelt``, which
applies the same window filter, relevance sort, and truncation either
way, so runs replay exactly from fixtures.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import requests

from .datamodel import Sample, TaskKind
from .errors import ExtractionError, RetrievalError, ValidationError
from .gateway import RetryPolicy, build_request
from .jsonparse import parse_json_array
from .prompts import TemplatePack, render_step

log = logging.getLogger(__name__)

GDELT_DOC_ENDPOINT = "https://api.gdeltproject.org/api/v2/doc/doc"

DEFAULT_MAX_ENTITIES = 8
DEFAULT_MAX_RECORDS = 25


@dataclass(frozen=True)
class EntitySet:
    entities: tuple[str, ...]
    source_sample: str

    def __post_init__(self):
        seen = set()
        for entity in self.entities:
            if not entity.strip():
                raise ValidationError("entity surface forms must be non-empty")
            key = entity.strip().lower()
            if key in seen:
                raise ValidationError(f"duplicate entity {entity!r}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.entities)


@dataclass(frozen=True)
class TimeWindow:
    t_start: dt.date
    t_end: dt.date

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise ValidationError(f"window start {self.t_start} is after end {self.t_end}")

    def contains(self, day: dt.date) -> bool:
        return self.t_start <= day <= self.t_end

    def widen_back(self) -> "TimeWindow":
        """Double the span backward from the end date (retrieval-miss fallback)."""
        span = max((self.t_end - self.t_start).days, 1)
        return TimeWindow(self.t_end - dt.timedelta(days=2 * span), self.t_end)

    def to_json(self) -> dict:
        return {"t_start": self.t_start.isoformat(), "t_end": self.t_end.isoformat()}


@dataclass(frozen=True)
class KnowledgeRecord:
    event_date: dt.date
    headline: str
    source_url: str
    matched_entities: tuple[str, ...]
    tone: float | None = None

    def to_json(self) -> dict:
        return {
            "date": self.event_date.isoformat(),
            "title": self.headline,
            "url": self.source_url,
            "matched": list(self.matched_entities),
            "tone": self.tone,
        }


@dataclass(frozen=True)
class KnowledgeSummary:
    text: str
    record_count: int
    window: TimeWindow


def dedupe_entities(surfaces: list[str], prepend: str | None = None, cap: int = DEFAULT_MAX_ENTITIES) -> list[str]:
    """Trim, case-insensitively dedupe (first surface form wins), and cap."""
    ordered = []
    if prepend is not None:
        ordered.append(prepend)
    ordered.extend(surfaces)
    seen: set[str] = set()
    result: list[str] = []
    for surface in ordered:
        cleaned = surface.strip()
        if not cleaned:
            continue
        key = cleaned.lower()
        if key in seen:
            continue
        seen.add(key)
        result.append(cleaned)
        if len(result) >= cap:
            break
    return result


def extract_entities(
    sample: Sample,
    gateway,
    pack: TemplatePack,
    max_entities: int = DEFAULT_MAX_ENTITIES,
) -> EntitySet:
    """Ask the generator for the sample's entities.

    The response is parsed as a JSON array of strings, falling back to
    one entity per line. A stance sample's target is always prepended.
    Zero entities is a valid (flagged) outcome, not an error.
    """
    prompt = render_step(
        pack.step("step_entity_extraction"),
        {
            "text": sample.text_primary,
            "text2": sample.text_secondary or "",
            "target": sample.target or "",
        },
    )
    response = gateway(build_request(gateway, "step_entity_extraction", prompt))
    raw = response.text
    parsed = parse_json_array(raw)
    if parsed is not None:
        if not all(isinstance(item, str) for item in parsed):
            raise ExtractionError("entity array contains non-string items", raw=raw)
        surfaces = [str(item) for item in parsed]
    else:
        surfaces = [line.strip(" \t-*•") for line in raw.splitlines() if line.strip(" \t-*•")]
    prepend = sample.target if sample.task is TaskKind.STANCE else None
    return EntitySet(
        entities=tuple(dedupe_entities(surfaces, prepend=prepend, cap=max_entities)),
        source_sample=sample.id,
    )


def parse_record_date(value: str) -> dt.date:
    """Accept ISO dates, bare YYYYMMDD, and GDELT seendate stamps."""
    value = value.strip()
    if "T" in value:  # e.g. 20240131T123000Z
        value = value.split("T", 1)[0]
    if len(value) == 8 and value.isdigit():
        return dt.date(int(value[:4]), int(value[4:6]), int(value[6:8]))
    if len(value) >= 14 and value.isdigit():
        return dt.date(int(value[:4]), int(value[4:6]), int(value[6:8]))
    return dt.date.fromisoformat(value[:10])


class FixtureGdeltClient:
    """Replays exported records from a file or a directory of files.

    Each fixture file is either a JSON array or JSONL of records shaped
    ``{"date": ..., "title": ..., "url": ..., "tone": optional}``.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._records = self._load()

    def _load(self) -> list[dict]:
        if self.path.is_dir():
            files = sorted(self.path.rglob("*.json*"))
        else:
            files = [self.path]
        records: list[dict] = []
        for file in files:
            text = file.read_text(encoding="utf-8").strip()
            if not text:
                continue
            if text.startswith("["):
                records.extend(json.loads(text))
            else:
                for line in text.splitlines():
                    if line.strip():
                        records.append(json.loads(line))
        return records

    def fetch(self, entities: EntitySet, window: TimeWindow) -> list[dict]:
        return list(self._records)


class LiveGdeltClient:
    """Queries the public GDELT DOC 2.0 full-text API over HTTP.

    Entities are joined into one quoted OR query per sample; the window
    maps to startdatetime/enddatetime in YYYYMMDDHHMMSS form.
    """

    def __init__(
        self,
        endpoint: str = GDELT_DOC_ENDPOINT,
        timeout: float = 30.0,
        fetch_limit: int = 250,
        retry: RetryPolicy | None = None,
        rate_limiter=None,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.timeout = timeout
        self.fetch_limit = fetch_limit
        self.retry = retry or RetryPolicy()
        self.rate_limiter = rate_limiter
        self._session = session or requests.Session()

    def fetch(self, entities: EntitySet, window: TimeWindow) -> list[dict]:
        params = {
            "query": " OR ".join(f'"{e}"' for e in entities.entities),
            "mode": "ArtList",
            "format": "json",
            "maxrecords": str(self.fetch_limit),
            "startdatetime": window.t_start.strftime("%Y%m%d") + "000000",
            "enddatetime": window.t_end.strftime("%Y%m%d") + "235959",
            "sort": "DateDesc",
        }
        payload = self._get_with_retry(params)
        articles = payload.get("articles", [])
        return [
            {
                "date": article.get("seendate", ""),
                "title": article.get("title", ""),
                "url": article.get("url", ""),
                "tone": article.get("tone"),
            }
            for article in articles
        ]

    def _get_with_retry(self, params: dict) -> dict:
        last_error = "no attempts made"
        for attempt in range(self.retry.attempts):
            if attempt:
                self.retry.pause(attempt - 1)
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                resp = self._session.get(self.endpoint, params=params, timeout=self.timeout)
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_error = str(exc)
                continue
            if resp.status_code in self.retry.retry_statuses:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise RetrievalError(f"GDELT returned HTTP {resp.status_code}")
            try:
                return resp.json()
            except ValueError:
                last_error = "non-JSON response"
                continue
        raise RetrievalError(f"GDELT query failed after {self.retry.attempts} attempts: {last_error}")


def query_gdelt(
    client,
    entities: EntitySet,
    window: TimeWindow,
    max_records: int = DEFAULT_MAX_RECORDS,
) -> list[KnowledgeRecord]:
    """Retrieve, filter to the window, rank, and truncate event records.

    A record is a match when its headline mentions at least one queried
    entity (case-insensitive); zero matches overall is the flagged
    no-knowledge outcome, not an error. Relevance is (matched entity
    count desc, event date desc, url asc) — a total order, so repeated
    queries return byte-identical results.
    """
    if not entities.entities:
        raise ValueError("entity set is empty")
    records: list[KnowledgeRecord] = []
    for raw in client.fetch(entities, window):
        try:
            day = parse_record_date(str(raw["date"]))
        except (KeyError, ValueError):
            log.warning("skipping record with unparseable date: %r", raw)
            continue
        if not window.contains(day):
            continue
        title = str(raw.get("title", ""))
        matched = tuple(e for e in entities.entities if e.lower() in title.lower())
        if not matched:
            continue
        tone = raw.get("tone")
        records.append(
            KnowledgeRecord(
                event_date=day,
                headline=title,
                source_url=str(raw.get("url", "")),
                matched_entities=matched,
                tone=float(tone) if tone is not None else None,
            )
        )
    records.sort(
        key=lambda r: (-len(r.matched_entities), -r.event_date.toordinal(), r.source_url)
    )
    return records[:max_records]


def format_records(records: list[KnowledgeRecord]) -> str:
    lines = []
    for i, record in enumerate(records, start=1):
        lines.append(f"{i}. {record.event_date.isoformat()} — {record.headline} ({record.source_url})")
    return "\n".join(lines)


def summarize_knowledge(
    records: list[KnowledgeRecord],
    gateway,
    pack: TemplatePack,
    window: TimeWindow,
) -> KnowledgeSummary:
    """Summarize retrieved records in a single generator call.

    An empty record list short-circuits to an empty summary without
    calling the backend.
    """
    if not records:
        return KnowledgeSummary(text="", record_count=0, window=window)
    prompt = render_step(pack.step("step_knowledge_summary"), {"records": format_records(records)})
    response = gateway(build_request(gateway, "step_knowledge_summary", prompt))
    return KnowledgeSummary(text=response.text.strip(), record_count=len(records), window=window)


def write_fixture(records: list[dict], path) -> str:
    """Persist raw records in the fixture format (used by capture-fixtures)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    return str(path)
