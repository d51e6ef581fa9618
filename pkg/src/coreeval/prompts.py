"""Prompt templates: the per-task prompt pack and the pipeline-step prompts.

Templates live in text files with a minimal front-matter header::

    ---
    id: stance_1
    task: stance
    ---
    <body with {placeholders}>

Step templates use ``kind: step`` instead of a task. The default pack is
shipped as package data; a directory with the same layout (any ``*.txt``
files, searched recursively) can replace it via configuration.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .datamodel import Sample, TaskKind
from .errors import ConfigError, RenderError, ValidationError

# Placeholders a task template may use, per task.
TASK_PLACEHOLDERS: dict[TaskKind, frozenset[str]] = {
    TaskKind.EMOTION: frozenset({"text"}),
    TaskKind.IRONY: frozenset({"text"}),
    TaskKind.STANCE: frozenset({"text", "target"}),
    TaskKind.MRPC: frozenset({"text", "text2", "sentence1", "sentence2"}),
    TaskKind.RTE: frozenset({"text", "text2", "premise", "hypothesis"}),
}

# Placeholders the pipeline-step templates may use.
STEP_PLACEHOLDERS = frozenset(
    {
        "text",
        "text2",
        "target",
        "records",
        "summary",
        "triples",
        "updates",
        "substituted",
        "substituted2",
        "semantic",
        "semantic2",
        "feedback",
        "candidate",
        "candidate2",
        "label",
        "label_space",
        "task",
        "max_triples",
    }
)

STEP_IDS = (
    "step_entity_extraction",
    "step_knowledge_summary",
    "step_triple_extraction",
    "step_triple_update",
    "step_semantic_rewrite",
    "step_semantic_rewrite_pair",
    "step_synthesis",
    "step_synthesis_pair",
    "step_reflection_factuality",
    "step_reflection_label",
)

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


def find_placeholders(body: str) -> set[str]:
    """Names of all ``{word}`` tokens in a template body."""
    return set(_PLACEHOLDER_RE.findall(body))


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    task: TaskKind
    body: str

    def __post_init__(self):
        if not self.id:
            raise ValidationError("template id is empty")
        stray = find_placeholders(self.body) - TASK_PLACEHOLDERS[self.task]
        if stray:
            raise ValidationError(
                f"template {self.id!r} uses placeholders not allowed for "
                f"{self.task.value}: {sorted(stray)}"
            )


def _placeholder_values(sample: Sample) -> dict[str, str | None]:
    return {
        "text": sample.text_primary,
        "text2": sample.text_secondary,
        "sentence1": sample.text_primary,
        "sentence2": sample.text_secondary,
        "premise": sample.text_primary,
        "hypothesis": sample.text_secondary,
        "target": sample.target,
    }


def _substitute(body: str, values: dict[str, str | None], allowed: frozenset[str]) -> str:
    def repl(match: re.Match) -> str:
        name = match.group(1)
        if name not in allowed:
            return match.group(0)
        value = values.get(name)
        if value is None:
            raise RenderError(f"no value for placeholder {{{name}}}")
        return value

    rendered = _PLACEHOLDER_RE.sub(repl, body)
    leftover = find_placeholders(rendered) & allowed
    if leftover:
        raise RenderError(f"unresolved placeholders remain: {sorted(leftover)}")
    return rendered


def render_prompt(template: PromptTemplate, sample: Sample) -> str:
    """Render a task template for a sample; every placeholder must resolve."""
    if template.task is not sample.task:
        raise RenderError(
            f"template {template.id!r} is for {template.task.value}, "
            f"sample {sample.id!r} is {sample.task.value}"
        )
    return _substitute(template.body, _placeholder_values(sample), TASK_PLACEHOLDERS[template.task])


def render_step(body: str, values: dict[str, str]) -> str:
    """Render a pipeline-step template from an explicit value mapping."""
    return _substitute(body, values, STEP_PLACEHOLDERS)


def parse_front_matter(raw: str, origin: str = "<template>") -> tuple[dict[str, str], str]:
    lines = raw.splitlines()
    if not lines or lines[0].strip() != "---":
        raise ConfigError(f"{origin}: missing front-matter opening '---'")
    meta: dict[str, str] = {}
    for i, line in enumerate(lines[1:], start=1):
        if line.strip() == "---":
            body = "\n".join(lines[i + 1 :]).strip("\n")
            return meta, body
        if ":" not in line:
            raise ConfigError(f"{origin}: bad front-matter line {line!r}")
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    raise ConfigError(f"{origin}: missing front-matter closing '---'")


@dataclass(frozen=True)
class TemplatePack:
    """A loaded set of task templates plus pipeline-step bodies."""

    task_templates: dict[str, PromptTemplate]
    steps: dict[str, str]

    def for_task(self, task: TaskKind) -> list[PromptTemplate]:
        return sorted(
            (t for t in self.task_templates.values() if t.task is task),
            key=lambda t: t.id,
        )

    def step(self, step_id: str) -> str:
        try:
            return self.steps[step_id]
        except KeyError:
            raise ConfigError(f"template pack has no step template {step_id!r}")


def _iter_template_texts(root) -> list[tuple[str, str]]:
    found = []
    if isinstance(root, (str, Path)):
        for path in sorted(Path(root).rglob("*.txt")):
            found.append((str(path), path.read_text(encoding="utf-8")))
    else:  # importlib.resources traversable
        def walk(node):
            for child in sorted(node.iterdir(), key=lambda c: c.name):
                if child.is_dir():
                    walk(child)
                elif child.name.endswith(".txt"):
                    found.append((child.name, child.read_text(encoding="utf-8")))

        walk(root)
    return found


def load_template_pack(path: str | Path | None = None) -> TemplatePack:
    """Load a template pack from a directory, or the packaged defaults."""
    root = Path(path) if path is not None else resources.files("coreeval") / "templates"
    if path is not None and not Path(path).is_dir():
        raise ConfigError(f"template pack path {path!r} is not a directory")
    task_templates: dict[str, PromptTemplate] = {}
    steps: dict[str, str] = {}
    for origin, raw in _iter_template_texts(root):
        meta, body = parse_front_matter(raw, origin)
        if "id" not in meta:
            raise ConfigError(f"{origin}: front-matter has no id")
        if meta.get("kind") == "step":
            stray = find_placeholders(body) - STEP_PLACEHOLDERS
            if stray:
                raise ConfigError(f"{origin}: unknown step placeholders {sorted(stray)}")
            steps[meta["id"]] = body
        elif "task" in meta:
            template = PromptTemplate(
                id=meta["id"], task=TaskKind.from_name(meta["task"]), body=body
            )
            task_templates[template.id] = template
        else:
            raise ConfigError(f"{origin}: front-matter needs either task or kind: step")
    return TemplatePack(task_templates=task_templates, steps=steps)
