"""Few-shot prompt assembly with per-channel field control.

A template has three parts per task: a header (literal text, shown as
written, never substituted), an example block, and a query block. The
blocks use the placeholders {{input}} (script), {{input_ipa}},
{{input_roman}}, and {{answer}} (example block only). A rendered prompt
is the header, then one filled example block per retrieved shot in
retrieval order (best shot first), then the filled query block, all
joined by blank lines.

Channel lines are controlled by PromptConfig: an excluded channel's
line is dropped under blank_mode="omit"; under blank_mode="blank" the
line stays with an empty value ("<ipa input>: " then newline), which
keeps prompts byte-identical apart from the blanked value. An included
channel whose field is empty raises MissingFieldError unless
blank_mode="blank".

Template files are plain text: a marker line ``[<task> <section>]``
(section is header/example/query) starts a section; its body runs to
the next marker with trailing newlines trimmed. Tasks found in a user
file shadow the built-in defaults.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .corpus import Example
from .errors import MissingFieldError, TemplateParseError

BLOCK_PLACEHOLDERS = ("input", "input_ipa", "input_roman", "answer")
_CHANNEL_FOR_PLACEHOLDER = {"input": "script", "input_ipa": "ipa", "input_roman": "roman"}

BLANK_OMIT = "omit"
BLANK_FIELD = "blank"

_MARKER = re.compile(r"^\[([A-Za-z0-9_-]+) (header|example|query)\]$")
_PLACEHOLDER = re.compile(r"\{\{(.*?)\}\}")


@dataclass
class PromptTemplate:
    task: str
    header: str
    example_block: str
    query_block: str

    def __post_init__(self):
        for section, block in (("example", self.example_block), ("query", self.query_block)):
            for name in _PLACEHOLDER.findall(block):
                if name not in BLOCK_PLACEHOLDERS:
                    raise TemplateParseError(f"{self.task} {section}: unknown placeholder {{{{{name}}}}}")
                if section == "query" and name == "answer":
                    raise TemplateParseError(f"{self.task} query: {{{{answer}}}} not allowed")


@dataclass
class PromptConfig:
    k_shots: int = 3
    include_script: bool = True
    include_ipa: bool = True
    include_roman: bool = False
    blank_mode: str = BLANK_OMIT

    def __post_init__(self):
        if self.k_shots < 0:
            raise ValueError("k_shots must be >= 0")
        if self.blank_mode not in (BLANK_OMIT, BLANK_FIELD):
            raise ValueError(f"unknown blank_mode: {self.blank_mode!r}")
        if not (self.include_script or self.include_ipa or self.include_roman):
            raise ValueError("at least one channel must be included")

    def includes(self, channel: str) -> bool:
        return {
            "script": self.include_script,
            "ipa": self.include_ipa,
            "roman": self.include_roman,
        }[channel]


def _render_block(block: str, config: PromptConfig, example: Example, with_answer: bool) -> str:
    lines_out: list[str] = []
    for line in block.split("\n"):
        names = _PLACEHOLDER.findall(line)
        drop = False
        for name in names:
            channel = _CHANNEL_FOR_PLACEHOLDER.get(name)
            if channel is not None and not config.includes(channel) and config.blank_mode == BLANK_OMIT:
                drop = True
        if drop:
            continue

        def fill(match: re.Match) -> str:
            name = match.group(1)
            if name == "answer":
                return example.target_text if with_answer else ""
            channel = _CHANNEL_FOR_PLACEHOLDER[name]
            if not config.includes(channel):
                return ""
            value = example.channel_text(channel)
            if not value and config.blank_mode != BLANK_FIELD:
                raise MissingFieldError(channel, example.id)
            return value

        lines_out.append(_PLACEHOLDER.sub(fill, line))
    return "\n".join(lines_out)


def render_prompt(
    template: PromptTemplate,
    config: PromptConfig,
    shots: list[Example],
    query: Example,
) -> str:
    """Header, k example blocks in retrieval order, then the query block."""
    if len(shots) != config.k_shots:
        raise ValueError(f"expected {config.k_shots} shots, got {len(shots)}")
    sections = [template.header]
    for shot in shots:
        sections.append(_render_block(template.example_block, config, shot, with_answer=True))
    sections.append(_render_block(template.query_block, config, query, with_answer=False))
    return "\n\n".join(sections)


def parse_templates(text: str, source: str = "<string>") -> dict[str, PromptTemplate]:
    sections: dict[tuple[str, str], list[str]] = {}
    current: tuple[str, str] | None = None
    for line_no, line in enumerate(text.split("\n"), start=1):
        match = _MARKER.match(line)
        if match:
            current = (match.group(1), match.group(2))
            if current in sections:
                raise TemplateParseError(f"{source}:{line_no}: duplicate section {line}")
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        elif line.strip():
            raise TemplateParseError(f"{source}:{line_no}: text before first section marker")

    tasks = {task for task, _ in sections}
    templates: dict[str, PromptTemplate] = {}
    for task in sorted(tasks):
        parts = {}
        for section in ("header", "example", "query"):
            if (task, section) not in sections:
                raise TemplateParseError(f"{source}: task {task!r} is missing its {section} section")
            parts[section] = "\n".join(sections[(task, section)]).rstrip("\n")
        templates[task] = PromptTemplate(
            task=task,
            header=parts["header"],
            example_block=parts["example"],
            query_block=parts["query"],
        )
    return templates


def default_templates_text() -> str:
    return resources.files("phonicl").joinpath("data/templates.txt").read_text(encoding="utf-8")


def load_templates(path: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Built-in templates, with tasks from `path` (if given) shadowing them."""
    templates = parse_templates(default_templates_text(), source="<builtin>")
    if path is not None:
        user_text = Path(path).read_text(encoding="utf-8")
        templates.update(parse_templates(user_text, source=str(path)))
    return templates
