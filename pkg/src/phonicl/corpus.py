"""Dataset loading, quality filtering, and pool/test splitting.

File formats
------------
JSONL: one object per line with keys id, lang, task, script_text,
ipa_text, roman_text, target_text. ipa_text/roman_text may be absent or
empty; empty means "not transcribed yet".

TSV: header row with the same column names, UTF-8. Tab, newline, and
backslash inside fields are escaped as \\t, \\n, \\\\.

Split manifest: JSON recording seed, sizes, filter config, and the id
lists of both partitions; writing the same split twice produces
byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import DuplicateIdError, InsufficientDataError, MalformedRecordError
from .rng import SplitMix64

TASK_AYA_WIKI = "aya-wiki"
TASK_FLORES = "flores"
TASK_AYA_MLQA = "aya-mlqa"
KNOWN_TASKS = (TASK_AYA_WIKI, TASK_FLORES, TASK_AYA_MLQA)

_COLUMNS = ("id", "lang", "task", "script_text", "ipa_text", "roman_text", "target_text")
_REQUIRED = ("id", "lang", "task", "script_text", "target_text")


@dataclass
class Example:
    """One aligned record: orthographic text plus its transcriptions.

    script_text holds whatever fills the prompt's input slot for the
    task (e.g. context+question for extractive QA).
    """

    id: str
    lang: str
    task: str
    script_text: str
    target_text: str
    ipa_text: str = ""
    roman_text: str = ""

    def channel_text(self, channel: str) -> str:
        if channel == "script":
            return self.script_text
        if channel == "ipa":
            return self.ipa_text
        if channel == "roman":
            return self.roman_text
        raise ValueError(f"unknown channel: {channel!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "lang": self.lang,
            "task": self.task,
            "script_text": self.script_text,
            "ipa_text": self.ipa_text,
            "roman_text": self.roman_text,
            "target_text": self.target_text,
        }


@dataclass
class QualityFilterConfig:
    """Rejects noisy records: any field containing a reject substring,
    or script_text whose length falls outside [min_chars, max_chars]."""

    reject_substrings: tuple[str, ...] = ("<unk>",)
    min_chars: int = 1
    max_chars: int = 100000

    def __post_init__(self):
        if self.min_chars < 1:
            raise ValueError("min_chars must be >= 1")
        if self.min_chars > self.max_chars:
            raise ValueError("min_chars must be <= max_chars")
        self.reject_substrings = tuple(self.reject_substrings)

    def accepts(self, ex: Example) -> bool:
        if not (self.min_chars <= len(ex.script_text) <= self.max_chars):
            return False
        for needle in self.reject_substrings:
            for text in (ex.script_text, ex.ipa_text, ex.roman_text, ex.target_text):
                if needle and needle in text:
                    return False
        return True


@dataclass
class CorpusSplit:
    """Disjoint retrieval pool and test partitions of one dataset."""

    pool: list[Example]
    test: list[Example]
    seed: int
    test_size: int = 0
    pool_size: int = 0
    filter: QualityFilterConfig = field(default_factory=QualityFilterConfig)


def quality_filter(examples: list[Example], cfg: QualityFilterConfig) -> list[Example]:
    """Keeps accepted records in input order. Idempotent."""
    return [ex for ex in examples if cfg.accepts(ex)]


def _example_from_record(record: dict, line_no: int) -> Example:
    for key in _REQUIRED:
        if key not in record or record[key] is None:
            raise MalformedRecordError(line_no, f"missing required field {key!r}")
        if not isinstance(record[key], str):
            raise MalformedRecordError(line_no, f"field {key!r} must be a string")
    return Example(
        id=record["id"],
        lang=record["lang"],
        task=record["task"],
        script_text=record["script_text"],
        target_text=record["target_text"],
        ipa_text=record.get("ipa_text") or "",
        roman_text=record.get("roman_text") or "",
    )


def _escape_tsv(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape_tsv(value: str) -> str:
    out = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch == "\\" and i + 1 < len(value):
            nxt = value[i + 1]
            if nxt == "t":
                out.append("\t")
                i += 2
                continue
            if nxt == "n":
                out.append("\n")
                i += 2
                continue
            if nxt == "\\":
                out.append("\\")
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)


def load_dataset(path: str | Path, format: str | None = None) -> list[Example]:
    """Loads a JSONL or TSV dataset, preserving file order.

    `format` is "jsonl" or "tsv"; inferred from the suffix when omitted.
    Raises MalformedRecordError on a bad row and DuplicateIdError on a
    repeated id.
    """
    path = Path(path)
    if format is None:
        format = "tsv" if path.suffix.lower() == ".tsv" else "jsonl"
    format = format.lower()
    if format not in ("jsonl", "tsv"):
        raise ValueError(f"unknown dataset format: {format!r}")

    examples: list[Example] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        if format == "jsonl":
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecordError(line_no, f"invalid JSON: {exc}") from exc
                if not isinstance(record, dict):
                    raise MalformedRecordError(line_no, "row is not an object")
                ex = _example_from_record(record, line_no)
                if ex.id in seen:
                    raise DuplicateIdError(ex.id)
                seen.add(ex.id)
                examples.append(ex)
        else:
            header_line = fh.readline()
            if not header_line:
                return []
            header = header_line.rstrip("\n").split("\t")
            for line_no, line in enumerate(fh, start=2):
                if line == "\n":
                    continue
                cells = line.rstrip("\n").split("\t")
                if len(cells) != len(header):
                    raise MalformedRecordError(line_no, f"expected {len(header)} columns, got {len(cells)}")
                record = {key: _unescape_tsv(cell) for key, cell in zip(header, cells)}
                ex = _example_from_record(record, line_no)
                if ex.id in seen:
                    raise DuplicateIdError(ex.id)
                seen.add(ex.id)
                examples.append(ex)
    return examples


def save_dataset(examples: list[Example], path: str | Path, format: str | None = None) -> None:
    """Writes examples in the JSONL or TSV layout accepted by load_dataset."""
    path = Path(path)
    if format is None:
        format = "tsv" if path.suffix.lower() == ".tsv" else "jsonl"
    format = format.lower()
    with open(path, "w", encoding="utf-8") as fh:
        if format == "jsonl":
            for ex in examples:
                fh.write(json.dumps(ex.to_dict(), ensure_ascii=False) + "\n")
        elif format == "tsv":
            fh.write("\t".join(_COLUMNS) + "\n")
            for ex in examples:
                record = ex.to_dict()
                fh.write("\t".join(_escape_tsv(record[col]) for col in _COLUMNS) + "\n")
        else:
            raise ValueError(f"unknown dataset format: {format!r}")


def make_split(
    examples: list[Example],
    test_size: int = 500,
    pool_size: int = 10000,
    seed: int = 0,
    filter: QualityFilterConfig | None = None,
) -> CorpusSplit:
    """Seeded disjoint pool/test split of the quality-filtered examples.

    A single Fisher-Yates shuffle (SplitMix64, see rng module) orders the
    filtered records; the first test_size become the test set and the
    next min(pool_size, remainder) become the pool, so both partitions
    are uniform samples without replacement and never share an id.
    """
    cfg = filter if filter is not None else QualityFilterConfig()
    kept = quality_filter(examples, cfg)
    if len(kept) < test_size + 1:
        raise InsufficientDataError(
            f"need at least test_size+1={test_size + 1} filtered examples, have {len(kept)}"
        )
    order = list(range(len(kept)))
    SplitMix64(seed).shuffle(order)
    test = [kept[i] for i in order[:test_size]]
    n_pool = min(pool_size, len(kept) - test_size)
    pool = [kept[i] for i in order[test_size : test_size + n_pool]]
    return CorpusSplit(pool=pool, test=test, seed=seed, test_size=test_size, pool_size=pool_size, filter=cfg)


def split_manifest(split: CorpusSplit) -> dict:
    return {
        "version": 1,
        "seed": split.seed,
        "test_size": split.test_size,
        "pool_size": split.pool_size,
        "filter": asdict(split.filter),
        "test_ids": [ex.id for ex in split.test],
        "pool_ids": [ex.id for ex in split.pool],
    }


def save_split_manifest(split: CorpusSplit, path: str | Path) -> None:
    """Canonical JSON so identical splits serialize to identical bytes."""
    payload = json.dumps(split_manifest(split), ensure_ascii=False, sort_keys=True, indent=2)
    Path(path).write_text(payload + "\n", encoding="utf-8")
