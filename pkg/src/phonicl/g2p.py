"""Rule-based grapheme-to-phoneme / romanization transducer.

A profile directory holds per-language files:

    <lang>.map.csv    two-column CSV "orth,phon", UTF-8, no header
    <lang>.pre.rules  context rewrite rules applied before mapping
    <lang>.post.rules context rewrite rules applied after mapping
    <lang>.dict.csv   two-column CSV "word,ipa" for logographic scripts

Rule files hold one rule per line, ``source -> target / left _ right``
(the ``/ left _ right`` context part, and the target, may be empty).
Lines whose first non-space character is ``#`` are comments. Context
patterns use a deliberately small language so behavior is exact across
implementations: literal characters, bracketed character classes such
as ``[aeiou]`` or ``[a-z]``, and ``#`` as a word-boundary marker
(start/end of string or next to whitespace). Full regular expressions
are not supported.

Rules apply in file order. Each rule makes a single left-to-right pass,
replacing leftmost non-overlapping matches; its own output is never
rescanned within the pass, and contexts are checked against the pass's
input string. Characters with no mapping pass through unchanged, which
keeps punctuation and digits intact in the transcription.

Romanization uses the same engine with Latin-target mapping tables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ProfileNotFoundError, RuleParseError

MODE_RULES = "rules"
MODE_DICTIONARY = "dictionary"

PHASE_PRE = "pre"
PHASE_POST = "post"


class MappingTable:
    """Grapheme-to-phoneme pairs matched greedily, longest key first."""

    def __init__(self, entries: list[tuple[str, str]]):
        seen = set()
        for orth, _ in entries:
            if not orth:
                raise ValueError("mapping keys must be non-empty")
            if orth in seen:
                raise ValueError(f"duplicate mapping key: {orth!r}")
            seen.add(orth)
        self.entries = sorted(entries, key=lambda kv: (-len(kv[0]), kv[0]))
        # index by first character so lookup only scans plausible keys
        self._by_first: dict[str, list[tuple[str, str]]] = {}
        for orth, phon in self.entries:
            self._by_first.setdefault(orth[0], []).append((orth, phon))

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, MappingTable) and self.entries == other.entries

    def longest_match(self, text: str, pos: int) -> tuple[str, str] | None:
        """Longest key matching text at pos, or None."""
        for orth, phon in self._by_first.get(text[pos], ()):
            if text.startswith(orth, pos):
                return orth, phon
        return None


def _parse_pattern(pattern: str, file: str, line_no: int) -> tuple:
    """Compiles the context-pattern subset into matcher items.

    Items are ("lit", char), ("class", frozenset of chars), or
    ("boundary",).
    """
    items: list[tuple] = []
    i = 0
    while i < len(pattern):
        ch = pattern[i]
        if ch == "#":
            items.append(("boundary",))
            i += 1
        elif ch == "[":
            end = pattern.find("]", i + 1)
            if end < 0:
                raise RuleParseError(file, line_no, "unclosed character class")
            body = pattern[i + 1 : end]
            if not body:
                raise RuleParseError(file, line_no, "empty character class")
            chars: set[str] = set()
            j = 0
            while j < len(body):
                if j + 2 < len(body) and body[j + 1] == "-":
                    lo, hi = ord(body[j]), ord(body[j + 2])
                    if lo > hi:
                        raise RuleParseError(file, line_no, f"bad range in class: {body[j:j+3]!r}")
                    chars.update(chr(c) for c in range(lo, hi + 1))
                    j += 3
                else:
                    chars.add(body[j])
                    j += 1
            items.append(("class", frozenset(chars)))
            i = end + 1
        else:
            items.append(("lit", ch))
            i += 1
    return tuple(items)


def _is_boundary(text: str, pos: int) -> bool:
    return pos == 0 or pos == len(text) or text[pos - 1].isspace() or text[pos].isspace()


def _match_after(text: str, start: int, items: tuple) -> bool:
    p = start
    for item in items:
        if item[0] == "boundary":
            if not _is_boundary(text, p):
                return False
        elif item[0] == "lit":
            if p >= len(text) or text[p] != item[1]:
                return False
            p += 1
        else:
            if p >= len(text) or text[p] not in item[1]:
                return False
            p += 1
    return True


def _match_before(text: str, end: int, items: tuple) -> bool:
    p = end
    for item in reversed(items):
        if item[0] == "boundary":
            if not _is_boundary(text, p):
                return False
        elif item[0] == "lit":
            if p <= 0 or text[p - 1] != item[1]:
                return False
            p -= 1
        else:
            if p <= 0 or text[p - 1] not in item[1]:
                return False
            p -= 1
    return True


@dataclass
class RewriteRule:
    source: str
    target: str
    left_context: str = ""
    right_context: str = ""
    phase: str = PHASE_PRE
    _left_items: tuple = field(default=(), repr=False, compare=False)
    _right_items: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not self.source:
            raise ValueError("rule source must be non-empty")
        self._left_items = _parse_pattern(self.left_context, "<rule>", 0)
        self._right_items = _parse_pattern(self.right_context, "<rule>", 0)

    def apply(self, text: str) -> str:
        """One leftmost, non-overlapping pass; output not rescanned."""
        out: list[str] = []
        i = 0
        n = len(self.source)
        while i < len(text):
            if (
                text.startswith(self.source, i)
                and _match_before(text, i, self._left_items)
                and _match_after(text, i + n, self._right_items)
            ):
                out.append(self.target)
                i += n
            else:
                out.append(text[i])
                i += 1
        return "".join(out)

    def to_line(self) -> str:
        line = f"{self.source} -> {self.target}"
        if self.left_context or self.right_context:
            line += f" / {self.left_context} _ {self.right_context}"
        return line


def parse_rule(line: str, phase: str, file: str = "<string>", line_no: int = 0) -> RewriteRule:
    if "->" not in line:
        raise RuleParseError(file, line_no, "missing '->'")
    source_str, rest = line.split("->", 1)
    source = source_str.strip()
    left = right = ""
    if "/" in rest:
        target_str, ctx = rest.split("/", 1)
        if "_" not in ctx:
            raise RuleParseError(file, line_no, "context missing '_'")
        left, right = (part.strip() for part in ctx.split("_", 1))
    else:
        target_str = rest
    if not source:
        raise RuleParseError(file, line_no, "empty source")
    # validate patterns against this file/line before construction
    _parse_pattern(left, file, line_no)
    _parse_pattern(right, file, line_no)
    return RewriteRule(source=source, target=target_str.strip(), left_context=left, right_context=right, phase=phase)


@dataclass
class G2pProfile:
    lang: str
    mode: str = MODE_RULES
    mapping: MappingTable = field(default_factory=lambda: MappingTable([]))
    pre_rules: list[RewriteRule] = field(default_factory=list)
    post_rules: list[RewriteRule] = field(default_factory=list)
    dictionary: MappingTable | None = None

    def __post_init__(self):
        if self.mode not in (MODE_RULES, MODE_DICTIONARY):
            raise ValueError(f"unknown mode: {self.mode!r}")
        if self.mode == MODE_DICTIONARY and not (self.dictionary and len(self.dictionary)):
            raise ValueError("dictionary mode requires a non-empty dictionary")


def _map_longest(text: str, table: MappingTable) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        hit = table.longest_match(text, i)
        if hit is None:
            out.append(text[i])
            i += 1
        else:
            orth, phon = hit
            out.append(phon)
            i += len(orth)
    return "".join(out)


def transliterate(profile: G2pProfile, text: str) -> str:
    """Transduces text through the profile; total on any unicode string."""
    if profile.mode == MODE_DICTIONARY:
        assert profile.dictionary is not None
        return _map_longest(text, profile.dictionary)
    for rule in profile.pre_rules:
        text = rule.apply(text)
    text = _map_longest(text, profile.mapping)
    for rule in profile.post_rules:
        text = rule.apply(text)
    return text


class Transliterator(BaseEstimator, TransformerMixin):
    """Estimator wrapper: transform maps texts through one profile."""

    def __init__(self, profile: G2pProfile | None = None):
        self.profile = profile

    def fit(self, X=None, y=None):
        if self.profile is None:
            raise ValueError("Transliterator requires a profile")
        return self

    def transform(self, X: list[str]) -> list[str]:
        if self.profile is None:
            raise ValueError("Transliterator requires a profile")
        return [transliterate(self.profile, text) for text in X]

    def __call__(self, text: str) -> str:
        if self.profile is None:
            raise ValueError("Transliterator requires a profile")
        return transliterate(self.profile, text)


def _read_csv_pairs(path: Path) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise RuleParseError(str(path), line_no, f"expected 2 columns, got {len(row)}")
            pairs.append((row[0], row[1]))
    return pairs


def _read_rules(path: Path, phase: str) -> list[RewriteRule]:
    rules: list[RewriteRule] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            rules.append(parse_rule(line, phase, str(path), line_no))
    return rules


def load_profile(dir: str | Path, lang: str) -> G2pProfile:
    """Loads <lang>.* profile files; dictionary mode when only a dict
    file is present."""
    base = Path(dir)
    map_path = base / f"{lang}.map.csv"
    dict_path = base / f"{lang}.dict.csv"
    if not map_path.exists() and not dict_path.exists():
        raise ProfileNotFoundError(f"no {lang}.map.csv or {lang}.dict.csv under {base}")

    mapping = MappingTable([])
    dictionary = None
    if map_path.exists():
        try:
            mapping = MappingTable(_read_csv_pairs(map_path))
        except ValueError as exc:
            raise RuleParseError(str(map_path), 0, str(exc)) from exc
    if dict_path.exists():
        try:
            dictionary = MappingTable(_read_csv_pairs(dict_path))
        except ValueError as exc:
            raise RuleParseError(str(dict_path), 0, str(exc)) from exc

    pre_path = base / f"{lang}.pre.rules"
    post_path = base / f"{lang}.post.rules"
    pre_rules = _read_rules(pre_path, PHASE_PRE) if pre_path.exists() else []
    post_rules = _read_rules(post_path, PHASE_POST) if post_path.exists() else []

    mode = MODE_DICTIONARY if (dict_path.exists() and not map_path.exists()) else MODE_RULES
    return G2pProfile(
        lang=lang,
        mode=mode,
        mapping=mapping,
        pre_rules=pre_rules,
        post_rules=post_rules,
        dictionary=dictionary,
    )


def save_profile(profile: G2pProfile, dir: str | Path) -> None:
    """Writes the profile back out; load_profile(save_profile(p)) == p."""
    base = Path(dir)
    base.mkdir(parents=True, exist_ok=True)
    if profile.mode == MODE_RULES or len(profile.mapping):
        with open(base / f"{profile.lang}.map.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            for orth, phon in profile.mapping.entries:
                writer.writerow([orth, phon])
    if profile.dictionary is not None:
        with open(base / f"{profile.lang}.dict.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            for word, ipa in profile.dictionary.entries:
                writer.writerow([word, ipa])
    for phase, rules in ((PHASE_PRE, profile.pre_rules), (PHASE_POST, profile.post_rules)):
        if rules:
            path = base / f"{profile.lang}.{phase}.rules"
            path.write_text("".join(rule.to_line() + "\n" for rule in rules), encoding="utf-8")
