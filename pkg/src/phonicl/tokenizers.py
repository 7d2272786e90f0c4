"""Token streams for retrieval: whitespace, per-character, and BPE.

Whitespace ("ws") splits on Unicode whitespace runs. Per-character
("cs") emits one token per non-whitespace scalar. BPE ("bpe") loads the
serialized-tokenizer JSON used by contemporary open LLM releases
(vocabulary + merge rules) and emits integer ids.

The BPE engine honors the pre-tokenization and normalization recorded
in the file, within a fixed subset (see _SUPPORTED_* below); anything
else raises VocabParseError at load time instead of silently diverging.
Added/special tokens (BOS/EOS and friends) are never emitted: retrieval
scores plain content tokens only.
"""

from __future__ import annotations

import hashlib
import json
import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import regex as re

from sklearn.base import BaseEstimator, TransformerMixin

from .errors import VocabParseError

KIND_WHITESPACE = "ws"
KIND_PER_CHARACTER = "cs"
KIND_BPE = "bpe"


@dataclass
class TokenStream:
    """Ordered tokens plus the id of the tokenizer that produced them."""

    tokens: list
    tokenizer_id: str

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


class WhitespaceTokenizer(BaseEstimator, TransformerMixin):
    tokenizer_id = KIND_WHITESPACE

    def tokenize(self, text: str) -> TokenStream:
        return TokenStream(text.split(), self.tokenizer_id)

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: list[str]) -> list[TokenStream]:
        return [self.tokenize(text) for text in X]


class CharTokenizer(BaseEstimator, TransformerMixin):
    tokenizer_id = KIND_PER_CHARACTER

    def tokenize(self, text: str) -> TokenStream:
        return TokenStream([ch for ch in text if not ch.isspace()], self.tokenizer_id)

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: list[str]) -> list[TokenStream]:
        return [self.tokenize(text) for text in X]


# GPT-2 style byte-to-printable-unicode table used by ByteLevel vocabularies.
@lru_cache(maxsize=1)
def _bytes_to_unicode() -> dict[int, str]:
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(0xA1, 0xAD)) + list(range(0xAE, 0x100))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, [chr(c) for c in cs]))


_GPT2_SPLIT = re.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)
_HF_WHITESPACE_SPLIT = re.compile(r"\w+|[^\w\s]+")

_SUPPORTED_NORMALIZERS = ("NFC", "NFD", "NFKC", "NFKD", "Lowercase", "Sequence")
_SUPPORTED_PRETOKENIZERS = ("Whitespace", "WhitespaceSplit", "ByteLevel", "Split", "Sequence")


def _build_normalizer(spec: dict | None, path: str):
    if spec is None:
        return lambda text: text
    kind = spec.get("type")
    if kind == "Sequence":
        steps = [_build_normalizer(sub, path) for sub in spec.get("normalizers", [])]

        def run(text: str) -> str:
            for step in steps:
                text = step(text)
            return text

        return run
    if kind in ("NFC", "NFD", "NFKC", "NFKD"):
        return lambda text: unicodedata.normalize(kind, text)
    if kind == "Lowercase":
        return lambda text: text.lower()
    raise VocabParseError(f"{path}: unsupported normalizer type {kind!r}")


def _build_pretokenizer(spec: dict | None, path: str):
    """Returns fn(pieces: list[str]) -> list[str]; ByteLevel mapping is
    applied separately after splitting."""
    if spec is None:
        return lambda pieces: pieces
    kind = spec.get("type")
    if kind == "Sequence":
        steps = [_build_pretokenizer(sub, path) for sub in spec.get("pretokenizers", [])]

        def run(pieces: list[str]) -> list[str]:
            for step in steps:
                pieces = step(pieces)
            return pieces

        return run
    if kind == "WhitespaceSplit":
        return lambda pieces: [tok for piece in pieces for tok in piece.split()]
    if kind == "Whitespace":
        return lambda pieces: [tok for piece in pieces for tok in _HF_WHITESPACE_SPLIT.findall(piece)]
    if kind == "ByteLevel":
        if spec.get("use_regex", True):
            return lambda pieces: [tok for piece in pieces for tok in _GPT2_SPLIT.findall(piece)]
        return lambda pieces: pieces
    if kind == "Split":
        pattern = spec.get("pattern", {})
        if "Regex" in pattern:
            compiled = re.compile(pattern["Regex"])
        elif "String" in pattern:
            compiled = re.compile(re.escape(pattern["String"]))
        else:
            raise VocabParseError(f"{path}: Split pre-tokenizer without a pattern")
        if spec.get("invert"):
            raise VocabParseError(f"{path}: inverted Split pre-tokenizer is unsupported")
        behavior = spec.get("behavior", "Isolated")
        if behavior == "Isolated":

            def split_isolated(pieces: list[str]) -> list[str]:
                out: list[str] = []
                for piece in pieces:
                    last = 0
                    for match in compiled.finditer(piece):
                        if match.start() > last:
                            out.append(piece[last : match.start()])
                        if match.group():
                            out.append(match.group())
                        last = match.end()
                    if last < len(piece):
                        out.append(piece[last:])
                return out

            return split_isolated
        if behavior == "Removed":

            def split_removed(pieces: list[str]) -> list[str]:
                return [tok for piece in pieces for tok in compiled.split(piece) if tok]

            return split_removed
        raise VocabParseError(f"{path}: Split behavior {behavior!r} is unsupported")
    raise VocabParseError(f"{path}: unsupported pre-tokenizer type {kind!r}")


def _uses_byte_level(spec: dict | None) -> bool:
    if spec is None:
        return False
    if spec.get("type") == "ByteLevel":
        return True
    if spec.get("type") == "Sequence":
        return any(_uses_byte_level(sub) for sub in spec.get("pretokenizers", []))
    return False


def _byte_level_prefix_space(spec: dict | None) -> bool:
    if spec is None:
        return False
    if spec.get("type") == "ByteLevel":
        return bool(spec.get("add_prefix_space", False))
    if spec.get("type") == "Sequence":
        return any(_byte_level_prefix_space(sub) for sub in spec.get("pretokenizers", []))
    return False


class BpeTokenizer(BaseEstimator, TransformerMixin):
    """Byte-pair tokenizer loaded from a serialized vocabulary file."""

    def __init__(self, vocab_path: str):
        self.vocab_path = vocab_path
        path = Path(vocab_path)
        if not path.exists():
            raise VocabParseError(f"vocabulary file not found: {vocab_path}")
        raw = path.read_bytes()
        try:
            payload = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise VocabParseError(f"{vocab_path}: {exc}") from exc

        model = payload.get("model") or {}
        if model.get("type") not in ("BPE", None):
            raise VocabParseError(f"{vocab_path}: unsupported model type {model.get('type')!r}")
        if model.get("continuing_subword_prefix") or model.get("end_of_word_suffix"):
            raise VocabParseError(f"{vocab_path}: subword affixes are unsupported")
        if model.get("byte_fallback") or model.get("fuse_unk"):
            raise VocabParseError(f"{vocab_path}: byte_fallback/fuse_unk are unsupported")
        vocab = model.get("vocab")
        merges = model.get("merges")
        if not isinstance(vocab, dict) or merges is None:
            raise VocabParseError(f"{vocab_path}: model must define vocab and merges")

        self._vocab: dict[str, int] = dict(vocab)
        self._ranks: dict[tuple[str, str], int] = {}
        for rank, merge in enumerate(merges):
            if isinstance(merge, str):
                parts = merge.split(" ")
            else:
                parts = list(merge)
            if len(parts) != 2:
                raise VocabParseError(f"{vocab_path}: bad merge entry {merge!r}")
            self._ranks[(parts[0], parts[1])] = rank
        self._ignore_merges = bool(model.get("ignore_merges", False))
        unk = model.get("unk_token")
        self._unk_id = self._vocab.get(unk) if unk is not None else None

        self._normalize = _build_normalizer(payload.get("normalizer"), vocab_path)
        pre_spec = payload.get("pre_tokenizer")
        self._pretokenize = _build_pretokenizer(pre_spec, vocab_path)
        self._byte_level = _uses_byte_level(pre_spec)
        self._prefix_space = _byte_level_prefix_space(pre_spec)
        self.tokenizer_id = f"{KIND_BPE}:{hashlib.sha256(raw).hexdigest()[:12]}"

    def _merge_word(self, symbols: list[str]) -> list[str]:
        while len(symbols) > 1:
            best_rank = None
            best_pair = None
            for pair in zip(symbols, symbols[1:]):
                rank = self._ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_pair = pair
            if best_pair is None:
                break
            merged: list[str] = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best_pair:
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return symbols

    def _encode_piece(self, piece: str) -> list[int]:
        if self._byte_level:
            table = _bytes_to_unicode()
            piece = "".join(table[b] for b in piece.encode("utf-8"))
        if self._ignore_merges and piece in self._vocab:
            return [self._vocab[piece]]
        symbols = self._merge_word(list(piece))
        ids: list[int] = []
        for sym in symbols:
            token_id = self._vocab.get(sym)
            if token_id is None:
                token_id = self._unk_id  # symbols outside the vocab drop when no unk is defined
            if token_id is not None:
                ids.append(token_id)
        return ids

    def tokenize(self, text: str) -> TokenStream:
        if not text:
            return TokenStream([], self.tokenizer_id)
        text = self._normalize(text)
        if self._prefix_space and not text.startswith(" "):
            text = " " + text
        ids: list[int] = []
        for piece in self._pretokenize([text]):
            ids.extend(self._encode_piece(piece))
        return TokenStream(ids, self.tokenizer_id)

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: list[str]) -> list[TokenStream]:
        return [self.tokenize(text) for text in X]


def load_bpe(path: str | Path) -> BpeTokenizer:
    return BpeTokenizer(str(path))


def make_tokenizer(kind: str, vocab_path: str | None = None):
    """Factory for --tok-kind {ws,cs,bpe}."""
    if kind == KIND_WHITESPACE:
        return WhitespaceTokenizer()
    if kind == KIND_PER_CHARACTER:
        return CharTokenizer()
    if kind == KIND_BPE:
        if not vocab_path:
            raise ValueError("bpe tokenizer requires a vocabulary path")
        return load_bpe(vocab_path)
    raise ValueError(f"unknown tokenizer kind: {kind!r}")
