"""Corpus BLEU, corpus chrF, and token-level answer F1.

BLEU is the canonical corpus score: modified n-gram precision over
orders 1..4 with brevity penalty min(1, e^(1 - r/c)) and a geometric
mean. No smoothing by default, so a zero precision at any contributing
order gives 0; add-k smoothing is available. Orders for which the
hypothesis corpus has no n-grams at all (corpus shorter than the order)
are excluded from the mean so that identical corpora always score 100.
Hypotheses are tokenized with 13a-style punctuation padding for spaced
scripts and per character for languages in bleu_charlevel_langs.

chrF is the character n-gram F-beta over orders 1..6: precision/recall
averaged across orders where both sides have n-grams, then
(1 + beta^2) * P * R / (beta^2 * P + R), scaled to [0, 100]. Whitespace
is removed first unless configured otherwise.

answer_f1 is the SQuAD-style token-overlap F1: lowercase, strip Unicode
punctuation, split on whitespace (per character for languages in
f1_charlevel_langs), 2PR/(P+R) over the multiset intersection. A gold
or predicted "unanswerable" is handled by exact match after
normalization.
"""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass

from .errors import LengthMismatchError

_PUNCT_PAD_1 = re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])")
_PUNCT_PAD_2 = re.compile(r"([^0-9])([\.,])")
_PUNCT_PAD_3 = re.compile(r"([\.,])([^0-9])")
_PUNCT_PAD_4 = re.compile(r"([0-9])(-)")
_SPACES = re.compile(r"\s+")


@dataclass
class MetricConfig:
    bleu_max_ngram: int = 4
    bleu_charlevel_langs: frozenset[str] = frozenset({"zho", "jpn"})
    bleu_smoothing: str = "none"  # "none" or "add-k"
    bleu_smoothing_k: float = 1.0
    chrf_char_order: int = 6
    chrf_beta: float = 2.0
    chrf_remove_whitespace: bool = True
    f1_charlevel_langs: frozenset[str] = frozenset({"zho", "jpn"})

    def __post_init__(self):
        if self.bleu_max_ngram < 1 or self.chrf_char_order < 1:
            raise ValueError("n-gram orders must be >= 1")
        if self.chrf_beta <= 0:
            raise ValueError("chrf_beta must be > 0")
        if self.bleu_smoothing not in ("none", "add-k"):
            raise ValueError(f"unknown bleu smoothing: {self.bleu_smoothing!r}")
        self.bleu_charlevel_langs = frozenset(self.bleu_charlevel_langs)
        self.f1_charlevel_langs = frozenset(self.f1_charlevel_langs)


def tokenize_13a(line: str) -> list[str]:
    """Whitespace tokens after mteval-13a-style punctuation padding."""
    norm = f" {line} "
    norm = _PUNCT_PAD_1.sub(r" \1 ", norm)
    norm = _PUNCT_PAD_2.sub(r"\1 \2 ", norm)
    norm = _PUNCT_PAD_3.sub(r" \1 \2", norm)
    norm = _PUNCT_PAD_4.sub(r"\1 \2 ", norm)
    return _SPACES.sub(" ", norm).strip().split()


def _bleu_tokens(line: str, lang: str | None, cfg: MetricConfig) -> list[str]:
    if lang is not None and lang in cfg.bleu_charlevel_langs:
        return [ch for ch in line if not ch.isspace()]
    return tokenize_13a(line)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    hyps: list[str],
    refs: list[str],
    cfg: MetricConfig | None = None,
    lang: str | None = None,
) -> float:
    """Corpus BLEU in [0, 100] with one reference per hypothesis."""
    if cfg is None:
        cfg = MetricConfig()
    if len(hyps) != len(refs):
        raise LengthMismatchError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise LengthMismatchError("empty corpus")

    orders = cfg.bleu_max_ngram
    correct = [0] * orders
    total = [0] * orders
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_tokens = _bleu_tokens(hyp, lang, cfg)
        ref_tokens = _bleu_tokens(ref, lang, cfg)
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, orders + 1):
            hyp_ngrams = _ngram_counts(hyp_tokens, n)
            if not hyp_ngrams:
                continue
            ref_ngrams = _ngram_counts(ref_tokens, n)
            total[n - 1] += sum(hyp_ngrams.values())
            correct[n - 1] += sum((hyp_ngrams & ref_ngrams).values())

    log_sum = 0.0
    effective = 0
    for n in range(1, orders + 1):
        num = float(correct[n - 1])
        den = float(total[n - 1])
        if cfg.bleu_smoothing == "add-k" and n > 1:
            num += cfg.bleu_smoothing_k
            den += cfg.bleu_smoothing_k
        if den == 0:
            continue
        if num == 0:
            return 0.0
        log_sum += math.log(num / den)
        effective += 1
    if effective == 0 or hyp_len == 0:
        return 0.0
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_sum / effective)


def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


def corpus_chrf(hyps: list[str], refs: list[str], cfg: MetricConfig | None = None) -> float:
    """Corpus chrF-beta in [0, 100]."""
    if cfg is None:
        cfg = MetricConfig()
    if len(hyps) != len(refs):
        raise LengthMismatchError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise LengthMismatchError("empty corpus")

    orders = cfg.chrf_char_order
    hyp_total = [0] * orders
    ref_total = [0] * orders
    match_total = [0] * orders
    for hyp, ref in zip(hyps, refs):
        if cfg.chrf_remove_whitespace:
            hyp = _SPACES.sub("", hyp)
            ref = _SPACES.sub("", ref)
        for n in range(1, orders + 1):
            hyp_ngrams = _char_ngrams(hyp, n)
            ref_ngrams = _char_ngrams(ref, n)
            hyp_total[n - 1] += sum(hyp_ngrams.values())
            ref_total[n - 1] += sum(ref_ngrams.values())
            match_total[n - 1] += sum((hyp_ngrams & ref_ngrams).values())

    precision = 0.0
    recall = 0.0
    effective = 0
    for n in range(orders):
        if hyp_total[n] > 0 and ref_total[n] > 0:
            precision += match_total[n] / hyp_total[n]
            recall += match_total[n] / ref_total[n]
            effective += 1
    if effective == 0:
        return 0.0
    precision /= effective
    recall /= effective
    if precision + recall == 0:
        return 0.0
    beta_sq = cfg.chrf_beta**2
    return 100.0 * (1 + beta_sq) * precision * recall / (beta_sq * precision + recall)


def _normalize_answer(text: str) -> str:
    text = text.lower()
    text = "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))
    return " ".join(text.split())


def answer_f1(
    pred: str,
    gold: str,
    lang: str | None = None,
    cfg: MetricConfig | None = None,
) -> float:
    """Token-overlap F1 in [0, 1]; symmetric in pred/gold."""
    if cfg is None:
        cfg = MetricConfig()
    pred_norm = _normalize_answer(pred)
    gold_norm = _normalize_answer(gold)
    if pred_norm == "unanswerable" or gold_norm == "unanswerable":
        return float(pred_norm == gold_norm)
    if lang is not None and lang in cfg.f1_charlevel_langs:
        pred_tokens = [ch for ch in pred_norm if not ch.isspace()]
        gold_tokens = [ch for ch in gold_norm if not ch.isspace()]
    else:
        pred_tokens = pred_norm.split()
        gold_tokens = gold_norm.split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)
