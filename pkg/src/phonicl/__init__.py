"""phonicl: phoneme-augmented in-context example retrieval.

Transcribe multilingual text to IPA or romanization, retrieve few-shot
examples with script/phoneme/mixed BM25 (or dense cosine) scoring,
assemble prompts, query a chat-completions endpoint, and evaluate.
"""

from .corpus import CorpusSplit, Example, QualityFilterConfig, load_dataset, make_split
from .g2p import G2pProfile, Transliterator, load_profile, transliterate
from .harness import RunManifest, gap_report, overlap_at_k, run_experiment
from .inference import EndpointConfig, ReplayCache, complete, complete_batch
from .metrics import MetricConfig, answer_f1, corpus_bleu, corpus_chrf
from .promptkit import PromptConfig, PromptTemplate, load_templates, render_prompt
from .retrieve import (
    Bm25Index,
    Bm25Params,
    IclRetriever,
    RetrievalResult,
    Strategy,
    VectorStore,
    bm25_score,
    build_index,
    load_index,
    retrieve,
    save_index,
)
from .tokenizers import BpeTokenizer, CharTokenizer, WhitespaceTokenizer, load_bpe, make_tokenizer

__version__ = "0.1.0"

__all__ = [
    "Bm25Index",
    "Bm25Params",
    "BpeTokenizer",
    "CharTokenizer",
    "CorpusSplit",
    "EndpointConfig",
    "Example",
    "G2pProfile",
    "IclRetriever",
    "MetricConfig",
    "PromptConfig",
    "PromptTemplate",
    "QualityFilterConfig",
    "ReplayCache",
    "RetrievalResult",
    "RunManifest",
    "Strategy",
    "Transliterator",
    "VectorStore",
    "WhitespaceTokenizer",
    "answer_f1",
    "bm25_score",
    "build_index",
    "complete",
    "complete_batch",
    "corpus_bleu",
    "corpus_chrf",
    "gap_report",
    "load_bpe",
    "load_dataset",
    "load_index",
    "load_profile",
    "load_templates",
    "make_split",
    "make_tokenizer",
    "overlap_at_k",
    "render_prompt",
    "retrieve",
    "run_experiment",
    "save_index",
    "transliterate",
]
