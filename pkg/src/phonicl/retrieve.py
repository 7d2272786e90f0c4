"""BM25 indexing, dense cosine scoring, and top-k selection strategies.

Scoring formula (Okapi BM25)::

    score(d, q) = sum over t in q of
        idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len_d / avg_len))
    idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1), floored at idf_floor

The sum runs over the query token stream as given, so a token repeated
in the query contributes once per occurrence.

Strategies (k selections per query, ties broken by ascending ordinal):

- random       seeded sampling without replacement; sub-seeded per
               query as derive_seed(seed, "random:" + query_id)
- script/ipa/roman  top-k of that channel's scores
- mixed        per-doc arithmetic mean of the chosen channels, top-k
- all          mixed over script+ipa+roman
- harmonic     per-doc 2ab/(a+b) of two channels, 0 when a+b == 0
- split-half   top-(k/2) from each of two channels, concatenated in the
               configured order (script-first, ipa-first, or a seeded
               shuffle of the script-first list); a doc already taken
               from the first half is replaced by the next-ranked
               unseen doc of the second half's channel; k must be even
- divide-conquer  both channels' top-k concatenated into a 2k pool,
               de-duplicated keeping each doc's maximum raw score,
               re-ranked, top-k
- append       both top-k lists concatenated with raw scores; the k
               highest entries kept without de-duplication, so one doc
               may be selected twice
- dense        cosine similarity between the query vector and pool
               vectors from a sidecar file, top-k

divide-conquer and append compare raw scores across channels and are
therefore scale-sensitive; mixed/all/harmonic average raw scores unless
normalize=True min-max rescales each channel first.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import Example
from .errors import (
    EmptyPoolError,
    MissingChannelError,
    MissingVectorsError,
    OddKForSplitHalfError,
    SnapshotVersionMismatchError,
    TokenizerMismatchError,
)
from .rng import SplitMix64, derive_seed
from .tokenizers import TokenStream

CHANNELS = ("script", "ipa", "roman")

SNAPSHOT_VERSION = 1

STRATEGY_KINDS = (
    "random",
    "script",
    "ipa",
    "roman",
    "mixed",
    "all",
    "harmonic",
    "split-half",
    "divide-conquer",
    "append",
    "dense",
)

SPLIT_HALF_ORDERS = ("script-first", "ipa-first", "shuffle")


@dataclass
class Bm25Params:
    k1: float = 1.5
    b: float = 0.75
    idf_floor: float = 0.0

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")
        if self.idf_floor < 0:
            raise ValueError("idf_floor must be >= 0")


class Bm25Index:
    """Inverted index over one channel's tokenized texts."""

    def __init__(self, postings: dict, doc_len: list[int], channel: str, tokenizer_id: str):
        self.postings = postings  # term -> list of (doc_ordinal, term_frequency)
        self.doc_len = list(doc_len)
        self.n_docs = len(self.doc_len)
        self.avg_len = sum(self.doc_len) / self.n_docs if self.n_docs else 0.0
        self.channel = channel
        self.tokenizer_id = tokenizer_id

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Bm25Index)
            and self.postings == other.postings
            and self.doc_len == other.doc_len
            and self.channel == other.channel
            and self.tokenizer_id == other.tokenizer_id
        )


def build_index(pool: list[Example], channel: str, tokenizer) -> Bm25Index:
    """Indexes the pool's channel texts under the given tokenizer."""
    if not pool:
        raise EmptyPoolError("cannot index an empty pool")
    texts = [ex.channel_text(channel) for ex in pool]
    if not any(texts):
        raise EmptyPoolError(f"no document has {channel} text")
    postings: dict = {}
    doc_len: list[int] = []
    for ordinal, text in enumerate(texts):
        stream = tokenizer.tokenize(text)
        doc_len.append(len(stream.tokens))
        counts: dict = {}
        for token in stream.tokens:
            counts[token] = counts.get(token, 0) + 1
        for token, tf in counts.items():
            postings.setdefault(token, []).append((ordinal, tf))
    return Bm25Index(postings, doc_len, channel, tokenizer.tokenizer_id)


def bm25_score(index: Bm25Index, query_tokens: TokenStream, params: Bm25Params | None = None) -> np.ndarray:
    """Dense nonnegative scores over the pool for one query."""
    if params is None:
        params = Bm25Params()
    if query_tokens.tokenizer_id != index.tokenizer_id:
        raise TokenizerMismatchError(
            f"query tokenized with {query_tokens.tokenizer_id!r}, index built with {index.tokenizer_id!r}"
        )
    scores = np.zeros(index.n_docs)
    if index.avg_len == 0:
        return scores
    norm = params.k1 * (1.0 - params.b + params.b * np.asarray(index.doc_len, dtype=float) / index.avg_len)
    for token in query_tokens.tokens:
        plist = index.postings.get(token)
        if not plist:
            continue
        df = len(plist)
        idf = max(np.log((index.n_docs - df + 0.5) / (df + 0.5) + 1.0), params.idf_floor)
        for ordinal, tf in plist:
            scores[ordinal] += idf * tf * (params.k1 + 1.0) / (tf + norm[ordinal])
    return scores


def save_index(index: Bm25Index, path: str | Path) -> None:
    """Versioned JSON snapshot; identical inputs give identical bytes."""
    payload = {
        "version": SNAPSHOT_VERSION,
        "channel": index.channel,
        "tokenizer_id": index.tokenizer_id,
        "n_docs": index.n_docs,
        "doc_len": index.doc_len,
        "postings": [[term, [[o, tf] for o, tf in plist]] for term, plist in sorted(index.postings.items())],
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


def load_index(path: str | Path) -> Bm25Index:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SnapshotVersionMismatchError(f"{path}: not a readable index snapshot: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != SNAPSHOT_VERSION:
        raise SnapshotVersionMismatchError(
            f"{path}: snapshot version {payload.get('version') if isinstance(payload, dict) else '?'} "
            f"!= {SNAPSHOT_VERSION}"
        )
    postings = {term: [(o, tf) for o, tf in plist] for term, plist in payload["postings"]}
    return Bm25Index(postings, payload["doc_len"], payload["channel"], payload["tokenizer_id"])


class VectorStore:
    """Precomputed vectors from a JSONL sidecar of {id, vector}."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        dims = {v.shape[0] for v in vectors.values()}
        if len(dims) > 1:
            raise MissingVectorsError(f"inconsistent vector dimensions: {sorted(dims)}")
        self.vectors = vectors

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        path = Path(path)
        if not path.exists():
            raise MissingVectorsError(f"vector sidecar not found: {path}")
        vectors: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                vectors[record["id"]] = np.asarray(record["vector"], dtype=float)
        return cls(vectors)

    def get(self, record_id: str) -> np.ndarray:
        try:
            return self.vectors[record_id]
        except KeyError:
            raise MissingVectorsError(f"no vector for id {record_id!r}") from None

    def matrix(self, ids: list[str]) -> np.ndarray:
        return np.stack([self.get(i) for i in ids])


def cosine_scores(query_vec: np.ndarray, pool_matrix: np.ndarray) -> np.ndarray:
    """Cosine similarity per pool row; zero-norm vectors score 0."""
    qn = np.linalg.norm(query_vec)
    dn = np.linalg.norm(pool_matrix, axis=1)
    denom = qn * dn
    sims = np.zeros(pool_matrix.shape[0])
    ok = denom > 0
    sims[ok] = pool_matrix[ok] @ query_vec / denom[ok]
    return sims


@dataclass(frozen=True)
class Strategy:
    """One top-k selection strategy with its options."""

    kind: str
    channels: tuple[str, ...] = ()
    order: str = "script-first"  # split-half only
    seed: int = 0  # random / shuffled split-half

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind: {self.kind!r}")
        if self.order not in SPLIT_HALF_ORDERS:
            raise ValueError(f"unknown split-half order: {self.order!r}")
        for channel in self.channels:
            if channel not in CHANNELS:
                raise ValueError(f"unknown channel: {channel!r}")
        if self.kind in ("mixed", "harmonic") and len(set(self.channels)) != len(self.channels):
            raise ValueError("channels must be distinct")
        if self.kind == "harmonic" and len(self.channels) != 2:
            raise ValueError("harmonic requires exactly 2 channels")
        if self.kind == "mixed" and not self.channels:
            raise ValueError("mixed requires at least 1 channel")

    @classmethod
    def parse(cls, spec: str, seed: int = 0) -> "Strategy":
        """Parses CLI/manifest strings such as "mixed", "mixed:script+ipa",
        "split-half:ipa-first", "harmonic:script+roman"."""
        kind, _, arg = spec.partition(":")
        kind = kind.strip()
        arg = arg.strip()
        if kind == "split-half":
            return cls(kind=kind, channels=("script", "ipa"), order=arg or "script-first", seed=seed)
        if kind in ("mixed", "harmonic"):
            channels = tuple(arg.split("+")) if arg else ("script", "ipa")
            return cls(kind=kind, channels=channels, seed=seed)
        if kind == "all":
            return cls(kind=kind, channels=CHANNELS, seed=seed)
        if kind in ("divide-conquer", "append"):
            channels = tuple(arg.split("+")) if arg else ("script", "ipa")
            if len(channels) != 2:
                raise ValueError(f"{kind} requires exactly 2 channels")
            return cls(kind=kind, channels=channels, seed=seed)
        if arg:
            raise ValueError(f"strategy {kind!r} takes no argument")
        return cls(kind=kind, seed=seed)

    def spec(self) -> str:
        if self.kind == "split-half":
            return f"split-half:{self.order}"
        if self.kind in ("mixed", "harmonic", "divide-conquer", "append") and self.channels not in (
            (),
            ("script", "ipa"),
        ):
            return f"{self.kind}:{'+'.join(self.channels)}"
        return self.kind

    def needed_channels(self) -> tuple[str, ...]:
        if self.kind in ("script", "ipa", "roman"):
            return (self.kind,)
        if self.kind == "all":
            return CHANNELS
        if self.kind in ("mixed", "harmonic", "divide-conquer", "append"):
            return self.channels or ("script", "ipa")
        if self.kind == "split-half":
            return ("script", "ipa")
        return ()


@dataclass
class RetrievalResult:
    query_id: str
    strategy: str
    selected: list[tuple[int, float]]
    per_channel: dict[str, list[tuple[int, float]]] = field(default_factory=dict)

    def selected_ordinals(self) -> list[int]:
        return [ordinal for ordinal, _ in self.selected]


def _minmax(scores: np.ndarray) -> np.ndarray:
    lo, hi = scores.min(), scores.max()
    if hi > lo:
        return (scores - lo) / (hi - lo)
    return np.zeros_like(scores)


def rank_top_k(scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k (ordinal, score), descending score, ascending ordinal ties."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [(int(i), float(scores[i])) for i in order[:k]]


def _split_half_select(
    ranked_a: list[tuple[int, float]],
    ranked_b: list[tuple[int, float]],
    k: int,
) -> list[tuple[int, float]]:
    half = k // 2
    first = ranked_a[:half]
    taken = {ordinal for ordinal, _ in first}
    second: list[tuple[int, float]] = []
    for ordinal, score in ranked_b:
        if len(second) == half:
            break
        if ordinal in taken:
            continue
        second.append((ordinal, score))
        taken.add(ordinal)
    return first + second


def retrieve(
    query: Example,
    strategy: Strategy | str,
    k: int,
    indexes: dict[str, Bm25Index],
    params: Bm25Params | None = None,
    dense: VectorStore | None = None,
    pool_ids: list[str] | None = None,
    tokenizer=None,
    normalize: bool = False,
    top_m: int = 10,
) -> RetrievalResult:
    """Selects top-k pool examples for one query under one strategy."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(strategy, str):
        strategy = Strategy.parse(strategy)
    if params is None:
        params = Bm25Params()

    needed = strategy.needed_channels()
    for channel in needed:
        if channel not in indexes:
            raise MissingChannelError(f"strategy {strategy.spec()!r} needs channel {channel!r}")
    if needed and tokenizer is None:
        raise ValueError("BM25 strategies require the query tokenizer")

    n_docs = None
    if indexes:
        sizes = {index.n_docs for index in indexes.values()}
        if len(sizes) > 1:
            raise MissingChannelError(f"channel indexes disagree on pool size: {sorted(sizes)}")
        n_docs = sizes.pop()
    if n_docs is None and pool_ids is not None:
        n_docs = len(pool_ids)

    channel_scores: dict[str, np.ndarray] = {}
    for channel in needed:
        index = indexes[channel]
        stream = tokenizer.tokenize(query.channel_text(channel))
        channel_scores[channel] = bm25_score(index, stream, params)

    per_channel = {channel: rank_top_k(scores, top_m) for channel, scores in channel_scores.items()}

    if strategy.kind == "random":
        if n_docs is None:
            raise EmptyPoolError("random strategy needs indexes or pool_ids to size the pool")
        rng = SplitMix64(derive_seed(strategy.seed, f"random:{query.id}"))
        picks = rng.sample_without_replacement(n_docs, min(k, n_docs))
        selected = [(ordinal, 0.0) for ordinal in picks]
        return RetrievalResult(query.id, strategy.spec(), selected, per_channel)

    if strategy.kind == "dense":
        if dense is None or pool_ids is None:
            raise MissingVectorsError("dense strategy needs a vector store and pool ids")
        sims = cosine_scores(dense.get(query.id), dense.matrix(pool_ids))
        per_channel["dense"] = rank_top_k(sims, top_m)
        return RetrievalResult(query.id, strategy.spec(), rank_top_k(sims, k), per_channel)

    if strategy.kind in ("script", "ipa", "roman"):
        scores = channel_scores[strategy.kind]
        return RetrievalResult(query.id, strategy.spec(), rank_top_k(scores, k), per_channel)

    vectors = [channel_scores[channel] for channel in needed]
    if normalize and strategy.kind in ("mixed", "all", "harmonic"):
        vectors = [_minmax(v) for v in vectors]

    if strategy.kind in ("mixed", "all"):
        agg = np.mean(vectors, axis=0)
        return RetrievalResult(query.id, strategy.spec(), rank_top_k(agg, k), per_channel)

    if strategy.kind == "harmonic":
        a, b = vectors
        total = a + b
        agg = np.zeros_like(a)
        nz = total > 0
        agg[nz] = 2.0 * a[nz] * b[nz] / total[nz]
        return RetrievalResult(query.id, strategy.spec(), rank_top_k(agg, k), per_channel)

    if strategy.kind == "split-half":
        if k % 2 != 0:
            raise OddKForSplitHalfError(f"split-half needs even k, got {k}")
        ranked = {channel: rank_top_k(channel_scores[channel], n_docs or k) for channel in ("script", "ipa")}
        if strategy.order == "ipa-first":
            selected = _split_half_select(ranked["ipa"], ranked["script"], k)
        else:
            selected = _split_half_select(ranked["script"], ranked["ipa"], k)
            if strategy.order == "shuffle":
                rng = SplitMix64(derive_seed(strategy.seed, f"shuffle:{query.id}"))
                rng.shuffle(selected)
        return RetrievalResult(query.id, strategy.spec(), selected, per_channel)

    first, second = needed
    top_a = rank_top_k(channel_scores[first], k)
    top_b = rank_top_k(channel_scores[second], k)

    if strategy.kind == "divide-conquer":
        best: dict[int, float] = {}
        for ordinal, score in top_a + top_b:
            if ordinal not in best or score > best[ordinal]:
                best[ordinal] = score
        merged = sorted(best.items(), key=lambda item: (-item[1], item[0]))
        return RetrievalResult(query.id, strategy.spec(), [(o, float(s)) for o, s in merged[:k]], per_channel)

    # append: keep duplicates; ties broken by ordinal then channel order
    entries = [(score, ordinal, 0) for ordinal, score in top_a] + [
        (score, ordinal, 1) for ordinal, score in top_b
    ]
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    selected = [(ordinal, float(score)) for score, ordinal, _ in entries[:k]]
    return RetrievalResult(query.id, strategy.spec(), selected, per_channel)


class IclRetriever(BaseEstimator):
    """Estimator facade: fit on a pool of examples, then retrieve top-k
    in-context examples per query."""

    def __init__(
        self,
        strategy: str = "mixed",
        k: int = 3,
        tokenizer=None,
        k1: float = 1.5,
        b: float = 0.75,
        idf_floor: float = 0.0,
        normalize: bool = False,
        seed: int = 0,
        vectors_path: str | None = None,
        top_m: int = 10,
    ):
        self.strategy = strategy
        self.k = k
        self.tokenizer = tokenizer
        self.k1 = k1
        self.b = b
        self.idf_floor = idf_floor
        self.normalize = normalize
        self.seed = seed
        self.vectors_path = vectors_path
        self.top_m = top_m

    def _strategy(self) -> Strategy:
        if isinstance(self.strategy, Strategy):
            return self.strategy
        return Strategy.parse(self.strategy, seed=self.seed)

    def fit(self, pool: list[Example], y=None):
        if not pool:
            raise EmptyPoolError("cannot fit on an empty pool")
        strategy = self._strategy()
        needed = strategy.needed_channels()
        if needed and self.tokenizer is None:
            raise ValueError("BM25 strategies require a tokenizer")
        self.pool_ = list(pool)
        self.pool_ids_ = [ex.id for ex in pool]
        self.indexes_ = {channel: build_index(pool, channel, self.tokenizer) for channel in needed}
        self.vectors_ = VectorStore.load(self.vectors_path) if self.vectors_path else None
        if strategy.kind == "dense" and self.vectors_ is None:
            raise MissingVectorsError("dense strategy requires vectors_path")
        return self

    def retrieve(self, query: Example) -> RetrievalResult:
        if not hasattr(self, "indexes_"):
            raise RuntimeError("IclRetriever is not fitted; call fit(pool) first")
        return retrieve(
            query,
            self._strategy(),
            self.k,
            self.indexes_,
            Bm25Params(self.k1, self.b, self.idf_floor),
            dense=self.vectors_,
            pool_ids=self.pool_ids_,
            tokenizer=self.tokenizer,
            normalize=self.normalize,
            top_m=self.top_m,
        )

    def retrieve_batch(self, queries: list[Example], parallelism: int = 1) -> list[RetrievalResult]:
        """Order-preserving batch retrieval with bounded worker fan-out."""
        if parallelism <= 1:
            return [self.retrieve(query) for query in queries]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(self.retrieve, queries))

    def shots_for(self, result: RetrievalResult) -> list[Example]:
        return [self.pool_[ordinal] for ordinal in result.selected_ordinals()]
