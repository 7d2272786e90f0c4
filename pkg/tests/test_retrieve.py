import json
import math

import numpy as np
import pytest

from phonicl.corpus import Example
from phonicl.errors import (
    EmptyPoolError,
    MissingChannelError,
    MissingVectorsError,
    OddKForSplitHalfError,
    SnapshotVersionMismatchError,
    TokenizerMismatchError,
)
from phonicl.retrieve import (
    Bm25Params,
    IclRetriever,
    Strategy,
    VectorStore,
    bm25_score,
    build_index,
    cosine_scores,
    load_index,
    rank_top_k,
    retrieve,
    save_index,
)
from phonicl.rng import SplitMix64
from phonicl.tokenizers import CharTokenizer, WhitespaceTokenizer

WS = WhitespaceTokenizer()


def _pool(script_texts, ipa_texts=None, roman_texts=None, lang="xxx", task="flores"):
    ipa_texts = ipa_texts or [""] * len(script_texts)
    roman_texts = roman_texts or [""] * len(script_texts)
    return [
        Example(
            id=f"d{i}",
            lang=lang,
            task=task,
            script_text=s,
            target_text=f"t{i}",
            ipa_text=p,
            roman_text=r,
        )
        for i, (s, p, r) in enumerate(zip(script_texts, ipa_texts, roman_texts))
    ]


def oracle_bm25(doc_tokens, query_tokens, k1=1.5, b=0.75, idf_floor=0.0):
    """Direct evaluation of the scoring formula, no inverted index."""
    n = len(doc_tokens)
    total = sum(len(d) for d in doc_tokens)
    if total == 0:
        return [0.0] * n
    avg = total / n
    scores = []
    for d in doc_tokens:
        s = 0.0
        for t in query_tokens:
            tf = d.count(t)
            if tf == 0:
                continue
            df = sum(1 for dd in doc_tokens if t in dd)
            idf = max(math.log((n - df + 0.5) / (df + 0.5) + 1.0), idf_floor)
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len(d) / avg))
        scores.append(s)
    return scores


# --- index construction ------------------------------------------------------

def test_build_index_counts():
    pool = _pool(["a b", "a a b", "c"])
    index = build_index(pool, "script", WS)
    assert index.n_docs == 3
    assert index.doc_len == [2, 3, 1]
    # avg_len is the mean of doc_len per the index invariant
    assert index.avg_len == pytest.approx(2.0)
    assert index.postings["a"] == [(0, 1), (1, 2)]
    assert index.postings["b"] == [(0, 1), (1, 1)]
    assert index.postings["c"] == [(2, 1)]


def test_build_index_empty_pool():
    with pytest.raises(EmptyPoolError):
        build_index([], "script", WS)


def test_build_index_no_channel_text():
    with pytest.raises(EmptyPoolError):
        build_index(_pool(["a"]), "ipa", WS)


def test_snapshot_bytes_deterministic(tmp_path):
    pool = _pool(["a b", "a a b", "c"])
    blobs = []
    for name in ("i1.json", "i2.json"):
        index = build_index(pool, "script", WS)
        save_index(index, tmp_path / name)
        blobs.append((tmp_path / name).read_bytes())
    assert blobs[0] == blobs[1]


def test_snapshot_round_trip(tmp_path):
    pool = _pool(["a b", "a a b", "c"])
    index = build_index(pool, "script", WS)
    save_index(index, tmp_path / "idx.json")
    assert load_index(tmp_path / "idx.json") == index


def test_snapshot_truncated_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"version": 1, "chan')
    with pytest.raises(SnapshotVersionMismatchError):
        load_index(path)


def test_snapshot_version_mismatch(tmp_path):
    path = tmp_path / "v9.json"
    path.write_text(json.dumps({"version": 9, "postings": [], "doc_len": [], "channel": "script", "tokenizer_id": "ws"}))
    with pytest.raises(SnapshotVersionMismatchError):
        load_index(path)


def test_tokenizer_mismatch_rejected_at_score_time():
    pool = _pool(["a b", "c d"])
    index = build_index(pool, "script", WS)
    with pytest.raises(TokenizerMismatchError):
        bm25_score(index, CharTokenizer().tokenize("a"), Bm25Params())


def test_loaded_snapshot_from_other_tokenizer_rejected_at_retrieve_time(tmp_path):
    pool = _pool(["a b", "c d"])
    index = build_index(pool, "script", CharTokenizer())
    save_index(index, tmp_path / "cs.json")
    loaded = load_index(tmp_path / "cs.json")
    query = Example(id="q", lang="xxx", task="flores", script_text="a", target_text="")
    with pytest.raises(TokenizerMismatchError):
        retrieve(query, Strategy.parse("script"), 1, {"script": loaded}, tokenizer=WS)


# --- scoring -----------------------------------------------------------------

def test_score_unindexed_query_all_zero():
    index = build_index(_pool(["a b", "c"]), "script", WS)
    scores = bm25_score(index, WS.tokenize("zz yy"))
    assert scores.tolist() == [0.0, 0.0]


def test_score_fixture_values():
    # frozen from a brute-force evaluation of the formula
    index = build_index(_pool(["a b", "a a b", "c"]), "script", WS)
    scores = bm25_score(index, WS.tokenize("a"), Bm25Params(k1=1.5, b=0.75))
    assert scores[0] == pytest.approx(0.4700036292457356, abs=1e-12)
    assert scores[1] == pytest.approx(0.5784660052255207, abs=1e-12)
    assert scores[2] == 0.0
    assert scores[1] > scores[0] > scores[2]


def test_duplicate_docs_tie_break_by_ordinal():
    pool = _pool(["same text here", "same text here", "other stuff"])
    index = build_index(pool, "script", WS)
    scores = bm25_score(index, WS.tokenize("same text"))
    assert scores[0] == pytest.approx(scores[1])
    assert rank_top_k(scores, 2) == [(0, pytest.approx(scores[0])), (1, pytest.approx(scores[1]))]


def test_score_matches_oracle_randomized():
    rng = SplitMix64(314159)
    vocab = [f"w{i}" for i in range(12)]
    for _ in range(300):
        n_docs = 1 + rng.next_below(20)
        docs = []
        for _ in range(n_docs):
            docs.append([vocab[rng.next_below(len(vocab))] for _ in range(rng.next_below(12))])
        if not any(docs):
            docs[0] = ["w0"]
        query = [vocab[rng.next_below(len(vocab))] for _ in range(1 + rng.next_below(8))]
        params = Bm25Params(
            k1=0.5 + rng.next_below(30) / 10.0,
            b=rng.next_below(101) / 100.0,
            idf_floor=(0.0, 0.1)[rng.next_below(2)],
        )
        pool = _pool([" ".join(d) for d in docs])
        index = build_index(pool, "script", WS)
        got = bm25_score(index, WS.tokenize(" ".join(query)), params)
        want = oracle_bm25(docs, query, params.k1, params.b, params.idf_floor)
        assert np.allclose(got, want, atol=1e-9)


# --- strategies --------------------------------------------------------------

def test_mixed_trivial_arithmetic():
    # script scores [1,0,2], ipa scores [3,1,0] -> means [2.0, 0.5, 1.0]
    mean = (np.array([1.0, 0.0, 2.0]) + np.array([3.0, 1.0, 0.0])) / 2
    assert rank_top_k(mean, 2) == [(0, 2.0), (2, 1.0)]


def test_mixed_equals_script_when_channels_identical():
    texts = ["red fox", "blue dog", "red dog runs", "fox den"]
    pool = _pool(texts, ipa_texts=texts)
    indexes = {c: build_index(pool, c, WS) for c in ("script", "ipa")}
    query = Example(id="q", lang="xxx", task="flores", script_text="red fox", target_text="", ipa_text="red fox")
    mixed = retrieve(query, Strategy.parse("mixed"), 3, indexes, tokenizer=WS)
    script = retrieve(query, Strategy.parse("script"), 3, indexes, tokenizer=WS)
    assert mixed.selected_ordinals() == script.selected_ordinals()


def test_singleton_mixed_equals_channel():
    texts = ["red fox", "blue dog", "red dog runs", "fox den"]
    ipa = ["ʀɛd fɔks", "blu dɔg", "ʀɛd dɔg ʀʌnz", "fɔks dɛn"]
    pool = _pool(texts, ipa_texts=ipa)
    indexes = {c: build_index(pool, c, WS) for c in ("script", "ipa")}
    query = Example(id="q", lang="xxx", task="flores", script_text="red fox", target_text="", ipa_text="ʀɛd fɔks")
    single = retrieve(query, Strategy(kind="mixed", channels=("ipa",)), 3, indexes, tokenizer=WS)
    ipa_only = retrieve(query, Strategy.parse("ipa"), 3, indexes, tokenizer=WS)
    assert single.selected == ipa_only.selected


def test_aggregation_scale_invariance():
    rng = SplitMix64(55)
    for _ in range(50):
        n = 2 + rng.next_below(12)
        a = np.array([rng.next_below(1000) / 10.0 for _ in range(n)])
        b = np.array([rng.next_below(1000) / 10.0 for _ in range(n)])
        c = 0.01 + rng.next_below(500) / 10.0
        k = 1 + rng.next_below(n)
        mixed = rank_top_k((a + b) / 2, k)
        mixed_scaled = rank_top_k((c * a + c * b) / 2, k)
        assert [o for o, _ in mixed] == [o for o, _ in mixed_scaled]
        with np.errstate(invalid="ignore"):
            harm = np.where(a + b > 0, 2 * a * b / np.where(a + b > 0, a + b, 1), 0.0)
            harm_s = np.where(a + b > 0, 2 * c * a * c * b / np.where(a + b > 0, c * a + c * b, 1), 0.0)
        assert [o for o, _ in rank_top_k(harm, k)] == [o for o, _ in rank_top_k(harm_s, k)]

        # divide-conquer and append compare raw scores across channels;
        # a common positive scale cancels out of both
        def dc(x, y):
            best = {}
            for o, s in rank_top_k(x, k) + rank_top_k(y, k):
                best[o] = max(best.get(o, -1.0), s)
            return [o for o, _ in sorted(best.items(), key=lambda it: (-it[1], it[0]))[:k]]

        def append(x, y):
            entries = [(-s, o, 0) for o, s in rank_top_k(x, k)] + [(-s, o, 1) for o, s in rank_top_k(y, k)]
            return [o for _, o, _ in sorted(entries)[:k]]

        assert dc(a, b) == dc(c * a, c * b)
        assert append(a, b) == append(c * a, c * b)


def test_append_duplicate_when_both_channels_agree():
    texts = ["red fox", "blue dog", "green cat"]
    pool = _pool(texts, ipa_texts=texts)
    indexes = {c: build_index(pool, c, WS) for c in ("script", "ipa")}
    query = Example(id="q", lang="xxx", task="flores", script_text="red fox", target_text="", ipa_text="red fox")
    result = retrieve(query, Strategy.parse("append"), 2, indexes, tokenizer=WS)
    assert result.selected_ordinals() == [0, 0]


def test_split_half_odd_k_rejected():
    texts = ["red fox", "blue dog"]
    pool = _pool(texts, ipa_texts=texts)
    indexes = {c: build_index(pool, c, WS) for c in ("script", "ipa")}
    query = Example(id="q", lang="xxx", task="flores", script_text="red", target_text="", ipa_text="red")
    with pytest.raises(OddKForSplitHalfError):
        retrieve(query, Strategy.parse("split-half"), 3, indexes, tokenizer=WS)


def test_missing_channel():
    pool = _pool(["red fox"], ipa_texts=["ʀɛd fɔks"])
    indexes = {"script": build_index(pool, "script", WS)}
    query = Example(id="q", lang="xxx", task="flores", script_text="red", target_text="", ipa_text="ʀɛd")
    with pytest.raises(MissingChannelError):
        retrieve(query, Strategy.parse("mixed"), 1, indexes, tokenizer=WS)


def test_random_reproducible_and_uniform():
    pool = _pool([f"doc {i}" for i in range(10)])
    indexes = {"script": build_index(pool, "script", WS)}
    query = Example(id="q9", lang="xxx", task="flores", script_text="doc", target_text="")
    first = retrieve(query, Strategy(kind="random", seed=123), 3, indexes, tokenizer=WS)
    again = retrieve(query, Strategy(kind="random", seed=123), 3, indexes, tokenizer=WS)
    assert first.selected == again.selected
    assert len(set(first.selected_ordinals())) == 3

    counts = {i: 0 for i in range(10)}
    n_seeds = 2000
    for seed in range(n_seeds):
        result = retrieve(query, Strategy(kind="random", seed=seed), 3, indexes, tokenizer=WS)
        for o in result.selected_ordinals():
            counts[o] += 1
    expected = n_seeds * 3 / 10
    chi2 = sum((counts[i] - expected) ** 2 / expected for i in range(10))
    assert chi2 < 30  # 9 dof


def test_dense_cosine_properties():
    store = VectorStore({"q": np.array([1.0, 2.0, 3.0]), "d": np.array([2.0, 4.0, 6.0])})
    assert cosine_scores(store.get("q"), store.matrix(["q"]))[0] == pytest.approx(1.0)
    assert cosine_scores(store.get("q"), store.matrix(["d"]))[0] == pytest.approx(1.0)
    scaled = cosine_scores(7.5 * store.get("q"), store.matrix(["d"]))
    assert scaled[0] == pytest.approx(1.0)
    zero = cosine_scores(np.zeros(3), store.matrix(["d"]))
    assert zero[0] == 0.0


def test_dense_missing_vector():
    store = VectorStore({"d0": np.array([1.0, 0.0])})
    pool = _pool(["red"])
    query = Example(id="missing", lang="xxx", task="flores", script_text="red", target_text="")
    with pytest.raises(MissingVectorsError):
        retrieve(query, Strategy.parse("dense"), 1, {}, dense=store, pool_ids=["d0"])


def test_vector_store_jsonl_round_trip(tmp_path):
    path = tmp_path / "vecs.jsonl"
    rows = [{"id": "a", "vector": [1.0, 0.0]}, {"id": "b", "vector": [0.0, 1.0]}]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    store = VectorStore.load(path)
    assert store.get("a").tolist() == [1.0, 0.0]
    with pytest.raises(MissingVectorsError):
        VectorStore({"a": np.array([1.0]), "b": np.array([1.0, 2.0])})


def test_strategy_parse_round_trip():
    for spec in ("random", "script", "ipa", "roman", "mixed", "all", "harmonic",
                 "split-half:ipa-first", "split-half:shuffle", "divide-conquer", "append", "dense"):
        assert Strategy.parse(spec).spec() == spec
    assert Strategy.parse("mixed:script+roman").channels == ("script", "roman")
    with pytest.raises(ValueError):
        Strategy.parse("harmonic:script")
    with pytest.raises(ValueError):
        Strategy.parse("nonsense")


def test_icl_retriever_estimator_api(tmp_path):
    texts = ["red fox jumps", "blue dog", "red dog runs", "fox den", "green cat"]
    ipa = ["ʀɛd fɔks ʤ", "blu dɔg", "ʀɛd dɔg ʀ", "fɔks dɛn", "gʀin kæt"]
    pool = _pool(texts, ipa_texts=ipa)
    retriever = IclRetriever(strategy="mixed", k=2, tokenizer=WS)
    assert retriever.get_params()["k"] == 2
    retriever.fit(pool)
    query = Example(id="q", lang="xxx", task="flores", script_text="red fox", target_text="", ipa_text="ʀɛd fɔks")
    result = retriever.retrieve(query)
    assert len(result.selected) == 2
    assert retriever.shots_for(result)[0].id.startswith("d")
    batch = retriever.retrieve_batch([query, query], parallelism=2)
    assert batch[0].selected == batch[1].selected == result.selected


def test_icl_retriever_requires_fit():
    retriever = IclRetriever(tokenizer=WS)
    query = Example(id="q", lang="xxx", task="flores", script_text="x", target_text="")
    with pytest.raises(RuntimeError):
        retriever.retrieve(query)
