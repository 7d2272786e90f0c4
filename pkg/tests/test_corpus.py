import json

import pytest

from phonicl.corpus import (
    Example,
    QualityFilterConfig,
    load_dataset,
    make_split,
    quality_filter,
    save_dataset,
    save_split_manifest,
)
from phonicl.errors import DuplicateIdError, InsufficientDataError, MalformedRecordError
from phonicl.rng import SplitMix64


def _ex(i, lang="hin", task="flores", script="some text", target="target"):
    return Example(id=f"ex{i}", lang=lang, task=task, script_text=script, target_text=target)


def _write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_dataset(path) == []


def test_load_jsonl_preserves_order(tmp_path):
    rows = [
        {"id": "a", "lang": "hin", "task": "flores", "script_text": "x", "target_text": "y"},
        {"id": "b", "lang": "hin", "task": "flores", "script_text": "p", "target_text": "q", "ipa_text": "pʰ"},
        {"id": "c", "lang": "arb", "task": "flores", "script_text": "m", "target_text": "n"},
    ]
    path = tmp_path / "data.jsonl"
    _write_jsonl(path, rows)
    examples = load_dataset(path)
    assert [ex.id for ex in examples] == ["a", "b", "c"]
    assert examples[0].ipa_text == ""
    assert examples[1].ipa_text == "pʰ"
    assert examples[0].roman_text == ""


def test_load_missing_required_field(tmp_path):
    path = tmp_path / "bad.jsonl"
    _write_jsonl(path, [{"id": "a", "lang": "hin", "task": "flores", "script_text": "x"}])
    with pytest.raises(MalformedRecordError) as err:
        load_dataset(path)
    assert err.value.line_no == 1


def test_load_duplicate_id(tmp_path):
    row = {"id": "a", "lang": "hin", "task": "flores", "script_text": "x", "target_text": "y"}
    path = tmp_path / "dup.jsonl"
    _write_jsonl(path, [row, row])
    with pytest.raises(DuplicateIdError):
        load_dataset(path)


def test_tsv_round_trip_with_escapes(tmp_path):
    examples = [
        Example(id="t1", lang="jpn", task="aya-wiki", script_text="tab\there", target_text="line\nbreak"),
        Example(id="t2", lang="jpn", task="aya-wiki", script_text="back\\slash", target_text="ok", ipa_text="ipa"),
    ]
    path = tmp_path / "data.tsv"
    save_dataset(examples, path)
    loaded = load_dataset(path)
    assert loaded == examples


def test_jsonl_round_trip(tmp_path):
    examples = [_ex(i) for i in range(5)]
    path = tmp_path / "rt.jsonl"
    save_dataset(examples, path)
    assert load_dataset(path) == examples


def test_quality_filter_rejects_unk_and_lengths():
    cfg = QualityFilterConfig(min_chars=2, max_chars=10)
    keep = _ex(1, script="good text"[:10])
    noisy = Example(id="n", lang="hin", task="flores", script_text="ok here", target_text="has <unk> token")
    short = _ex(2, script="x")
    long = _ex(3, script="y" * 11)
    assert quality_filter([keep, noisy, short, long], cfg) == [keep]


def test_quality_filter_idempotent():
    cfg = QualityFilterConfig()
    examples = [_ex(i, script=("<unk>" if i % 3 == 0 else f"text {i}")) for i in range(30)]
    once = quality_filter(examples, cfg)
    assert quality_filter(once, cfg) == once


def test_split_sizes_ample_pool():
    examples = [_ex(i) for i in range(11000)]
    split = make_split(examples, test_size=500, pool_size=10000, seed=1)
    assert len(split.test) == 500
    assert len(split.pool) == 10000


def test_split_sizes_flores_case():
    examples = [_ex(i) for i in range(1512)]
    split = make_split(examples, test_size=500, pool_size=10000, seed=1)
    assert len(split.pool) == 1012


def test_split_sizes_mlqa_hin_case():
    examples = [_ex(i) for i in range(5692)]
    split = make_split(examples, test_size=500, pool_size=10000, seed=1)
    assert len(split.pool) == 5192


def test_split_insufficient_data():
    with pytest.raises(InsufficientDataError):
        make_split([_ex(i) for i in range(10)], test_size=10, pool_size=5, seed=0)


def test_split_deterministic_and_disjoint():
    examples = [_ex(i) for i in range(200)]
    a = make_split(examples, test_size=50, pool_size=100, seed=99)
    b = make_split(examples, test_size=50, pool_size=100, seed=99)
    assert [e.id for e in a.test] == [e.id for e in b.test]
    assert [e.id for e in a.pool] == [e.id for e in b.pool]
    assert not {e.id for e in a.test} & {e.id for e in a.pool}


def test_split_manifest_bytes_reproducible(tmp_path):
    examples = [_ex(i) for i in range(120)]
    paths = []
    for name in ("m1.json", "m2.json"):
        split = make_split(examples, test_size=20, pool_size=80, seed=7)
        path = tmp_path / name
        save_split_manifest(split, path)
        paths.append(path.read_bytes())
    assert paths[0] == paths[1]


def test_split_disjointness_randomized():
    rng = SplitMix64(2024)
    for case in range(200):
        n = 20 + rng.next_below(200)
        test_size = 1 + rng.next_below(max(1, n // 3))
        pool_size = 1 + rng.next_below(n)
        examples = [_ex(i, script=f"text {i} {case}") for i in range(n)]
        split = make_split(examples, test_size=test_size, pool_size=pool_size, seed=rng.next_u64())
        test_ids = {e.id for e in split.test}
        pool_ids = {e.id for e in split.pool}
        assert len(split.test) == test_size
        assert len(split.pool) == min(pool_size, n - test_size)
        assert not test_ids & pool_ids
