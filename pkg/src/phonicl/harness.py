"""End-to-end experiment orchestration and result analyses.

A run manifest (JSON) plus its input files determines a replayed run
byte-exactly: every random decision is sub-seeded from the manifest
seed (see rng.derive_seed; labels are "split:<task>:<lang>" and
"strategy:<spec>"), and the report echoes the manifest together with
the SHA-256 of its canonical JSON. Relative paths inside a manifest
resolve against the manifest file's directory.

Pipeline stages: prepare -> transliterate -> index -> retrieve ->
prompt -> complete -> score. Each stage's failure is wrapped in a
StageError carrying the stage label; artifacts written by earlier
stages remain on disk. Outputs under output_dir:

    prepared/<task>.<lang>.{pool,test}.jsonl and .split.json
    retrievals.jsonl   {task, lang, strategy, query_id, selected: [[id, score]...]}
    prompts.jsonl      {task, lang, strategy, query_id, prompt}
    completions.jsonl  {task, lang, strategy, query_id, fingerprint, text, error}
    report.json        scores, group averages, relative gains (percent,
                       vs the "random" strategy), pairwise overlap
                       table, config echo, manifest hash

Group/gap analyses macro-average over languages within a task and over
tasks overall; that aggregation choice is recorded in the gap report.
"""

from __future__ import annotations

import hashlib
import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import (
    Example,
    QualityFilterConfig,
    load_dataset,
    make_split,
    save_dataset,
    save_split_manifest,
)
from .errors import (
    MissingGroupError,
    PhoniclError,
    QueryMismatchError,
    StageError,
    TemplateParseError,
)
from .g2p import load_profile, transliterate
from .inference import EndpointConfig, ReplayCache, complete_batch, fingerprint
from .metrics import MetricConfig, answer_f1, corpus_bleu, corpus_chrf
from .promptkit import PromptConfig, render_prompt, load_templates
from .retrieve import (
    Bm25Params,
    RetrievalResult,
    Strategy,
    VectorStore,
    build_index,
    retrieve,
)
from .rng import derive_seed
from .tokenizers import make_tokenizer

MANIFEST_VERSION = 1
REPORT_VERSION = 1

DEFAULT_TASK_METRICS = {"aya-wiki": "bleu", "flores": "chrf", "aya-mlqa": "f1"}


@dataclass
class DatasetSpec:
    task: str
    lang: str
    path: str
    format: str | None = None


@dataclass
class RunManifest:
    seed: int = 0
    datasets: list[DatasetSpec] = field(default_factory=list)
    test_size: int = 500
    pool_size: int = 10000
    filter: QualityFilterConfig = field(default_factory=QualityFilterConfig)
    ipa_profiles_dir: str | None = None
    roman_profiles_dir: str | None = None
    tokenizer_kind: str = "ws"
    tokenizer_vocab: str | None = None
    bm25: Bm25Params = field(default_factory=Bm25Params)
    strategies: list[str] = field(default_factory=lambda: ["random", "mixed"])
    k: int = 3
    prompt: dict = field(default_factory=dict)
    templates_path: str | None = None
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    cache_path: str | None = None
    cache_mode: str = "replay"
    metrics: MetricConfig = field(default_factory=MetricConfig)
    task_metrics: dict = field(default_factory=dict)
    vectors_path: str | None = None
    normalize: bool = False
    retrieval_parallelism: int = 1
    output_dir: str = "out"
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "RunManifest":
        if data.get("version", MANIFEST_VERSION) != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version: {data.get('version')!r}")

        def resolve(path: str | None) -> str | None:
            if path is None or base_dir is None:
                return path
            candidate = Path(path)
            return str(candidate if candidate.is_absolute() else base_dir / candidate)

        split = data.get("split", {})
        g2p = data.get("g2p", {})
        tok = data.get("tokenizer", {})
        cache = data.get("cache", {})
        metric_cfg = dict(data.get("metrics", {}))
        for key in ("bleu_charlevel_langs", "f1_charlevel_langs"):
            if key in metric_cfg:
                metric_cfg[key] = frozenset(metric_cfg[key])
        return cls(
            seed=data.get("seed", 0),
            datasets=[DatasetSpec(d["task"], d["lang"], resolve(d["path"]), d.get("format")) for d in data.get("datasets", [])],
            test_size=split.get("test_size", 500),
            pool_size=split.get("pool_size", 10000),
            filter=QualityFilterConfig(**{**split.get("filter", {})}),
            ipa_profiles_dir=resolve(g2p.get("ipa_dir")),
            roman_profiles_dir=resolve(g2p.get("roman_dir")),
            tokenizer_kind=tok.get("kind", "ws"),
            tokenizer_vocab=resolve(tok.get("vocab_path")),
            bm25=Bm25Params(**data.get("bm25", {})),
            strategies=list(data.get("strategies", ["random", "mixed"])),
            k=data.get("k", 3),
            prompt=dict(data.get("prompt", {})),
            templates_path=resolve(data.get("templates_path")),
            endpoint=EndpointConfig(**data.get("endpoint", {})),
            cache_path=resolve(cache.get("path")),
            cache_mode=cache.get("mode", "replay"),
            metrics=MetricConfig(**metric_cfg),
            task_metrics=dict(data.get("task_metrics", {})),
            vectors_path=resolve(data.get("vectors_path")),
            normalize=bool(data.get("normalize", False)),
            retrieval_parallelism=int(data.get("retrieval_parallelism", 1)),
            output_dir=resolve(data.get("output_dir", "out")),
            raw=data,
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls.from_dict(data, base_dir=path.parent)

    def manifest_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def prompt_config(self) -> PromptConfig:
        return PromptConfig(k_shots=self.k, **self.prompt)

    def metric_for(self, task: str) -> str:
        metric = self.task_metrics.get(task, DEFAULT_TASK_METRICS.get(task))
        if metric is None:
            raise ValueError(f"no metric configured for task {task!r}")
        if metric not in ("bleu", "chrf", "f1"):
            raise ValueError(f"unknown metric {metric!r} for task {task!r}")
        return metric


def _stage(label: str, fn):
    try:
        return fn()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(label, exc) from exc


def _jsonl_write(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _jsonl_read(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _prepare(manifest: RunManifest):
    splits = {}
    for spec in manifest.datasets:
        examples = load_dataset(spec.path, spec.format)
        stray = {ex.lang for ex in examples} - {spec.lang}
        if stray:
            raise ValueError(f"{spec.path}: declared lang {spec.lang!r} but found {sorted(stray)}")
        split_seed = derive_seed(manifest.seed, f"split:{spec.task}:{spec.lang}")
        splits[(spec.task, spec.lang)] = make_split(
            examples,
            test_size=manifest.test_size,
            pool_size=manifest.pool_size,
            seed=split_seed,
            filter=manifest.filter,
        )
    return splits


def _transliterate_split(manifest: RunManifest, splits) -> None:
    profiles: dict[tuple[str, str], object] = {}

    def fill(example: Example, channel: str, profiles_dir: str) -> None:
        key = (channel, example.lang)
        if key not in profiles:
            profiles[key] = load_profile(profiles_dir, example.lang)
        text = transliterate(profiles[key], example.script_text)
        if channel == "ipa":
            example.ipa_text = text
        else:
            example.roman_text = text

    for split in splits.values():
        for example in split.pool + split.test:
            if manifest.ipa_profiles_dir and not example.ipa_text:
                fill(example, "ipa", manifest.ipa_profiles_dir)
            if manifest.roman_profiles_dir and not example.roman_text:
                fill(example, "roman", manifest.roman_profiles_dir)


def _write_prepared(out: Path, splits) -> None:
    prepared = out / "prepared"
    prepared.mkdir(parents=True, exist_ok=True)
    for (task, lang), split in splits.items():
        save_dataset(split.pool, prepared / f"{task}.{lang}.pool.jsonl")
        save_dataset(split.test, prepared / f"{task}.{lang}.test.jsonl")
        save_split_manifest(split, prepared / f"{task}.{lang}.split.json")


def _parsed_strategies(manifest: RunManifest) -> list[Strategy]:
    return [
        Strategy.parse(spec, seed=derive_seed(manifest.seed, f"strategy:{spec}"))
        for spec in manifest.strategies
    ]


def _retrieve_all(manifest: RunManifest, splits, tokenizer, vectors):
    strategies = _parsed_strategies(manifest)
    results: dict[tuple, dict[str, list[RetrievalResult]]] = {}
    rows: list[dict] = []
    for (task, lang), split in sorted(splits.items()):
        needed = sorted({ch for s in strategies for ch in s.needed_channels()})
        indexes = {channel: build_index(split.pool, channel, tokenizer) for channel in needed}
        pool_ids = [ex.id for ex in split.pool]
        per_strategy: dict[str, list[RetrievalResult]] = {}
        for strategy in strategies:

            def one(query, strategy=strategy):
                return retrieve(
                    query,
                    strategy,
                    manifest.k,
                    indexes,
                    manifest.bm25,
                    dense=vectors,
                    pool_ids=pool_ids,
                    tokenizer=tokenizer,
                    normalize=manifest.normalize,
                )

            if manifest.retrieval_parallelism > 1:
                with ThreadPoolExecutor(max_workers=manifest.retrieval_parallelism) as workers:
                    selected = list(workers.map(one, split.test))
            else:
                selected = [one(query) for query in split.test]
            per_strategy[strategy.spec()] = selected
            for result in selected:
                rows.append(
                    {
                        "task": task,
                        "lang": lang,
                        "strategy": result.strategy,
                        "query_id": result.query_id,
                        "selected": [[pool_ids[o], s] for o, s in result.selected],
                    }
                )
        results[(task, lang)] = per_strategy
    return results, rows


def _render_prompts(manifest: RunManifest, splits, retrievals):
    templates = load_templates(manifest.templates_path)
    config = manifest.prompt_config()
    rows: list[dict] = []
    for (task, lang), per_strategy in sorted(retrievals.items()):
        if task not in templates:
            raise TemplateParseError(f"no prompt template for task {task!r}")
        template = templates[task]
        split = splits[(task, lang)]
        for strategy_spec, results in sorted(per_strategy.items()):
            for query, result in zip(split.test, results):
                shots = [split.pool[o] for o in result.selected_ordinals()]
                prompt = render_prompt(template, config, shots, query)
                rows.append(
                    {
                        "task": task,
                        "lang": lang,
                        "strategy": strategy_spec,
                        "query_id": query.id,
                        "prompt": prompt,
                    }
                )
    return rows


def _complete_prompts(manifest: RunManifest, prompt_rows):
    cache = ReplayCache(manifest.cache_path, manifest.cache_mode) if manifest.cache_path else None
    outcomes = complete_batch(manifest.endpoint, [row["prompt"] for row in prompt_rows], cache)
    rows = []
    for row, outcome in zip(prompt_rows, outcomes):
        rows.append(
            {
                "task": row["task"],
                "lang": row["lang"],
                "strategy": row["strategy"],
                "query_id": row["query_id"],
                "fingerprint": fingerprint(manifest.endpoint, row["prompt"]),
                "text": outcome.text,
                "error": outcome.error,
            }
        )
    return rows


def _score_metric(metric: str, hyps: list[str], refs: list[str], lang: str, cfg: MetricConfig) -> float:
    if metric == "bleu":
        return corpus_bleu(hyps, refs, cfg, lang=lang)
    if metric == "chrf":
        return corpus_chrf(hyps, refs, cfg)
    return statistics.fmean(answer_f1(h, r, lang=lang, cfg=cfg) for h, r in zip(hyps, refs))


def _group_and_gains(scores: dict) -> tuple[dict, dict]:
    group_averages: dict = {}
    relative_gains: dict = {}
    for task, by_lang in scores.items():
        strategies = sorted({s for by_strategy in by_lang.values() for s in by_strategy})
        group_averages[task] = {
            s: statistics.fmean(by_lang[lang][s] for lang in by_lang) for s in strategies
        }
        gains = {}
        random_avg = group_averages[task].get("random")
        for s in strategies:
            if s == "random" or random_avg is None or random_avg <= 0:
                continue
            gains[s] = 100.0 * (group_averages[task][s] - random_avg) / random_avg
        relative_gains[task] = gains
    return group_averages, relative_gains


def _overlap_tables(retrievals, k: int) -> dict:
    overlap: dict = {}
    for (task, lang), per_strategy in sorted(retrievals.items()):
        names = sorted(per_strategy)
        table = {}
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                table[f"{a}|{b}"] = overlap_at_k(per_strategy[a], per_strategy[b], k)
        overlap.setdefault(task, {})[lang] = table
    return overlap


def _score_report(manifest: RunManifest, splits, retrievals, completion_rows) -> dict:
    by_key: dict[tuple, dict[str, str | None]] = {}
    errors: dict = {}
    for row in completion_rows:
        by_key.setdefault((row["task"], row["lang"], row["strategy"]), {})[row["query_id"]] = row["text"]
        if row["error"] is not None:
            errs = errors.setdefault(row["task"], {}).setdefault(row["lang"], {})
            errs[row["strategy"]] = errs.get(row["strategy"], 0) + 1

    scores: dict = {}
    counts: dict = {}
    for (task, lang, strategy), texts in sorted(by_key.items()):
        split = splits[(task, lang)]
        hyps = [texts.get(q.id) or "" for q in split.test]
        refs = [q.target_text for q in split.test]
        metric = manifest.metric_for(task)
        value = _score_metric(metric, hyps, refs, lang, manifest.metrics)
        scores.setdefault(task, {}).setdefault(lang, {})[strategy] = float(value)
        counts.setdefault(task, {})[lang] = len(split.test)

    group_averages, relative_gains = _group_and_gains(scores)
    report = {
        "version": REPORT_VERSION,
        "manifest_hash": manifest.manifest_hash(),
        "config": manifest.raw,
        "task_metrics": {task: manifest.metric_for(task) for task in scores},
        "scores": scores,
        "counts": counts,
        "completion_errors": errors,
        "group_averages": group_averages,
        "relative_gains_pct": relative_gains,
        "overlap_pct": _overlap_tables(retrievals, manifest.k),
    }
    audit_report(report)
    return report


def run_experiment(manifest: RunManifest, stop_after: str | None = None) -> dict | None:
    """Runs the pipeline and writes all artifacts under output_dir.

    stop_after may be "prepare", "retrieve", or "prompt" to run a
    prefix of the pipeline; the full run returns the report dict.
    """
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    splits = _stage("prepare", lambda: _prepare(manifest))
    _stage("transliterate", lambda: _transliterate_split(manifest, splits))
    _stage("prepare", lambda: _write_prepared(out, splits))
    if stop_after == "prepare":
        return None

    tokenizer = _stage("tokenize", lambda: make_tokenizer(manifest.tokenizer_kind, manifest.tokenizer_vocab))
    vectors = _stage(
        "index", lambda: VectorStore.load(manifest.vectors_path) if manifest.vectors_path else None
    )

    def do_retrieve():
        results, rows = _retrieve_all(manifest, splits, tokenizer, vectors)
        _jsonl_write(out / "retrievals.jsonl", rows)
        return results

    retrievals = _stage("retrieve", do_retrieve)
    if stop_after == "retrieve":
        return None

    def do_prompts():
        rows = _render_prompts(manifest, splits, retrievals)
        _jsonl_write(out / "prompts.jsonl", rows)
        return rows

    prompt_rows = _stage("prompt", do_prompts)
    if stop_after == "prompt":
        return None

    def do_complete():
        rows = _complete_prompts(manifest, prompt_rows)
        _jsonl_write(out / "completions.jsonl", rows)
        return rows

    completion_rows = _stage("complete", do_complete)

    report = _stage("score", lambda: _score_report(manifest, splits, retrievals, completion_rows))
    write_report(report, out / "report.json")
    return report


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def audit_report(report: dict) -> None:
    """Recomputes group averages and gains from raw scores; 1e-9 drift
    anywhere is an internal error."""
    group_averages, relative_gains = _group_and_gains(report["scores"])
    for task, by_strategy in group_averages.items():
        for strategy, value in by_strategy.items():
            if abs(report["group_averages"][task][strategy] - value) > 1e-9:
                raise PhoniclError(f"report audit failed: group average {task}/{strategy}")
    for task, by_strategy in relative_gains.items():
        for strategy, value in by_strategy.items():
            if abs(report["relative_gains_pct"][task][strategy] - value) > 1e-9:
                raise PhoniclError(f"report audit failed: relative gain {task}/{strategy}")


def overlap_at_k(results_a: list[RetrievalResult], results_b: list[RetrievalResult], k: int) -> float:
    """Mean over queries of |top-k(a) intersect top-k(b)| / k, as a percentage."""
    if len(results_a) != len(results_b):
        raise QueryMismatchError(f"{len(results_a)} vs {len(results_b)} queries")
    if not results_a:
        raise QueryMismatchError("no queries to compare")
    total = 0.0
    for ra, rb in zip(results_a, results_b):
        if ra.query_id != rb.query_id:
            raise QueryMismatchError(f"query ids differ: {ra.query_id!r} vs {rb.query_id!r}")
        total += len(set(ra.selected_ordinals()) & set(rb.selected_ordinals())) / k
    return 100.0 * total / len(results_a)


def gap_report(report: dict, latin_langs: list[str], nonlatin_langs: list[str]) -> dict:
    """Per-task group means, gaps, and per-strategy gains vs random for
    the Latin and non-Latin language groups."""
    latin = set(latin_langs)
    nonlatin = set(nonlatin_langs)
    tasks: dict = {}
    for task, by_lang in sorted(report["scores"].items()):
        groups = {
            "latin": sorted(lang for lang in by_lang if lang in latin),
            "non_latin": sorted(lang for lang in by_lang if lang in nonlatin),
        }
        for name, langs in groups.items():
            if not langs:
                raise MissingGroupError(f"task {task!r} has no {name} languages in the report")
        strategies = sorted({s for by_strategy in by_lang.values() for s in by_strategy})
        means = {
            name: {s: statistics.fmean(by_lang[lang][s] for lang in langs) for s in strategies}
            for name, langs in groups.items()
        }
        absolute_gap = {s: means["latin"][s] - means["non_latin"][s] for s in strategies}
        relative_gap = {
            s: (100.0 * absolute_gap[s] / means["latin"][s]) if means["latin"][s] > 0 else None
            for s in strategies
        }
        gains = {}
        for name in groups:
            base = means[name].get("random")
            gains[name] = {
                s: 100.0 * (means[name][s] - base) / base
                for s in strategies
                if s != "random" and base is not None and base > 0
            }
        tasks[task] = {
            "group_means": means,
            "absolute_gap": absolute_gap,
            "relative_gap_pct": relative_gap,
            "relative_gains_pct": gains,
        }

    strategies = sorted({s for t in tasks.values() for s in t["relative_gap_pct"]})
    mean_gap = {}
    for s in strategies:
        values = [t["relative_gap_pct"][s] for t in tasks.values() if t["relative_gap_pct"].get(s) is not None]
        if values:
            mean_gap[s] = statistics.fmean(values)
    return {
        "aggregation": "macro-over-tasks",
        "tasks": tasks,
        "mean_relative_gap_pct": mean_gap,
    }


def rescore(manifest: RunManifest) -> dict:
    """Rebuilds report.json from prepared artifacts and completions.jsonl
    without touching the network."""
    out = Path(manifest.output_dir)
    prepared = out / "prepared"
    splits = {}
    for spec in manifest.datasets:
        pool = load_dataset(prepared / f"{spec.task}.{spec.lang}.pool.jsonl")
        test = load_dataset(prepared / f"{spec.task}.{spec.lang}.test.jsonl")
        splits[(spec.task, spec.lang)] = _RescoredSplit(pool, test)

    retrieval_rows = _jsonl_read(out / "retrievals.jsonl")
    retrievals: dict[tuple, dict[str, list[RetrievalResult]]] = {}
    for row in retrieval_rows:
        key = (row["task"], row["lang"])
        pool_ids = {ex.id: i for i, ex in enumerate(splits[key].pool)}
        result = RetrievalResult(
            query_id=row["query_id"],
            strategy=row["strategy"],
            selected=[(pool_ids[i], s) for i, s in row["selected"]],
        )
        retrievals.setdefault(key, {}).setdefault(row["strategy"], []).append(result)

    completion_rows = _jsonl_read(out / "completions.jsonl")
    report = _score_report(manifest, splits, retrievals, completion_rows)
    write_report(report, out / "report.json")
    return report


@dataclass
class _RescoredSplit:
    pool: list[Example]
    test: list[Example]


def render_report_text(report: dict) -> str:
    """Plain-text tables mirroring the report JSON."""
    lines = [f"manifest {report['manifest_hash'][:12]}"]
    for task, by_lang in sorted(report["scores"].items()):
        metric = report.get("task_metrics", {}).get(task, "score")
        strategies = sorted({s for by_strategy in by_lang.values() for s in by_strategy})
        lines.append("")
        lines.append(f"{task} ({metric})")
        header = ["lang"] + strategies
        rows = [[lang] + [f"{by_lang[lang].get(s, float('nan')):.2f}" for s in strategies] for lang in sorted(by_lang)]
        rows.append(["avg"] + [f"{report['group_averages'][task][s]:.2f}" for s in strategies])
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        for row in [header] + rows:
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        gains = report.get("relative_gains_pct", {}).get(task, {})
        if gains:
            lines.append("gains vs random: " + ", ".join(f"{s} {v:+.2f}%" for s, v in sorted(gains.items())))
    return "\n".join(lines) + "\n"


def report_csv_rows(report: dict) -> list[list[str]]:
    rows = [["task", "lang", "strategy", "metric", "value"]]
    for task, by_lang in sorted(report["scores"].items()):
        metric = report.get("task_metrics", {}).get(task, "score")
        for lang, by_strategy in sorted(by_lang.items()):
            for strategy, value in sorted(by_strategy.items()):
                rows.append([task, lang, strategy, metric, repr(value)])
    return rows
