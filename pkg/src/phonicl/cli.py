"""Command-line entry points.

    phonicl prepare        --manifest M        filter + split datasets
    phonicl transliterate  --profiles DIR ...  fill IPA/roman text
    phonicl index          --pool F ...        build + save a BM25 snapshot
    phonicl retrieve       --manifest M        through the retrieval stage
    phonicl run            --manifest M        full pipeline -> report.json
    phonicl evaluate       --manifest M        re-score existing artifacts
    phonicl analyze        --report F ...      gap/gain tables
    phonicl dump-templates [--output F]        built-in prompt templates

Manifest verbs accept --output-dir, --seed, --k, and --cache-mode
overrides, applied before the manifest is hashed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import harness
from .corpus import load_dataset, save_dataset
from .g2p import load_profile, transliterate
from .promptkit import default_templates_text
from .retrieve import build_index, save_index
from .tokenizers import make_tokenizer


def _load_manifest(args) -> harness.RunManifest:
    path = Path(args.manifest)
    data = json.loads(path.read_text(encoding="utf-8"))
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "k", None) is not None:
        data["k"] = args.k
    if getattr(args, "cache_mode", None):
        data.setdefault("cache", {})["mode"] = args.cache_mode
    if getattr(args, "normalize", False):
        data["normalize"] = True
    manifest = harness.RunManifest.from_dict(data, base_dir=path.parent)
    # output location is not part of the experiment config: set it after
    # construction so the manifest hash (and report bytes) stay stable
    if getattr(args, "output_dir", None):
        manifest.output_dir = str(Path(args.output_dir).resolve())
    return manifest


def _add_manifest_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, help="run manifest JSON")
    parser.add_argument("--output-dir", help="override output directory")
    parser.add_argument("--seed", type=int, help="override manifest seed")
    parser.add_argument("--k", type=int, help="override shots per query")
    parser.add_argument("--cache-mode", choices=["record", "replay", "passthrough"], help="override cache mode")
    parser.add_argument("--normalize", action="store_true",
                        help="min-max normalize channel scores before mixed/all/harmonic aggregation")


def cmd_prepare(args) -> int:
    manifest = _load_manifest(args)
    harness.run_experiment(manifest, stop_after="prepare")
    print(f"prepared splits under {manifest.output_dir}/prepared")
    return 0


def cmd_retrieve(args) -> int:
    manifest = _load_manifest(args)
    harness.run_experiment(manifest, stop_after="retrieve")
    print(f"wrote {manifest.output_dir}/retrievals.jsonl")
    return 0


def cmd_run(args) -> int:
    manifest = _load_manifest(args)
    report = harness.run_experiment(manifest)
    print(harness.render_report_text(report))
    print(f"wrote {manifest.output_dir}/report.json")
    return 0


def cmd_evaluate(args) -> int:
    manifest = _load_manifest(args)
    report = harness.rescore(manifest)
    print(harness.render_report_text(report))
    print(f"wrote {manifest.output_dir}/report.json")
    return 0


def cmd_transliterate(args) -> int:
    examples = load_dataset(args.input, args.format)
    profile = None
    for example in examples:
        if profile is None or profile.lang != example.lang:
            profile = load_profile(args.profiles, args.lang or example.lang)
        text = transliterate(profile, example.script_text)
        if args.channel == "ipa":
            example.ipa_text = text
        else:
            example.roman_text = text
    save_dataset(examples, args.output, args.format)
    print(f"wrote {args.output}")
    return 0


def cmd_index(args) -> int:
    pool = load_dataset(args.pool, args.format)
    tokenizer = make_tokenizer(args.tok_kind, args.tokenizer)
    index = build_index(pool, args.channel, tokenizer)
    save_index(index, args.output)
    print(f"indexed {index.n_docs} docs ({args.channel}, {tokenizer.tokenizer_id}) -> {args.output}")
    return 0


def cmd_analyze(args) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    gap = harness.gap_report(report, args.latin.split(","), args.nonlatin.split(","))
    if args.output:
        Path(args.output).write_text(
            json.dumps(gap, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        print(f"wrote {args.output}")
    for task, entry in sorted(gap["tasks"].items()):
        print(f"{task}:")
        for strategy, value in sorted(entry["relative_gap_pct"].items()):
            gap_txt = "n/a" if value is None else f"{value:+.2f}%"
            print(f"  {strategy}: latin {entry['group_means']['latin'][strategy]:.2f}"
                  f" vs non-latin {entry['group_means']['non_latin'][strategy]:.2f}"
                  f" (gap {gap_txt})")
        for group, gains in sorted(entry["relative_gains_pct"].items()):
            for strategy, value in sorted(gains.items()):
                print(f"  {group} gain {strategy}: {value:+.2f}%")
    return 0


def cmd_dump_templates(args) -> int:
    text = default_templates_text()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_report_csv(args) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    rows = harness.report_csv_rows(report)
    if args.output:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(rows)
        print(f"wrote {args.output}")
    else:
        csv.writer(sys.stdout).writerows(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phonicl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("prepare", cmd_prepare), ("retrieve", cmd_retrieve),
                     ("run", cmd_run), ("evaluate", cmd_evaluate)):
        p = sub.add_parser(name)
        _add_manifest_args(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("transliterate")
    p.add_argument("--profiles", required=True)
    p.add_argument("--lang", help="profile language (defaults to each record's lang)")
    p.add_argument("--channel", choices=["ipa", "roman"], default="ipa")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=["jsonl", "tsv"])
    p.set_defaults(fn=cmd_transliterate)

    p = sub.add_parser("index")
    p.add_argument("--pool", required=True)
    p.add_argument("--channel", choices=["script", "ipa", "roman"], default="script")
    p.add_argument("--tok-kind", choices=["ws", "cs", "bpe"], default="ws")
    p.add_argument("--tokenizer", help="BPE vocabulary file (for --tok-kind bpe)")
    p.add_argument("--format", choices=["jsonl", "tsv"])
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("analyze")
    p.add_argument("--report", required=True)
    p.add_argument("--latin", required=True, help="comma-separated Latin-script langs")
    p.add_argument("--nonlatin", required=True, help="comma-separated non-Latin langs")
    p.add_argument("--output", help="write the gap report JSON here")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("dump-templates")
    p.add_argument("--output")
    p.set_defaults(fn=cmd_dump_templates)

    p = sub.add_parser("report-csv")
    p.add_argument("--report", required=True)
    p.add_argument("--output")
    p.set_defaults(fn=cmd_report_csv)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
