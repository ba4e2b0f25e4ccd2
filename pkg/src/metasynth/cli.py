"""Command-line entry point.

Subcommands: synth-docs, synth-instructions, synth-responses, measure,
contaminate, resume. Exit codes: 0 success, 2 config error, 3 provider
error, 4 partial run (some workers discarded or incomplete).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .contamination import ContaminationError, em_overlap
from .corpus import corpus_order_hash, load_corpus
from .diversity import ReferenceFrequencies, measure_corpus
from .gateway import GatewayError
from .report import append_report_csv, render_report_figures, write_report_json
from .runner import ConfigError, ManifestError, RunConfig, load_run_config, resume, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_PARTIAL = 4

logger = logging.getLogger("metasynth.cli")


def _load_config(args: argparse.Namespace, mode: str) -> RunConfig:
    config = load_run_config(args.config)
    config.mode = mode
    # flags override file keys
    if getattr(args, "workers", None) is not None:
        config.workers = args.workers
    if getattr(args, "docs_per_seed_set", None) is not None:
        config.docs_per_seed_set = args.docs_per_seed_set
    if getattr(args, "output_dir", None):
        config.output_dir = args.output_dir
    if getattr(args, "rng_seed", None) is not None:
        config.rng_seed = args.rng_seed
    if getattr(args, "run_id", None):
        config.run_id = args.run_id
    if getattr(args, "domain", None):
        config.domain = args.domain
    return config


def _run_and_report(config: RunConfig) -> int:
    manifest = run(config)
    print(json.dumps(manifest.to_json_dict(), indent=2))
    return EXIT_OK if manifest.all_completed() else EXIT_PARTIAL


def _cmd_synth_docs(args: argparse.Namespace) -> int:
    mode = "template_docs" if args.baseline == "template" else "metasynth_docs"
    return _run_and_report(_load_config(args, mode))


def _cmd_synth_instructions(args: argparse.Namespace) -> int:
    return _run_and_report(_load_config(args, "instructions"))


def _cmd_synth_responses(args: argparse.Namespace) -> int:
    return _run_and_report(_load_config(args, "responses"))


def _load_vectors(path: str) -> list[list[float]]:
    """Vectors from JSONL: either bare arrays or objects with an
    ``embedding`` field (order-aligned with the corpus)."""
    vectors: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            if isinstance(obj, dict):
                obj = obj["embedding"]
            vectors.append([float(x) for x in obj])
    return vectors


def _cmd_measure(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus, "document")
    if corpus.errors:
        for error in corpus.errors:
            logger.warning("%s: %s", args.corpus, error)
    texts = [doc.text for doc in corpus.records]
    if not texts:
        print("corpus is empty", file=sys.stderr)
        return EXIT_CONFIG
    embeddings = _load_vectors(args.embeddings) if args.embeddings else None
    batches = _load_vectors(args.batch_embeddings) if args.batch_embeddings else None
    reference = ReferenceFrequencies.from_tsv(args.ref_freq) if args.ref_freq else None
    corpus_id = args.corpus_id or os.path.splitext(os.path.basename(args.corpus))[0]
    report = measure_corpus(
        texts,
        corpus_id=corpus_id,
        order_hash=corpus_order_hash(doc.id for doc in corpus.records),
        embeddings=embeddings,
        reference=reference,
        batch_embeddings=batches,
        n_resamples=args.resamples,
        level=args.level,
        rng_seed=args.rng_seed,
    )
    write_report_json(report, args.out)
    print(f"wrote {args.out}")
    if args.csv:
        append_report_csv(report, args.csv)
        print(f"appended row to {args.csv}")
    if args.figures:
        for path in render_report_figures(report, args.figures):
            print(f"wrote {path}")
    return EXIT_OK


def _read_texts(path: str) -> list[str]:
    """Texts from JSONL lines that are strings or carry a ``text`` field."""
    texts: list[str] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            texts.append(obj if isinstance(obj, str) else obj["text"])
    return texts


def _cmd_contaminate(args: argparse.Namespace) -> int:
    references = _read_texts(args.refs)
    targets = _read_texts(args.targets)
    n_values = [int(part) for part in args.n.split(",") if part.strip()]
    report = em_overlap(references, targets, n_values)
    payload = json.dumps(report.to_json_dict(), indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(payload + "\n")
        print(f"wrote {args.out}")
    else:
        print(payload)
    return EXIT_OK


def _cmd_resume(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    manifest = resume(args.run_dir, config)
    print(json.dumps(manifest.to_json_dict(), indent=2))
    return EXIT_OK if manifest.all_completed() else EXIT_PARTIAL


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="Run config JSON file.")
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--docs-per-seed-set", dest="docs_per_seed_set", type=int, default=None)
    parser.add_argument("--output-dir", dest="output_dir", default=None)
    parser.add_argument("--rng-seed", dest="rng_seed", type=int, default=None)
    parser.add_argument("--run-id", dest="run_id", default=None)
    parser.add_argument("--domain", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metasynth",
        description="Meta-prompted synthetic data generation and diversity measurement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-docs", help="Synthesize documents from seeds.")
    _add_run_flags(p)
    p.add_argument(
        "--baseline",
        choices=["template"],
        default=None,
        help="Use the static template-prompt baseline instead of the agentic flow.",
    )
    p.set_defaults(func=_cmd_synth_docs)

    p = sub.add_parser("synth-instructions", help="Evolve instructions from documents.")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_synth_instructions)

    p = sub.add_parser("synth-responses", help="Synthesize responses to instructions.")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_synth_responses)

    p = sub.add_parser("measure", help="Compute diversity metrics for a corpus.")
    p.add_argument("--corpus", required=True, help="Document corpus JSONL.")
    p.add_argument("--out", required=True, help="Report JSON output path.")
    p.add_argument("--csv", default=None, help="Append a delimited row here.")
    p.add_argument("--figures", default=None, help="Directory for rendered figures.")
    p.add_argument("--embeddings", default=None, help="Per-document embedding JSONL.")
    p.add_argument(
        "--batch-embeddings",
        dest="batch_embeddings",
        default=None,
        help="Batch embedding vectors JSONL for the diversity coefficient.",
    )
    p.add_argument("--ref-freq", dest="ref_freq", default=None, help="token<TAB>count TSV.")
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--rng-seed", dest="rng_seed", type=int, default=0)
    p.add_argument("--corpus-id", dest="corpus_id", default=None)
    p.set_defaults(func=_cmd_measure)

    p = sub.add_parser("contaminate", help="n-gram overlap contamination check.")
    p.add_argument("--refs", required=True, help="Reference examples JSONL.")
    p.add_argument("--targets", required=True, help="Target corpus JSONL.")
    p.add_argument("--n", default="1,2,3,5,10", help="Comma-separated n values.")
    p.add_argument("--out", default=None, help="Report JSON output path.")
    p.set_defaults(func=_cmd_contaminate)

    p = sub.add_parser("resume", help="Restart the non-completed workers of a run.")
    p.add_argument("--run-dir", dest="run_dir", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_resume)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("METASYNTH_LOG", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ManifestError, ContaminationError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GatewayError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
