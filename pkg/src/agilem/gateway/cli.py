"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 runtime failure (bad files,
invalid data, failed operations).
"""

import argparse
import json
import os
import sys

import numpy as np

from agilem import __version__, ann_index, bench, embed_store, synth
from agilem.concept_head import MlpConfig, load_model
from agilem.errors import AgilemError, ValidationError
from agilem.eval_kit import DEFAULT_HASH_KEY, build_eval_set, compute_metrics
from agilem.gateway.timing import timing_probe
from agilem.session import ConceptSpec, SessionConfig, simulate

DATA_DIR_ENV = "AGILE_DATA_DIR"


def _print(obj) -> None:
    json.dump(obj, sys.stdout, indent=1, sort_keys=True, default=str)
    sys.stdout.write("\n")


def _load_corpus(args) -> embed_store.Corpus:
    return embed_store.ingest(args.vectors, args.items)


def cmd_gen_synthetic(args) -> int:
    corpus, concept, truth = synth.generate(
        count=args.count,
        dim=args.dim,
        seed=args.seed,
        n_background=args.clusters,
        positive_rate=args.positive_rate,
        concept_name=args.name,
    )
    os.makedirs(args.out, exist_ok=True)
    embed_store.write_corpus(
        os.path.join(args.out, "corpus.agem"),
        os.path.join(args.out, "items.jsonl"),
        corpus,
    )
    synth.write_truth(os.path.join(args.out, "truth.jsonl"), truth)
    synth.write_concept(os.path.join(args.out, "concept.json"), concept)
    _print({
        "out": args.out,
        "count": corpus.count,
        "dim": corpus.dim,
        "positive_rate": truth.positive_rate,
        "concept": concept.name,
    })
    return 0


def cmd_ingest(args) -> int:
    corpus = _load_corpus(args)
    report = {
        "count": corpus.count,
        "dim": corpus.dim,
        "normalized": corpus.matrix.normalized,
    }
    if args.normalize and not corpus.matrix.normalized:
        matrix = embed_store.normalize(corpus.matrix)
        out = args.out_vectors or args.vectors
        embed_store.write_vectors(out, matrix)
        report["normalized"] = True
        report["written"] = out
    _print(report)
    return 0


def cmd_build_index(args) -> int:
    corpus = _load_corpus(args)
    if not corpus.matrix.normalized:
        corpus = embed_store.Corpus(
            matrix=embed_store.normalize(corpus.matrix), items=corpus.items
        )
    if args.partitions == 0:
        index = ann_index.build_exact(corpus)
    else:
        index = ann_index.build_partitioned(corpus, args.partitions, seed=args.seed)
    ann_index.save_index(args.out, index)
    _print({
        "out": args.out,
        "kind": index.kind,
        "count": corpus.count,
        "dim": corpus.dim,
        "partitions": 0 if index.kind == "exact" else index.n_partitions,
    })
    return 0


def _synthetic_or_files(args):
    """Load (corpus, concept, truth) from files, or generate when absent."""
    if args.vectors:
        corpus = _load_corpus(args)
        truth = synth.read_truth(args.truth)
        concept = synth.read_concept(args.concept)
        return corpus, concept, truth
    corpus, concept, truth = synth.generate(
        count=args.count, dim=args.dim, seed=args.seed,
        positive_rate=args.positive_rate,
    )
    return corpus, concept, truth.as_dict()


def cmd_simulate(args) -> int:
    corpus, synth_concept, truth = _synthetic_or_files(args)
    assignment = embed_store.split(corpus.items.ids, seed=args.seed, train_fraction=0.5)
    work = embed_store.subset(corpus, assignment.train_ids)
    held = embed_store.subset(corpus, assignment.test_ids)
    concept = ConceptSpec.create(
        synth_concept.name,
        positive_phrases=synth_concept.positive_phrases,
        negative_phrases=synth_concept.negative_phrases,
        embeddings=synth_concept.embeddings,
    )
    config = SessionConfig(
        rounds=args.rounds,
        batch_size=args.batch_size,
        strategy=args.strategy,
        seed=args.seed,
        votes_required=args.votes,
        mlp=MlpConfig(random_negative_count=args.random_negatives),
    )
    out_dir = args.out or os.path.join(_default_data_dir(args), "simulations",
                                       f"{concept.name.replace(' ', '-')}-{args.seed}")
    result = simulate(
        work, concept, config, truth, held, truth,
        noise_rate=args.noise, save_dir=out_dir,
    )
    summary = {
        "session_dir": out_dir,
        "phase": result.session.phase,
        "rounds": [
            {"round": r["round"], "auc_pr": r["auc_pr"], "auc_roc": r["auc_roc"],
             "samples_rated": r["samples_rated"]}
            for r in result.metrics_rows
        ],
        "zero_shot_auc_pr": result.zero_shot.auc_pr,
        "zero_shot_auc_roc": result.zero_shot.auc_roc,
    }
    _print(summary)
    return 0


def cmd_eval_set(args) -> int:
    corpus = _load_corpus(args)
    models = [load_model(p) for p in args.checkpoint]
    if args.key_hex:
        try:
            key = bytes.fromhex(args.key_hex)
        except ValueError:
            raise ValidationError("--key-hex must be 32 hexadecimal characters") from None
    else:
        key = DEFAULT_HASH_KEY
    eval_set = build_eval_set(models, corpus, per_stratum=args.per_stratum, key=key)
    eval_set.write(args.out)
    _print({
        "out": args.out,
        "entries": len(eval_set.entries),
        "models": eval_set.model_count,
        "per_stratum": eval_set.per_stratum,
    })
    return 0


def cmd_metrics(args) -> int:
    truth = synth.read_truth(args.truth)
    labels, scores = [], []
    with open(args.scores, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            item_id = int(obj["id"])
            if item_id not in truth:
                raise AgilemError(f"scored item {item_id} missing from truth file")
            labels.append(truth[item_id])
            scores.append(float(obj["p"]))
    report = compute_metrics(np.asarray(labels), np.asarray(scores), threshold=args.threshold)
    _print(report.to_json())
    return 0


def cmd_timing_probe(args) -> int:
    if args.vectors:
        corpus = _load_corpus(args)
    else:
        corpus, _, _ = synth.generate(
            count=args.count, dim=args.dim, seed=args.seed, positive_rate=0.03
        )
    report = timing_probe(corpus, batch_size=args.batch_size)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
    _print(report)
    return 0


def cmd_bench_kernels(args) -> int:
    report = bench.bench_kernels(count=args.count)
    print(bench.format_report(report))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from agilem.gateway.api import GatewayRuntime, create_app

    corpus = _load_corpus(args)
    if not corpus.matrix.normalized:
        corpus = embed_store.Corpus(
            matrix=embed_store.normalize(corpus.matrix), items=corpus.items
        )
    if args.index:
        index = ann_index.load_index(args.index, corpus)
    else:
        index = ann_index.build_exact(corpus)
    embedder = None
    if args.concepts:
        concept = synth.read_concept(args.concepts)
        known = {k: np.asarray(v, dtype=np.float64) for k, v in concept.embeddings.items()}

        def embedder(phrase):  # noqa: F811
            if phrase in known:
                return known[phrase]
            return synth.hash_phrase_vector(phrase, corpus.dim, seed=args.seed)

    eval_truth = synth.read_truth(args.truth) if args.truth else None
    runtime = GatewayRuntime(
        corpus, index,
        data_dir=_default_data_dir(args),
        embedder=embedder,
        phrase_seed=args.seed,
        eval_corpus=corpus if eval_truth is not None else None,
        eval_truth=eval_truth,
    )
    app = create_app(runtime, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _default_data_dir(args) -> str:
    if getattr(args, "data_dir", None):
        return args.data_dir
    return os.environ.get(DATA_DIR_ENV) or os.path.join(os.getcwd(), "agilem-data")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _add_corpus_args(p, required=True):
    p.add_argument("--vectors", required=required, help="embedding file (AGEM)")
    p.add_argument("--items", required=required, help="id/url table (JSONL)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agilem", description=__doc__)
    parser.add_argument("--version", action="version", version=f"agilem {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("gen-synthetic", help="generate a clustered corpus with a planted concept")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20000)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clusters", type=int, default=48)
    p.add_argument("--positive-rate", type=float, default=0.03)
    p.add_argument("--name", default="planted concept")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("ingest", help="validate a corpus, optionally writing a normalized copy")
    _add_corpus_args(p)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out-vectors", help="where to write the normalized copy")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-index", help="build and save a nearest-neighbor index")
    _add_corpus_args(p)
    p.add_argument("--partitions", type=int, default=256, help="0 for the exact index")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("simulate", help="run a full oracle-rated session")
    _add_corpus_args(p, required=False)
    p.add_argument("--truth", help="truth JSONL (required with --vectors)")
    p.add_argument("--concept", help="concept JSON (required with --vectors)")
    p.add_argument("--count", type=int, default=20000)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--positive-rate", type=float, default=0.03)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--strategy", default="margin",
                   choices=("margin", "margin_positive", "random"))
    p.add_argument("--votes", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--random-negatives", type=int, default=2000)
    p.add_argument("--out", help="session directory (default under the data dir)")
    p.add_argument("--data-dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval-set", help="build a hash-stratified eval set from checkpoints")
    _add_corpus_args(p)
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--per-stratum", type=int, default=20)
    p.add_argument("--key-hex", help="16-byte hash key as 32 hex chars")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_set)

    p = sub.add_parser("metrics", help="score a prediction file against a truth file")
    p.add_argument("--truth", required=True)
    p.add_argument("--scores", required=True, help="JSONL of {id, p}")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("timing-probe", help="measure scoring/selection/training wall time")
    _add_corpus_args(p, required=False)
    p.add_argument("--count", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_timing_probe)

    p = sub.add_parser("bench-kernels", help="compare compiled and pure-python kernel lanes")
    p.add_argument("--count", type=int, default=200_000)
    p.set_defaults(func=cmd_bench_kernels)

    p = sub.add_parser("serve", help="start the HTTP gateway")
    _add_corpus_args(p)
    p.add_argument("--index", help="prebuilt index sidecar")
    p.add_argument("--concepts", help="concept JSON with known phrase embeddings")
    p.add_argument("--truth", help="truth JSONL; when given, each round is scored "
                                   "against the corpus and sessions grow metrics rows")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8031)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", help=f"session storage (default ${DATA_DIR_ENV})")
    p.add_argument("--ui", help="directory with a built rating UI to mount at /ui")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "command", None) == "simulate" and args.vectors:
        if not args.truth or not args.concept:
            print("error: --truth and --concept are required with --vectors", file=sys.stderr)
            return 1
    try:
        return int(args.func(args) or 0)
    except AgilemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
