"""Single entry-point command line tool.

Exit-code contract: 0 success, 1 validation (bad flags or bad input
content), 2 I/O (missing/unreadable/unwritable files), 3 internal errors.
Data goes to stdout, logs to stderr; ALTOGETHER_LOG in {error, info, debug}
controls verbosity. Report paths write matplotlib figures next to the
delimited outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import model as model_mod
from . import train as train_mod
from .corpus import (
    Corpus,
    EmbeddingMatrix,
    MixSpec,
    ingest_pairs,
    load_embeddings,
    load_rounds,
    mix_sample,
    save_embeddings,
    write_atomic,
)
from .errors import AltogetherError, ValidationError
from .textproc import Vocab, build_vocab, detokenize, tokenize

log = logging.getLogger("altogether")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse that honors the exit-code contract: usage errors are
    validation failures (1), not the argparse default of 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _configure_logging() -> None:
    level_name = os.environ.get("ALTOGETHER_LOG", "error").lower()
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level_name, logging.ERROR
    )
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _load_corpus(items_path: str, rounds_path: str | None = None) -> Corpus:
    corpus = ingest_pairs(items_path)
    if rounds_path:
        load_rounds(corpus, rounds_path)
    return corpus


def _read_caption_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            text = obj.get("text", obj.get("caption", obj.get("alt_text")))
            if "id" not in obj or text is None:
                raise ValidationError(
                    f"{path}:{line_no}: each line needs an id and a text/caption field"
                )
            out[obj["id"]] = text
    return out


def _build_triples(
    corpus: Corpus,
    vocab: Vocab,
    embeddings: EmbeddingMatrix,
    target_round: int | None,
) -> list[train_mod.TrainTriple]:
    """Tokenized (image, alt, caption) triples. ``target_round`` None means
    each item's latest recorded round; round 1 targets the alt-text itself."""
    triples = []
    for item in corpus.items():
        rounds = corpus.rounds_for(item.id)
        if target_round is None:
            caption = rounds[-1].caption
        else:
            if len(rounds) < target_round:
                raise ValidationError(f"item {item.id!r} has no round {target_round} caption")
            caption = rounds[target_round - 1].caption
        if item.embedding_row is None:
            raise ValidationError(f"item {item.id!r} has no embedding_row")
        vec = embeddings.rows[item.embedding_row]
        triples.append(
            train_mod.TrainTriple(
                image_vec=np.asarray(vec, dtype=np.float64),
                alt_ids=tuple(tokenize(vocab, item.alt_text)),
                caption_ids=tuple(tokenize(vocab, caption)),
                item_id=item.id,
            )
        )
    return triples


def _train_config(args: argparse.Namespace) -> train_mod.TrainConfig:
    return train_mod.TrainConfig(
        batch_size=args.batch_size,
        peak_lr=args.peak_lr,
        warmup_steps=args.warmup_steps,
        min_lr_ratio=args.min_lr_ratio,
        pretrain_epochs=args.epochs,
        finetune_epochs=args.epochs,
        empty_alt_prob=args.empty_alt_prob,
        weight_decay=args.weight_decay,
        grad_clip_norm=args.grad_clip,
        seed=args.seed,
    )


def _emit(obj) -> None:
    print(json.dumps(obj, ensure_ascii=False, indent=2))


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    corpus = _load_corpus(args.items)
    _emit({"items": len(corpus)})
    return EXIT_OK


def cmd_rounds_record(args) -> int:
    corpus = _load_corpus(args.items, args.rounds if Path(args.rounds).exists() else None)
    round_no = args.round if args.round is not None else corpus.max_round(args.item_id) + 1
    record = corpus.record_round(args.item_id, round_no, args.caption, args.annotator, args.ts)
    corpus_mod.append_round_line(args.rounds, record)
    _emit(record.to_dict())
    return EXIT_OK


def cmd_rounds_stats(args) -> int:
    corpus = _load_corpus(args.items, args.rounds)
    rounds = [args.round] if args.round is not None else corpus.recorded_rounds()
    stats = [corpus.round_stats(r) for r in rounds]
    if args.format == "json":
        _emit([s.to_dict() for s in stats])
    else:
        header = f"{'round':>5}  {'items':>5}  {'mean_len':>9}  {'mean_edit':>9}  {'alignment':>9}"
        print(header)
        print("-" * len(header))
        for s in stats:
            align = f"{s.mean_alignment:9.2f}" if s.mean_alignment is not None else f"{'-':>9}"
            print(
                f"{s.round_no:>5}  {s.item_count:>5}  {s.mean_length_words:9.2f}  "
                f"{s.mean_edit_distance:9.2f}  {align}"
            )
    if args.out_dir:
        from . import figures

        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tsv = ["round\titems\tmean_length_words\tmean_edit_distance\tmean_alignment"]
        for s in stats:
            align = "" if s.mean_alignment is None else f"{s.mean_alignment:.6f}"
            tsv.append(
                f"{s.round_no}\t{s.item_count}\t{s.mean_length_words:.6f}"
                f"\t{s.mean_edit_distance:.6f}\t{align}"
            )
        write_atomic(out / "round_stats.tsv", "\n".join(tsv) + "\n")
        figures.save_round_trends(stats, out / "round_trends.png")
        log.info("wrote %s and round_trends.png", out / "round_stats.tsv")
    return EXIT_OK


def cmd_vocab_build(args) -> int:
    texts: list[str] = []
    for path in args.input:
        for item_id, text in _read_caption_file(path).items():
            texts.append(text)
    vocab = build_vocab(texts, args.size)
    lines = [
        json.dumps({"token": vocab.token_string(i), "id": i}, ensure_ascii=False)
        for i in range(vocab.size)
    ]
    write_atomic(args.out, "\n".join(lines) + "\n")
    _emit({"vocab_size": vocab.size, "learned": vocab.size - 260, "out": str(args.out)})
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = train_mod.WorldSpec(
        n_concepts=args.n_concepts,
        rare_fraction=args.rare_fraction,
        concepts_per_image=args.concepts_per_image,
        distractor_rate=args.distractor_rate,
        embed_dim=args.embed_dim,
        seed=args.seed,
    )
    world = train_mod.synth_world(spec)
    items = world.items(args.n)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    item_lines = []
    round_lines = []
    vectors = np.zeros((len(items), spec.embed_dim), dtype=np.float32)
    index: dict[str, int] = {}
    for row, item in enumerate(items):
        item_lines.append(
            json.dumps(
                {
                    "id": item.id,
                    "image_ref": f"synth://{item.id}",
                    "alt_text": item.alt_text,
                    "source": "synthetic",
                    "embedding_row": row,
                },
                ensure_ascii=False,
            )
        )
        round_lines.append(
            json.dumps(
                {"id": item.id, "round": 2, "caption": item.caption, "annotator": "world", "ts": 0.0}
            )
        )
        vectors[row] = item.image_vec
        index[item.id] = row
    write_atomic(out / "items.jsonl", "\n".join(item_lines) + "\n")
    write_atomic(out / "rounds.jsonl", "\n".join(round_lines) + "\n")
    save_embeddings(EmbeddingMatrix(spec.embed_dim, vectors, index), out / "embeddings.alte")
    vocab = world.vocabulary()
    vocab_lines = [
        json.dumps({"token": vocab.token_string(i), "id": i}, ensure_ascii=False)
        for i in range(vocab.size)
    ]
    write_atomic(out / "vocab.jsonl", "\n".join(vocab_lines) + "\n")
    write_atomic(
        out / "world.json",
        json.dumps(
            {
                "spec": {
                    "n_concepts": spec.n_concepts,
                    "rare_fraction": spec.rare_fraction,
                    "concepts_per_image": spec.concepts_per_image,
                    "distractor_rate": spec.distractor_rate,
                    "embed_dim": spec.embed_dim,
                    "seed": spec.seed,
                },
                "n_items": len(items),
            },
            indent=2,
        )
        + "\n",
    )
    _emit({"items": len(items), "out_dir": str(out)})
    return EXIT_OK


def _run_training(args, finetune: bool) -> int:
    corpus = _load_corpus(args.items, args.rounds)
    vocab = Vocab.load(args.vocab)
    embeddings = load_embeddings(args.embeddings)
    target_round = None if finetune else args.target_round
    triples = _build_triples(corpus, vocab, embeddings, target_round)
    cfg = _train_config(args)
    if finetune:
        params = model_mod.load_model(args.model)
        trained, history = train_mod.finetune(params, triples, cfg, log_path=args.log)
    else:
        mcfg = model_mod.ModelConfig(
            d_model=args.d_model,
            n_heads=args.n_heads,
            n_decoder_layers=args.n_layers,
            n_mapping_layers=args.n_mapping_layers,
            vocab_size=vocab.size,
            image_embed_dim=embeddings.dim,
            n_visual=args.n_visual,
            m_alt=args.m_alt,
            max_gen=args.max_gen,
        )
        params = model_mod.init_model(mcfg, args.seed)
        trained, history = train_mod.pretrain(params, triples, cfg, log_path=args.log)
    model_mod.save_model(trained, args.out)
    if args.out_dir and history:
        from . import figures

        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        figures.save_loss_curve(history, out / "loss_curve.png")
    _emit(
        {
            "steps": len(history),
            "final_loss": history[-1]["loss"] if history else None,
            "parameter_count": trained.param_count,
            "model": str(args.out),
        }
    )
    return EXIT_OK


def cmd_train_pretrain(args) -> int:
    return _run_training(args, finetune=False)


def cmd_train_finetune(args) -> int:
    return _run_training(args, finetune=True)


def cmd_caption(args) -> int:
    params = model_mod.load_model(args.model)
    vocab = Vocab.load(args.vocab)
    embeddings = load_embeddings(args.embeddings)
    image_vec = embeddings.row_for_id(args.embedding_id)
    decode = model_mod.DecodeConfig(
        temperature=args.temperature,
        top_p=args.top_p,
        max_tokens=args.max_tokens,
        seed=args.seed,
    )
    ids = model_mod.generate(params, np.asarray(image_vec, dtype=np.float64),
                             tokenize(vocab, args.alt), decode)
    print(detokenize(vocab, ids))
    return EXIT_OK


def cmd_eval(args) -> int:
    predictions = _read_caption_file(args.pred)
    references = _read_caption_file(args.ref)
    clip_embeddings = None
    if args.image_embeddings and args.text_embeddings:
        clip_embeddings = metrics_mod.ClipEmbeddings(
            image=load_embeddings(args.image_embeddings),
            text=load_embeddings(args.text_embeddings),
            scale=args.clip_scale,
        )
    per_item: dict[str, dict[str, float]] = {}
    report = metrics_mod.evaluate_suite(
        predictions,
        references,
        embeddings=clip_embeddings,
        n_jobs=args.jobs,
        per_item_out=per_item,
    )
    if args.format == "json":
        print(report.to_json())
    else:
        print(report.to_table())
    if args.out_dir:
        from . import figures

        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_atomic(out / "report.json", report.to_json() + "\n")
        keys = ["bleu1", "meteor", "rouge_l", "cider_d", "np_precision", "np_recall", "np_f1"]
        tsv = ["id\t" + "\t".join(keys)]
        for item_id in sorted(per_item):
            row = per_item[item_id]
            tsv.append(item_id + "\t" + "\t".join(f"{row[k]:.6f}" for k in keys))
        write_atomic(out / "per_item.tsv", "\n".join(tsv) + "\n")
        figures.save_metric_bars(report, out / "metrics.png")
        figures.save_per_item_hist(per_item, out / "per_item_hist.png")
        log.info("wrote report.json, per_item.tsv and figures under %s", out)
    return EXIT_OK


def cmd_mix(args) -> int:
    corpus = _load_corpus(args.items, args.rounds)
    spec = MixSpec(p=args.p, seed=args.seed)
    source = args.round if args.round is not None else max(corpus.recorded_rounds())
    choices = mix_sample(corpus, spec, source)
    corpus_mod.export_training_set(choices, args.out)
    synthetic = sum(1 for c in choices if c.chosen_source == "synthetic")
    _emit(
        {
            "choices": len(choices),
            "synthetic": synthetic,
            "synthetic_fraction": synthetic / len(choices),
            "out": str(args.out),
        }
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    params = model_mod.load_model(args.model)
    report = train_mod.bench_throughput(
        params, args.seq_len, batch_size=args.batch_size, duration=args.duration, seed=args.seed
    )
    payload = json.dumps(report.to_dict(), indent=2)
    print(payload)
    if args.out:
        write_atomic(args.out, payload + "\n")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .annosvc import serve

    serve(args.log, host=args.host, port=args.port)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    import time as _time

    if args.model:
        params = model_mod.load_model(args.model)
    else:
        cfg = model_mod.ModelConfig(
            d_model=16,
            n_heads=2,
            n_decoder_layers=2,
            n_mapping_layers=1,
            vocab_size=64,
            image_embed_dim=8,
            n_visual=4,
            m_alt=8,
            max_gen=16,
        )
        params = model_mod.init_model(cfg, args.seed)
    rng = np.random.default_rng(args.seed)
    rows = []
    for _ in range(args.batch_size):
        alt_len = int(rng.integers(1, params.config.m_alt + 1))
        cap_len = int(rng.integers(1, params.config.max_gen - 1))
        rows.append(
            model_mod.layout_sequence(
                rng.normal(size=params.config.image_embed_dim),
                rng.integers(4, params.config.vocab_size, size=alt_len).tolist(),
                rng.integers(4, params.config.vocab_size, size=cap_len).tolist(),
                params.config,
            )
        )
    batch = model_mod.concat_rows(rows)
    start = _time.perf_counter()
    err = train_mod.grad_check(params, batch, epsilon=args.epsilon,
                               max_coords=args.max_coords, seed=args.seed)
    elapsed = _time.perf_counter() - start
    checked = args.max_coords if args.max_coords else params.param_count
    _emit({"max_rel_error": err, "coords": checked, "seconds": round(elapsed, 2)})
    if args.threshold is not None and err >= args.threshold:
        log.error("gradient check failed: %.3g >= %.3g", err, args.threshold)
        return EXIT_VALIDATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch-size", type=int, default=64, help="items per optimizer step")
    p.add_argument("--peak-lr", type=float, default=1e-3, help="peak learning rate")
    p.add_argument("--warmup-steps", type=int, default=2000, help="linear warmup steps")
    p.add_argument("--min-lr-ratio", type=float, default=0.1, help="cosine floor as a ratio of peak")
    p.add_argument("--epochs", type=int, default=1, help="epochs over the input set")
    p.add_argument("--empty-alt-prob", type=float, default=0.5,
                   help="per-item probability of replacing alt with the empty-alt token")
    p.add_argument("--weight-decay", type=float, default=0.01, help="decoupled weight decay")
    p.add_argument("--grad-clip", type=float, default=1.0, help="global gradient-norm clip")
    p.add_argument("--log", default=None, help="JSONL per-step training log path")
    p.add_argument("--out-dir", default=None, help="directory for loss-curve figure")


def build_parser() -> _Parser:
    parser = _Parser(prog="altogether", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", default=None,
                        help="flat key=value file applied as flag defaults")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("ingest", help="validate and summarize an items JSONL file")
    p.add_argument("--items", required=True, help="items JSONL path")
    p.set_defaults(func=cmd_ingest)

    rounds = sub.add_parser("rounds", help="record or summarize annotation rounds")
    rsub = rounds.add_subparsers(dest="rounds_command", metavar="SUBCOMMAND")
    rsub.required = True
    p = rsub.add_parser("record", help="append one round record")
    p.add_argument("--items", required=True, help="items JSONL path")
    p.add_argument("--rounds", required=True, help="rounds JSONL path (appended to)")
    p.add_argument("--item-id", required=True, help="item to record against")
    p.add_argument("--caption", required=True, help="caption text")
    p.add_argument("--annotator", required=True, help="annotator id")
    p.add_argument("--round", type=int, default=None, help="round number (default: next)")
    p.add_argument("--ts", type=float, default=None, help="timestamp override (seconds)")
    p.set_defaults(func=cmd_rounds_record)
    p = rsub.add_parser("stats", help="per-round means of length and edit distance")
    p.add_argument("--items", required=True, help="items JSONL path")
    p.add_argument("--rounds", required=True, help="rounds JSONL path")
    p.add_argument("--round", type=int, default=None, help="restrict to one round")
    p.add_argument("--format", choices=("json", "table"), default="table", help="stdout format")
    p.add_argument("--out-dir", default=None, help="write round_stats.tsv and trend figure here")
    p.set_defaults(func=cmd_rounds_stats)

    vocab = sub.add_parser("vocab", help="vocabulary tools")
    vsub = vocab.add_subparsers(dest="vocab_command", metavar="SUBCOMMAND")
    vsub.required = True
    p = vsub.add_parser("build", help="build a word vocabulary from caption files")
    p.add_argument("--input", nargs="+", required=True, help="JSONL files with text/caption fields")
    p.add_argument("--size", type=int, required=True, help="total vocabulary size cap")
    p.add_argument("--out", required=True, help="output vocab JSONL path")
    p.set_defaults(func=cmd_vocab_build)

    p = sub.add_parser("synth", help="generate a synthetic concept-world dataset")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--n", type=int, required=True, help="number of items")
    p.add_argument("--n-concepts", type=int, default=48, help="concept inventory size")
    p.add_argument("--rare-fraction", type=float, default=0.3,
                   help="fraction of concepts invisible to the image embedding")
    p.add_argument("--concepts-per-image", type=int, default=3, help="concepts per image")
    p.add_argument("--distractor-rate", type=float, default=0.2,
                   help="probability an alt-text mentions an absent concept")
    p.add_argument("--embed-dim", type=int, default=24, help="image embedding dimension")
    p.add_argument("--seed", type=int, default=0, help="world seed")
    p.set_defaults(func=cmd_synth)

    train = sub.add_parser("train", help="train the captioner")
    tsub = train.add_subparsers(dest="train_command", metavar="SUBCOMMAND")
    tsub.required = True
    p = tsub.add_parser("pretrain", help="train from scratch on (image, alt, caption) triples")
    p.add_argument("--items", required=True, help="items JSONL path")
    p.add_argument("--rounds", default=None, help="rounds JSONL path (caption targets)")
    p.add_argument("--target-round", type=int, default=None,
                   help="round to take captions from (default: alt-text itself)")
    p.add_argument("--embeddings", required=True, help="image embeddings .alte path")
    p.add_argument("--vocab", required=True, help="vocab JSONL path")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--d-model", type=int, default=64, help="model width")
    p.add_argument("--n-heads", type=int, default=4, help="attention heads")
    p.add_argument("--n-layers", type=int, default=2, help="decoder layers")
    p.add_argument("--n-mapping-layers", type=int, default=1, help="mapping network layers")
    p.add_argument("--n-visual", type=int, default=40, help="visual token count")
    p.add_argument("--m-alt", type=int, default=128, help="alt-text region length")
    p.add_argument("--max-gen", type=int, default=256, help="caption region length")
    p.add_argument("--seed", type=int, default=0, help="init and shuffle seed")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_pretrain)
    p = tsub.add_parser("finetune", help="continue training on latest-round captions")
    p.add_argument("--model", required=True, help="input model path")
    p.add_argument("--items", required=True, help="items JSONL path")
    p.add_argument("--rounds", required=True, help="rounds JSONL path")
    p.add_argument("--embeddings", required=True, help="image embeddings .alte path")
    p.add_argument("--vocab", required=True, help="vocab JSONL path")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--seed", type=int, default=0, help="shuffle seed")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_finetune)

    p = sub.add_parser("caption", help="generate a caption for one stored embedding")
    p.add_argument("--model", required=True, help="model path")
    p.add_argument("--vocab", required=True, help="vocab JSONL path")
    p.add_argument("--embeddings", required=True, help="image embeddings .alte path")
    p.add_argument("--embedding-id", required=True, help="id of the image embedding row")
    p.add_argument("--alt", default="", help="alt-text conditioning (empty = from scratch)")
    p.add_argument("--temperature", type=float, default=0.2, help="sampling temperature (0 = greedy)")
    p.add_argument("--top-p", type=float, default=0.7, help="nucleus probability mass")
    p.add_argument("--max-tokens", type=int, default=None, help="generation cap")
    p.add_argument("--seed", type=int, default=0, help="sampler seed")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("eval", help="run the caption metric suite")
    p.add_argument("--pred", required=True, help="predictions JSONL (id + text)")
    p.add_argument("--ref", required=True, help="references JSONL (id + text)")
    p.add_argument("--image-embeddings", default=None, help="image .alte for alignment score")
    p.add_argument("--text-embeddings", default=None, help="text .alte for alignment score")
    p.add_argument("--clip-scale", type=float, default=100.0, help="alignment score scale")
    p.add_argument("--format", choices=("json", "table"), default="table", help="stdout format")
    p.add_argument("--jobs", type=int, default=1, help="parallel per-item evaluation workers")
    p.add_argument("--out-dir", default=None, help="write report.json, per_item.tsv and figures here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mix", help="build a training set mixing alt and synthetic captions")
    p.add_argument("--items", required=True, help="items JSONL path")
    p.add_argument("--rounds", default=None, help="rounds JSONL with synthetic captions")
    p.add_argument("--p", type=float, required=True, help="probability of the synthetic caption, in [0, 1]")
    p.add_argument("--seed", type=int, default=0, help="sampler seed")
    p.add_argument("--round", type=int, default=None,
                   help="round holding synthetic captions (default: latest)")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("bench", help="measure generation throughput at a layout length")
    p.add_argument("--model", required=True, help="model path")
    p.add_argument("--seq-len", type=int, required=True, help="total decoder length to bench")
    p.add_argument("--batch-size", type=int, default=4, help="generation batch size")
    p.add_argument("--duration", type=float, default=1.0, help="measurement window in seconds")
    p.add_argument("--seed", type=int, default=0, help="synthetic input seed")
    p.add_argument("--out", default=None, help="also write the JSON report here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--log", default=None, help="append-only event log path")
    p.add_argument("--host", default="127.0.0.1", help="bind host")
    p.add_argument("--port", type=int, default=8787, help="bind port")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gradcheck", help="compare analytic gradients to finite differences")
    p.add_argument("--model", default=None, help="model path (default: tiny built-in config)")
    p.add_argument("--epsilon", type=float, default=1e-3, help="central-difference step")
    p.add_argument("--max-coords", type=int, default=None,
                   help="check a seeded subset instead of every coordinate")
    p.add_argument("--batch-size", type=int, default=2, help="probe batch size")
    p.add_argument("--seed", type=int, default=0, help="probe seed")
    p.add_argument("--threshold", type=float, default=None,
                   help="exit 1 if the max relative error reaches this value")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def _apply_config_file(argv: list[str]) -> list[str]:
    """Inject key=value pairs from --config as flags right after the
    subcommand tokens, so explicit CLI flags still win."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        return argv  # let argparse report the missing value
    path = argv[at + 1]
    rest = argv[:at] + argv[at + 2 :]
    tokens: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{line_no}: expected key=value")
            key, value = line.split("=", 1)
            tokens.extend([f"--{key.strip().replace('_', '-')}", value.strip()])
    insert_at = 0
    while insert_at < len(rest) and not rest[insert_at].startswith("-"):
        insert_at += 1
    return rest[:insert_at] + tokens + rest[insert_at:]


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config_file(argv)
        parser = build_parser()
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except AltogetherError as exc:
        print(f"altogether: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"altogether: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error")
        print(f"altogether: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
