"""Command-line surface: generate / train / evaluate / predict / gradcheck /
export-reprs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
Heavy imports happen inside command handlers so --threads can pin the BLAS
thread count before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_config_file(path) -> dict:
    """Flat 'key = value' lines; '#' starts a comment. Values parse as JSON
    scalars when possible, else stay strings."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            try:
                out[key] = json.loads(value)
            except json.JSONDecodeError:
                out[key] = value
    return out


MODEL_KEYS = ("emb_dim", "lstm_layers", "lstm_hidden", "output_dim", "synonyms",
              "scorer", "emb_dropout", "rep_dropout", "precision")
TRAIN_KEYS = ("epochs", "lr", "batch_size", "adam_eps", "weight_decay", "clip",
              "rdrop", "seed", "resample_synonyms", "max_len", "p_at_k")

DEFAULTS = {
    "emb_dim": 100, "lstm_layers": 1, "lstm_hidden": 512, "output_dim": 512,
    "synonyms": 8, "scorer": "biaffine", "emb_dropout": 0.2, "rep_dropout": 0.2,
    "precision": 64, "epochs": 20, "lr": 5e-4, "batch_size": 16, "adam_eps": 1e-8,
    "weight_decay": 0.01, "clip": 1.0, "rdrop": 5.0, "seed": 0,
    "resample_synonyms": False, "max_len": 4000, "p_at_k": "5", "threads": 1,
}


def _merge_config(args) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(_read_config_file(args.config))
    for key in list(MODEL_KEYS) + list(TRAIN_KEYS) + ["threads"]:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _set_threads(n: int):
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _parse_ks(spec) -> tuple:
    if isinstance(spec, (int, float)):
        return (int(spec),)
    return tuple(int(part) for part in str(spec).split(",") if part.strip())


def _model_config(cfg: dict):
    from .model import ModelConfig

    return ModelConfig(
        emb_dim=int(cfg["emb_dim"]), lstm_layers=int(cfg["lstm_layers"]),
        lstm_hidden=int(cfg["lstm_hidden"]), output_dim=int(cfg["output_dim"]),
        num_synonyms=int(cfg["synonyms"]), scorer=str(cfg["scorer"]),
        emb_dropout=float(cfg["emb_dropout"]), rep_dropout=float(cfg["rep_dropout"]),
        precision=int(cfg["precision"]))


def _train_config(cfg: dict):
    from .training import TrainConfig

    return TrainConfig(
        epochs=int(cfg["epochs"]), peak_lr=float(cfg["lr"]),
        batch_size=int(cfg["batch_size"]), adam_eps=float(cfg["adam_eps"]),
        weight_decay=float(cfg["weight_decay"]), clip_norm=float(cfg["clip"]),
        rdrop_weight=float(cfg["rdrop"]), seed=int(cfg["seed"]),
        resample_synonyms=bool(cfg["resample_synonyms"]), max_len=int(cfg["max_len"]),
        p_at_k=_parse_ks(cfg["p_at_k"]))


# -- commands -------------------------------------------------------------


def cmd_generate(args) -> int:
    from .synthgen import SynthConfig, generate, write_corpus_files

    config = SynthConfig(
        num_codes=args.codes, synonyms_per_code=args.synonyms_per_code,
        filler_vocab=args.filler_vocab, doc_len_min=args.doc_len_min,
        doc_len_max=args.doc_len_max, codes_per_doc_min=args.codes_per_doc_min,
        codes_per_doc_max=args.codes_per_doc_max, train_size=args.train_size,
        dev_size=args.dev_size, test_size=args.test_size,
        synonym_usage=args.synonym_usage, seed=args.seed if args.seed is not None else 0)
    existing = [f for f in ("dictionary.jsonl", "train.jsonl", "dev.jsonl", "test.jsonl")
                if os.path.exists(os.path.join(args.out, f))]
    if existing and not args.force:
        from .errors import DataError

        raise DataError(
            f"{args.out} already contains {', '.join(existing)}; pass --force to overwrite")
    corpus = generate(config)
    paths = write_corpus_files(corpus, args.out)
    sizes = {name: len(getattr(corpus, name)) for name in ("train", "dev", "test")}
    print(json.dumps({"written": paths, "documents": sizes,
                      "codes": len(corpus.entries)}, indent=2))
    return 0


def _load_splits(cfg, corpus_dir, dict_path, embeddings_path):
    """Common data loading for train: dictionary, vocab, encoded splits."""
    from .errors import DataError
    from .rng import Rng
    from .synonyms import load_dictionary
    from .text import (Vocabulary, ingest_corpus, load_embeddings, read_corpus,
                       tokenize)

    dict_path = dict_path or os.path.join(corpus_dir, "dictionary.jsonl")
    if not os.path.exists(dict_path):
        raise DataError(f"dictionary file not found: {dict_path}")
    entries = load_dictionary(dict_path)
    codes = [e.code for e in entries]

    paths = {s: os.path.join(corpus_dir, f"{s}.jsonl") for s in ("train", "dev", "test")}
    for s, p in paths.items():
        if not os.path.exists(p):
            raise DataError(f"missing corpus split: {p}")

    token_lists = [tokenize(rec.text) for rec in read_corpus(paths["train"])]
    token_lists += [tokenize(term) for e in entries for term in e.pool]
    vocab = Vocabulary.from_token_lists(token_lists)

    max_len = int(cfg["max_len"])
    splits = {s: ingest_corpus(p, vocab, codes, max_len) for s, p in paths.items()}

    pretrained = None
    if embeddings_path:
        pretrained = load_embeddings(embeddings_path, vocab, int(cfg["emb_dim"]),
                                     Rng(int(cfg["seed"])).child("pretrained"))
    return entries, vocab, splits, pretrained


def cmd_train(args) -> int:
    cfg = _merge_config(args)
    from .model import Model
    from .rng import Rng
    from .training import train

    model_cfg = _model_config(cfg)
    train_cfg = _train_config(cfg)
    entries, vocab, splits, pretrained = _load_splits(
        cfg, args.corpus_dir, args.dict, args.embeddings)

    model = Model.build(vocab, [e.code for e in entries], model_cfg,
                        Rng(train_cfg.seed).child("init"), pretrained)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train_log.jsonl")
    log_fh = open(log_path, "w", encoding="utf-8")

    def log(entry):
        line = json.dumps(entry, sort_keys=True)
        print(line)
        log_fh.write(line + "\n")
        log_fh.flush()

    try:
        result = train(model, entries, splits["train"], splits["dev"], train_cfg,
                       test_docs=splits["test"], log=log)
    finally:
        log_fh.close()

    extra = {
        "run_config": cfg,
        "threshold": result.threshold.value,
        "threshold_metric": result.threshold.metric,
        "best_epoch": result.best_epoch,
        "synonym_sample": result.synonym_sample,
    }
    ckpt_path = os.path.join(args.out, "checkpoint.npz")
    result.model.save(ckpt_path, extra)
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"run_config": cfg, "best_epoch": result.best_epoch,
                             "test": result.test_report.to_dict()}, indent=2))
        fh.write("\n")
    print(result.test_report.to_table())
    print(f"checkpoint: {ckpt_path}")
    print(f"report: {report_path}")
    return 0


def _restore(ckpt_path):
    from .model import Model

    model, extra = Model.load(ckpt_path)
    return model, extra


def _sample_ids(model, extra):
    """Rebuild padded synonym token ids from the checkpointed sample."""
    import numpy as np

    from .text import tokenize

    chosen = extra["synonym_sample"]
    seqs = [model.vocab.encode(tokenize(term)[:32]) for code_terms in chosen
            for term in code_terms]
    t = max(1, max(len(s) for s in seqs))
    ids = np.zeros((len(seqs), t), dtype=np.int64)
    mask = np.zeros((len(seqs), t), dtype=model.config.dtype)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return ids, mask


def cmd_evaluate(args) -> int:
    from .errors import DataError
    from .metrics import compute_report
    from .text import ingest_corpus
    from .training import labels_matrix, predict_probs, tune_threshold

    model, extra = _restore(args.checkpoint)
    if args.dict:
        from .synonyms import load_dictionary

        dict_codes = {e.code for e in load_dictionary(args.dict)}
        missing = sorted(set(model.codes) ^ dict_codes)
        if missing:
            raise DataError(
                f"checkpoint and dictionary code sets differ; mismatched: {missing}")
    docs = ingest_corpus(args.corpus, model.vocab, model.codes,
                         int(extra["run_config"].get("max_len", 4000)))
    syn_ids, syn_mask = _sample_ids(model, extra)
    probs = predict_probs(model, docs, syn_ids, syn_mask, args.batch_size or 16)
    labels = labels_matrix(docs, model.code_index)
    threshold = extra["threshold"]
    if args.tune_threshold:
        threshold = tune_threshold(probs, labels).value
    ks = _parse_ks(args.p_at_k) if args.p_at_k else _parse_ks(
        extra["run_config"].get("p_at_k", "5"))
    report = compute_report(probs, labels, model.codes, threshold, ks)
    print(report.to_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
            fh.write("\n")
    return 0


def cmd_predict(args) -> int:
    from .errors import DataError
    from .text import Document, read_corpus, tokenize, truncate

    model, extra = _restore(args.checkpoint)
    texts = []
    if args.text is not None:
        texts.append(("stdin-0", args.text))
    if args.file:
        if args.file.endswith(".jsonl"):
            texts.extend((rec.id, rec.text) for rec in read_corpus(args.file))
        else:
            with open(args.file, encoding="utf-8") as fh:
                texts.extend((f"line-{i}", line.strip())
                             for i, line in enumerate(fh, 1) if line.strip())
    if not texts:
        raise DataError("no input: pass --text or --file with at least one document")

    max_len = int(extra["run_config"].get("max_len", 4000))
    docs = []
    for doc_id, text in texts:
        toks = truncate(tokenize(text), max_len)
        if not toks:
            raise DataError(f"document {doc_id!r} is empty after tokenization")
        docs.append(Document(doc_id, model.vocab.encode(toks)))

    from .training import predict_probs

    syn_ids, syn_mask = _sample_ids(model, extra)
    probs = predict_probs(model, docs, syn_ids, syn_mask, args.batch_size or 16)
    threshold = extra["threshold"]
    for doc, row in zip(docs, probs):
        order = sorted(range(len(model.codes)), key=lambda c: (-row[c], model.codes[c]))
        shown = order if args.all else order[:args.top_k]
        print(f"# {doc.id}")
        for c in shown:
            mark = "*" if row[c] >= threshold else " "
            print(f"  {mark} {model.codes[c]}  {row[c]:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .errors import VerificationError
    from .gradcheck import run_model_gradcheck

    report = run_model_gradcheck(precision=args.precision or 64,
                                 scorer=args.scorer or "biaffine",
                                 seed=args.seed if args.seed is not None else 0,
                                 corrupt=args.corrupt)
    print("\n".join(report.lines()))
    if not report.passed:
        raise VerificationError(
            f"gradient check failed for: {', '.join(report.failing_groups())}")
    return 0


def cmd_export_reprs(args) -> int:
    from . import autodiff as ad
    from .scoring import code_repr

    model, extra = _restore(args.checkpoint)
    syn_ids, syn_mask = _sample_ids(model, extra)
    with ad.no_grad():
        queries = model.synonym_queries(syn_ids, syn_mask, training=False)
        pooled = code_repr(queries)
    q = queries.data
    ql = pooled.data
    h = q.shape[-1]
    chosen = extra["synonym_sample"]
    with open(args.out, "w", encoding="utf-8") as fh:
        header = ["code", "kind", "surface"] + [f"v{i}" for i in range(h)]
        fh.write("\t".join(header) + "\n")
        for ci, code in enumerate(model.codes):
            for j in range(model.config.num_synonyms):
                row = [code, f"synonym-{j + 1}", chosen[ci][j]]
                row += [f"{x:.17g}" for x in q[ci, j]]
                fh.write("\t".join(row) + "\n")
            row = [code, "pooled", ""] + [f"{x:.17g}" for x in ql[ci]]
            fh.write("\t".join(row) + "\n")
    total = len(model.codes) * (model.config.num_synonyms + 1)
    print(f"wrote {total} vectors of dim {h} to {args.out}")
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="synmatch",
                     description="Synonym-matching multi-label code assignment")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="emit a synthetic corpus + dictionary")
    gen.add_argument("--out", required=True)
    gen.add_argument("--codes", type=int, default=20)
    gen.add_argument("--synonyms-per-code", type=int, default=3)
    gen.add_argument("--filler-vocab", type=int, default=500)
    gen.add_argument("--doc-len-min", type=int, default=80)
    gen.add_argument("--doc-len-max", type=int, default=150)
    gen.add_argument("--codes-per-doc-min", type=int, default=1)
    gen.add_argument("--codes-per-doc-max", type=int, default=4)
    gen.add_argument("--train-size", type=int, default=2000)
    gen.add_argument("--dev-size", type=int, default=200)
    gen.add_argument("--test-size", type=int, default=400)
    gen.add_argument("--synonym-usage", type=float, default=0.7,
                     help="probability a mention uses a non-description synonym")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--force", action="store_true")
    gen.set_defaults(func=cmd_generate)

    def add_shared(p):
        p.add_argument("--config", help="flat 'key = value' settings file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS thread cap (graph execution is single-threaded)")
        p.add_argument("--precision", type=int, choices=(32, 64), default=None)

    tr = sub.add_parser("train", help="train on a corpus directory")
    add_shared(tr)
    tr.add_argument("--corpus-dir", required=True)
    tr.add_argument("--dict", default=None, help="dictionary path "
                    "(default: <corpus-dir>/dictionary.jsonl)")
    tr.add_argument("--embeddings", default=None, help="word2vec-text vectors")
    tr.add_argument("--out", required=True)
    tr.add_argument("--synonyms", type=int, default=None, help="synonyms per code (M)")
    tr.add_argument("--scorer", choices=("biaffine", "dot", "per_label"), default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--batch-size", type=int, default=None)
    tr.add_argument("--rdrop", type=float, default=None)
    tr.add_argument("--emb-dim", type=int, default=None)
    tr.add_argument("--lstm-hidden", type=int, default=None)
    tr.add_argument("--lstm-layers", type=int, default=None)
    tr.add_argument("--output-dim", type=int, default=None)
    tr.add_argument("--emb-dropout", type=float, default=None)
    tr.add_argument("--rep-dropout", type=float, default=None)
    tr.add_argument("--weight-decay", type=float, default=None)
    tr.add_argument("--clip", type=float, default=None)
    tr.add_argument("--adam-eps", type=float, default=None)
    tr.add_argument("--max-len", type=int, default=None)
    tr.add_argument("--p-at-k", default=None, help="comma-separated k list")
    tr.add_argument("--resample-synonyms", action="store_const", const=True, default=None)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="evaluate a checkpoint on a corpus file")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--dict", default=None, help="cross-check the code set")
    ev.add_argument("--tune-threshold", action="store_true",
                    help="re-tune the threshold on this split")
    ev.add_argument("--batch-size", type=int, default=None)
    ev.add_argument("--p-at-k", default=None)
    ev.add_argument("--out", default=None, help="write the JSON report here")
    ev.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="rank codes for new text")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--text", default=None)
    pr.add_argument("--file", default=None,
                    help=".jsonl corpus or plain text (one document per line)")
    pr.add_argument("--top-k", type=int, default=5)
    pr.add_argument("--all", action="store_true")
    pr.add_argument("--batch-size", type=int, default=None)
    pr.set_defaults(func=cmd_predict)

    gc = sub.add_parser("gradcheck", help="verify gradients on a micro model")
    gc.add_argument("--precision", type=int, choices=(32, 64), default=64)
    gc.add_argument("--scorer", choices=("biaffine", "dot", "per_label"),
                    default="biaffine")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--corrupt", default=None,
                    help="test hook: corrupt one parameter group's gradient")
    gc.set_defaults(func=cmd_gradcheck)

    ex = sub.add_parser("export-reprs", help="dump synonym and code vectors as TSV")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export_reprs)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = getattr(args, "threads", None)
    if threads:
        _set_threads(int(threads))
    from .errors import DataError, VerificationError

    try:
        return args.func(args)
    except VerificationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
