"""``mproto`` command line: synth, annotate, train, eval, diagnose, sweep, replay.

Every command writes ``manifest.json`` into its output directory with the
command, arguments, resolved config, seed, input digests, package version
and digests of everything it wrote.  ``mproto replay`` re-runs a manifest
into a fresh directory and checks that the outputs match byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .assignment import assign_batch, transport_plan_diagnostic
from .config import ConfigError, dump_config, load_config
from .corpus import (
    CorpusError,
    SynthConfig,
    attach_features,
    decode_spans,
    file_digest,
    generate_synthetic,
    infer_classes,
    load_column_corpus,
    load_feature_store,
    save_feature_store,
    span_f1,
    to_bio,
    write_column_corpus,
)
from .distant import Gazetteer, annotate, annotation_quality, load_gazetteer, save_gazetteer, subsample_dictionary
from .encoder import Vocabulary, load_embeddings, save_embeddings
from .ot import ContractError
from .prototypes import classify, similarity
from .trainer import (
    build_encoder,
    class_similarity,
    encode,
    fit,
    load_checkpoint,
    new_state,
    predict,
    save_checkpoint,
    solver_settings,
)

logger = logging.getLogger("mproto")

MANIFEST = "manifest.json"
PATH_ARGS = ("config", "corpus", "gazetteer", "checkpoint", "features", "metrics", "out")


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _require_file(path, what):
    if path is None or not Path(path).is_file():
        raise CliError(f"{what} not found: {path}")
    return Path(path)


def n_columns(path):
    """Column count of the first token line, 0 for an empty file."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("-DOCSTART-"):
                return len(line.split())
    return 0


def has_column(path, col):
    return col is not None and col < n_columns(path)


class Run:
    """Collects inputs and outputs of one command for its manifest."""

    def __init__(self, command, args, out_dir):
        self.command = command
        self.args = {
            k: _abs(v) if k in PATH_ARGS else v for k, v in vars(args).items() if k not in ("func", "verbose")
        }
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        self.outputs = []
        self.config = None
        self.seed = None

    def input(self, path):
        path = Path(path)
        self.inputs[str(path.resolve())] = file_digest(path)
        return path

    def path(self, name):
        self.outputs.append(name)
        return self.out / name

    def finish(self):
        manifest = {
            "command": self.command,
            "args": self.args,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": {name: file_digest(self.out / name) for name in sorted(set(self.outputs))},
            "version": __version__,
            "output_dir": str(self.out.resolve()),
        }
        write_json(self.out / MANIFEST, manifest)
        return manifest


def _abs(path):
    return None if path is None else str(Path(path).resolve())


def _resolve_data_paths(cfg, base):
    """Make config data paths absolute relative to the config file directory."""
    for name in ("train", "dev", "test", "train_features", "dev_features", "test_features", "embeddings"):
        value = getattr(cfg, name)
        if value is not None and not os.path.isabs(value):
            setattr(cfg, name, str((base / value).resolve()))
    return cfg


def load_split(run, path, cfg, class_names, features=None, label_col="config"):
    """Read a column file; gold is used when the file has the gold column."""
    run.input(_require_file(path, "corpus file"))
    if label_col == "config":
        label_col = cfg.label_col
    gold_col = cfg.gold_col if has_column(path, cfg.gold_col) else None
    if label_col is not None and not has_column(path, label_col):
        label_col = None
    sentences = load_column_corpus(path, class_names, cfg.token_col, label_col, gold_col)
    if features is not None:
        run.input(_require_file(features, "feature store"))
        attach_features(sentences, load_feature_store(features))
    return sentences


def _scores_row(scores):
    return {k: scores[k] for k in ("precision", "recall", "f1", "loc_f1", "cls_f1")}


# --------------------------------------------------------------------------
# synth


def synth_config(overrides):
    values = {}
    fields = {f.name: f for f in dataclasses.fields(SynthConfig)}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in fields:
            raise ConfigError(key, "unknown synthetic-data field")
        values[key] = yaml.safe_load(raw)
    if "sentence_length" in values:
        values["sentence_length"] = tuple(values["sentence_length"])
    return SynthConfig(**values)


def cmd_synth(args):
    run = Run("synth", args, args.out)
    scfg = synth_config(args.set)
    run.seed = scfg.seed
    run.config = dataclasses.asdict(scfg)
    data = generate_synthetic(scfg)
    with open(run.path("synth.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump({**run.config, "sentence_length": list(scfg.sentence_length)}, fh, sort_keys=False)
    for name, sents in data.splits.items():
        write_column_corpus(run.path(f"{name}.txt"), sents, data.class_names)
        save_feature_store(run.path(f"{name}_features.npz"), sents)
        with open(run.path(f"{name}_clusters.txt"), "w", encoding="utf-8") as fh:
            for cl in data.clusters[name]:
                fh.write(" ".join(str(int(k)) for k in cl) + "\n")
    save_embeddings(run.path("embeddings.npz"), Vocabulary(data.vocab[2:]), data.type_vectors)
    save_gazetteer(run.path("gazetteer.tsv"), Gazetteer([(tuple(s.split()), t) for t, s in data.dictionary]))
    save_gazetteer(
        run.path("unlabeled_forms.tsv"), Gazetteer([(tuple(s.split()), t) for t, s in data.unlabeled_forms])
    )
    np.savez(run.path("centers.npz"), centers=data.centers, center_class=data.center_class)
    train_cfg = {
        "profile": "synthetic",
        "seed": scfg.seed,
        "classes": data.class_names,
        "encoder": "mlp",
        "embeddings": "embeddings.npz",
        "train": "train.txt",
        "dev": "dev.txt",
        "test": "test.txt",
    }
    with open(run.path("train.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(train_cfg, fh, sort_keys=False)
    run.finish()
    print(f"wrote synthetic corpus ({sum(len(s) for s in data.splits['train'])} train tokens) to {run.out}")


# --------------------------------------------------------------------------
# annotate


def cmd_annotate(args):
    run = Run("annotate", args, args.out)
    corpus = run.input(_require_file(args.corpus, "corpus file"))
    gaz = load_gazetteer(run.input(_require_file(args.gazetteer, "gazetteer file")))
    n_entries = len(gaz)
    gaz = subsample_dictionary(gaz, args.fraction)
    gold_col = args.gold_col if has_column(corpus, args.gold_col) else None
    if args.classes:
        classes = args.classes.split(",")
    else:
        classes = ["O"] + sorted(set(gaz.types()) | set(infer_classes(corpus, None, gold_col)[1:]))
    sentences = load_column_corpus(corpus, classes, args.token_col, None, gold_col)
    if not sentences:
        raise CliError(f"corpus {corpus} contains no sentences")
    annotate(sentences, gaz, classes, args.case_insensitive)
    write_column_corpus(run.path("annotated.txt"), sentences, classes, columns=("labels", "gold"))
    report = {
        "classes": classes,
        "dictionary_entries": n_entries,
        "dictionary_fraction": args.fraction,
        "dictionary_entries_used": len(gaz),
        "sentences": len(sentences),
        "tokens": sum(len(s) for s in sentences),
    }
    if gold_col is not None:
        report["quality"] = annotation_quality(
            [s.labels for s in sentences], [s.gold for s in sentences], classes
        )
    write_json(run.path("quality.json"), report)
    run.finish()
    line = f"annotated {report['sentences']} sentences with {len(gaz)}/{n_entries} dictionary entries"
    if "quality" in report:
        q = report["quality"]
        line += f"; span P={q['precision']:.4f} R={q['recall']:.4f} F1={q['f1']:.4f}"
    print(line)


# --------------------------------------------------------------------------
# train


def train_run(cfg, run, on_step_log=None):
    """Load data per ``cfg``, train, write checkpoints and metrics into ``run``."""
    if cfg.train is None:
        raise ConfigError("train", "no training corpus given")
    classes = cfg.classes
    if classes is None:
        classes = infer_classes(cfg.train, cfg.label_col, cfg.gold_col if has_column(cfg.train, cfg.gold_col) else None)
    train = load_split(run, cfg.train, cfg, classes, cfg.train_features)
    if not train:
        raise CliError(f"training corpus {cfg.train} contains no sentences")
    dev = load_split(run, cfg.dev, cfg, classes, cfg.dev_features) if cfg.dev else None
    test = load_split(run, cfg.test, cfg, classes, cfg.test_features) if cfg.test else None
    for name, split in (("dev", dev), ("test", test)):
        if split and split[0].gold is None:
            raise CorpusError(f"{name} corpus has no gold column {cfg.gold_col}")
    vocab = embeddings = None
    if cfg.encoder == "mlp" and cfg.embeddings:
        vocab, embeddings = load_embeddings(run.input(_require_file(cfg.embeddings, "embeddings file")))
    encoder = build_encoder(cfg, train, vocab=vocab, embeddings=embeddings)
    state = new_state(cfg, encoder, classes)
    run.seed = cfg.seed
    run.config = cfg.to_dict()
    dump_config(run.path("config.yaml"), cfg)

    best_path = run.path("best.npz")
    metrics_fh = open(run.path("metrics.jsonl"), "w", encoding="utf-8")

    def emit(kind, record):
        metrics_fh.write(json.dumps({"type": kind, **record}, sort_keys=True, default=_json_default) + "\n")

    def on_step(m):
        emit("step", m)
        if on_step_log:
            on_step_log(m)

    def on_epoch(rec):
        emit("epoch", rec)
        dev_f1 = rec.get("dev", {}).get("f1")
        logger.info("epoch %d: dev f1 %s", rec["epoch"], "n/a" if dev_f1 is None else f"{dev_f1:.4f}")

    def on_best(st):
        save_checkpoint(best_path, st, cfg)

    try:
        hist = fit(cfg, state, train, dev, test, on_step, on_epoch, on_best)
        results = {"best": hist.best, "test": hist.test, "classes": classes}
        emit("final", results)
    finally:
        metrics_fh.close()
    save_checkpoint(run.path("last.npz"), state, cfg)
    if not dev:
        save_checkpoint(best_path, state, cfg)
    write_json(run.path("results.json"), results)
    return hist, results


def _train_config(args):
    path = _require_file(args.config, "config file")
    cfg = load_config(path, args.set)
    return _resolve_data_paths(cfg, path.resolve().parent), path


def cmd_train(args):
    cfg, path = _train_config(args)
    run = Run("train", args, args.out)
    run.input(path)
    _, results = train_run(cfg, run)
    run.finish()
    best = results["best"]
    line = f"best dev f1 {best['dev_f1']:.4f} at epoch {best['epoch']}"
    if results["test"]:
        line += f"; test f1 {results['test']['f1']:.4f}"
    print(line)


# --------------------------------------------------------------------------
# eval / diagnose


def _load_eval_inputs(run, args, need_gold=False):
    state, cfg = load_checkpoint(run.input(_require_file(args.checkpoint, "checkpoint")))
    classes = state.bank.class_names
    if args.gold_col is not None:
        cfg.gold_col = args.gold_col
    corpus = _require_file(args.corpus, "corpus file")
    try:
        sentences = load_split(run, corpus, cfg, classes, args.features)
    except CorpusError as exc:
        if "unknown label" in str(exc):
            raise CorpusError(f"corpus labels do not match the checkpoint classes {classes}: {exc}") from None
        raise
    if not sentences:
        raise CliError(f"corpus {corpus} contains no sentences")
    if need_gold and sentences[0].gold is None:
        raise CorpusError(f"corpus {corpus} has no gold column {cfg.gold_col}; this diagnostic needs gold labels")
    run.seed = cfg.seed
    run.config = cfg.to_dict()
    return state, cfg, sentences


def cmd_eval(args):
    run = Run("eval", args, args.out)
    state, cfg, sentences = _load_eval_inputs(run, args)
    preds = predict(state.encoder, state.bank, sentences)
    names = state.bank.class_names
    with open(run.path("predictions.txt"), "w", encoding="utf-8") as fh:
        for s, p in zip(sentences, preds):
            tags = to_bio(p, names)
            for tok, tag in zip(s.tokens, tags):
                fh.write(f"{tok} {tag}\n")
            fh.write("\n")
    if sentences[0].gold is not None:
        scores = span_f1([decode_spans(p) for p in preds], [decode_spans(s.gold) for s in sentences], names)
        write_json(run.path("metrics.json"), scores)
        print(f"span P={scores['precision']:.4f} R={scores['recall']:.4f} F1={scores['f1']:.4f}")
    else:
        print(f"wrote predictions for {len(sentences)} sentences (no gold column, metrics omitted)")
    run.finish()


def pca_2d(x):
    """Project rows onto the top two principal directions (sign fixed)."""
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    # make the largest-magnitude loading positive so the output is stable
    signs = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(axis=1)])
    comps = comps * signs[:, None]
    out = centered @ comps.T
    if out.shape[1] < 2:
        out = np.hstack([out, np.zeros((len(out), 2 - out.shape[1]))])
    return out


def diagnose_features(run, state, sentences, plot):
    bank = state.bank
    feats = encode(state.encoder, sentences)
    preds = classify(similarity(feats, bank), bank.M)
    protos = bank.flat
    coords = pca_2d(np.vstack([feats, protos]))
    names = bank.class_names
    has_gold = sentences[0].gold is not None
    header = ["kind", "sentence", "token_index", "token", "label", "gold", "pred", "proto_class", "proto_index",
              "pc1", "pc2"] + [f"f{j}" for j in range(feats.shape[1])]
    with open(run.path("features.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        row = 0
        for s in sentences:
            for i, tok in enumerate(s.tokens):
                w.writerow(["token", s.sid, i, tok, names[s.labels[i]], names[s.gold[i]] if has_gold else "",
                            names[preds[row]], "", ""] + [repr(float(v)) for v in coords[row]]
                           + [repr(float(v)) for v in feats[row]])
                row += 1
        for k in range(len(protos)):
            c, m = divmod(k, bank.M)
            w.writerow(["prototype", "", "", "", "", "", "", names[c], m]
                       + [repr(float(v)) for v in coords[row + k]] + [repr(float(v)) for v in protos[k]])
    if plot:
        from . import plots

        labels = np.concatenate([s.gold if has_gold else s.labels for s in sentences])
        plots.feature_scatter(run.path("features.png"), coords[:row], labels, coords[row:],
                              np.arange(len(protos)) // bank.M, names)


def diagnose_transport(run, state, cfg, sentences, plot):
    bank = state.bank
    results, labels, gold = [], [], []
    for i in range(0, len(sentences), cfg.batch_size):
        batch = sentences[i:i + cfg.batch_size]
        feats = encode(state.encoder, batch)
        lab = np.concatenate([s.labels for s in batch])
        results.append(assign_batch(feats, bank, lab, cfg.beta, solver_settings(cfg), True))
        labels.append(lab)
        gold.append(np.concatenate([s.gold for s in batch]))
    counts = transport_plan_diagnostic(results, labels, gold, bank.K, bank.M)
    names = bank.class_names
    with open(run.path("transport.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["gold_class"] + [f"assigned_{n}" for n in names])
        for c, n in enumerate(names):
            w.writerow([n] + [int(v) for v in counts[c]])
    if plot:
        from . import plots

        plots.transport_heatmap(run.path("transport.png"), counts, names)
    return counts


def diagnose_similarity(run, state, sentences, plot, metrics_path=None):
    gold = np.concatenate([s.gold for s in sentences])
    sims = class_similarity(encode(state.encoder, sentences), state.bank, gold)
    with open(run.path("similarity.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "similarity"])
        for name, v in sims.items():
            w.writerow([name, repr(v)])
    curves = None
    if metrics_path is not None:
        epochs, curves = [], {}
        with open(run.input(_require_file(metrics_path, "metrics file")), encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec.get("type") == "epoch" and "train_sim" in rec:
                    epochs.append(rec["epoch"])
                    for name, v in rec["train_sim"].items():
                        curves.setdefault(name, []).append(v)
        with open(run.path("similarity_curve.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch"] + list(curves))
            for k, e in enumerate(epochs):
                w.writerow([e] + [repr(curves[n][k]) for n in curves])
    if plot:
        from . import plots

        plots.similarity_bars(run.path("similarity.png"), sims)
        if curves:
            plots.similarity_curves(run.path("similarity_curve.png"), epochs, curves)
    return sims


def cmd_diagnose(args):
    run = Run("diagnose", args, args.out)
    need_gold = args.which in ("transport", "similarity")
    state, cfg, sentences = _load_eval_inputs(run, args, need_gold=need_gold)
    if args.which == "features":
        diagnose_features(run, state, sentences, args.plot)
    elif args.which == "transport":
        diagnose_transport(run, state, cfg, sentences, args.plot)
    else:
        diagnose_similarity(run, state, sentences, args.plot, args.metrics)
    run.finish()
    print(f"wrote {args.which} diagnostic to {run.out}")


# --------------------------------------------------------------------------
# sweep / replay


def cmd_sweep(args):
    cfg_path = _require_file(args.config, "config file")
    run = Run("sweep", args, args.out)
    run.input(cfg_path)
    values = [yaml.safe_load(v) for v in args.values.split(",")]
    rows = []
    for value in values:
        sub_args = argparse.Namespace(config=args.config, set=list(args.set) + [f"{args.param}={value}"],
                                      out=str(run.out / f"{args.param}={value}"))
        cfg, _ = _train_config(sub_args)
        sub = Run("train", sub_args, sub_args.out)
        sub.input(cfg_path)
        _, results = train_run(cfg, sub)
        sub.finish()
        run.config = run.config or cfg.to_dict()
        run.seed = cfg.seed
        row = {args.param: value, "best_epoch": results["best"]["epoch"], "dev_f1": results["best"]["dev_f1"]}
        if results["test"]:
            row.update({f"test_{k}": v for k, v in _scores_row(results["test"]).items()})
        rows.append(row)
        for name in ("results.json", "metrics.jsonl"):
            run.outputs.append(f"{args.param}={value}/{name}")
        print(f"{args.param}={value}: dev f1 {row['dev_f1']:.4f}" +
              (f", test f1 {row['test_f1']:.4f}" if "test_f1" in row else ""))
    with open(run.path("sweep.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    if args.plot:
        from . import plots

        series = {"dev F1": [r["dev_f1"] for r in rows]}
        if "test_f1" in rows[0]:
            series["test F1"] = [r["test_f1"] for r in rows]
        plots.sweep_plot(run.path("sweep.png"), args.param, values, series)
    run.finish()


# outputs that legitimately differ between runs (images embed metadata)
NON_DETERMINISTIC = (".png",)


def cmd_replay(args):
    path = _require_file(args.manifest, "manifest")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    for inp, digest in manifest["inputs"].items():
        if not Path(inp).is_file():
            raise CliError(f"replay input missing: {inp}")
        if file_digest(inp) != digest:
            raise CliError(f"replay input changed since the recorded run: {inp}")
    out = args.out or tempfile.mkdtemp(prefix="mproto-replay-")
    argv = replay_argv(manifest, out)
    code = main(argv)
    if code:
        return code
    with open(Path(out) / MANIFEST, encoding="utf-8") as fh:
        fresh = json.load(fh)
    mismatched = [
        name for name, digest in manifest["outputs"].items()
        if not name.endswith(NON_DETERMINISTIC) and fresh["outputs"].get(name) != digest
    ]
    if mismatched:
        raise CliError(f"replay differs in: {', '.join(mismatched)}")
    print(f"replay of {manifest['command']} reproduced {len(manifest['outputs'])} outputs in {out}")
    return 0


def replay_argv(manifest, out):
    """Rebuild a command line from a manifest, redirecting output to ``out``."""
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices[manifest["command"]]
    argv = [manifest["command"]]
    args = dict(manifest["args"], out=out)
    for action in sub._actions:
        if action.dest in ("help",) or action.dest not in args:
            continue
        value = args[action.dest]
        if not action.option_strings:
            argv.append(str(value))
        elif isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(action.option_strings[0])
        elif isinstance(action, argparse._AppendAction):
            for v in value or []:
                argv += [action.option_strings[0], str(v)]
        elif value is not None:
            argv += [action.option_strings[0], str(value)]
    return argv


# --------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="mproto", description="Multi-prototype distantly supervised NER.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sp = p.add_subparsers(dest="command", required=True)

    s = sp.add_parser("synth", help="generate a synthetic noisy corpus with features, embeddings and a dictionary")
    s.add_argument("--out", required=True)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="synthetic-data field override, e.g. unlabeled_fraction=0.3")
    s.set_defaults(func=cmd_synth)

    a = sp.add_parser("annotate", help="distant annotation by dictionary matching")
    a.add_argument("--corpus", required=True, help="column file: token [gold]")
    a.add_argument("--gazetteer", required=True, help="TYPE<TAB>surface form per line")
    a.add_argument("--out", required=True)
    a.add_argument("--fraction", type=float, default=1.0, help="keep the first ceil(p*n) dictionary entries")
    a.add_argument("--case-insensitive", action="store_true")
    a.add_argument("--token-col", type=int, default=0)
    a.add_argument("--gold-col", type=int, default=1, help="gold column, used when present")
    a.add_argument("--classes", help="comma-separated class list, O first")
    a.set_defaults(func=cmd_annotate)

    t = sp.add_parser("train", help="train from a YAML config")
    t.add_argument("config")
    t.add_argument("--out", required=True)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config field override")
    t.set_defaults(func=cmd_train)

    for name, helptext in (("eval", "predict and score a corpus"), ("diagnose", "emit diagnostic tables")):
        e = sp.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--corpus", required=True)
        e.add_argument("--out", required=True)
        e.add_argument("--features", help="feature store for a precomputed encoder")
        e.add_argument("--gold-col", type=int, help="override the gold column stored in the checkpoint config")
        if name == "diagnose":
            e.add_argument("--which", required=True, choices=("features", "transport", "similarity"))
            e.add_argument("--metrics", help="metrics.jsonl of the training run, for similarity curves")
            e.add_argument("--plot", action="store_true", help="also render PNG figures")
            e.set_defaults(func=cmd_diagnose)
        else:
            e.set_defaults(func=cmd_eval)

    w = sp.add_parser("sweep", help="train once per value of one config field")
    w.add_argument("config")
    w.add_argument("--param", required=True)
    w.add_argument("--values", required=True, help="comma-separated values")
    w.add_argument("--out", required=True)
    w.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    w.add_argument("--plot", action="store_true")
    w.set_defaults(func=cmd_sweep)

    r = sp.add_parser("replay", help="re-run a manifest and compare outputs")
    r.add_argument("manifest")
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except (CliError, ConfigError, CorpusError, ContractError, ValueError, OSError) as exc:
        print(f"mproto {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return code or 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
