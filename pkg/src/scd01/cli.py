"""Command-line driver: featurize, train, eval, attack, report.

Options can also come from a flat ``key = value`` file given with
``--config``; flags on the command line win. Exit status is 0 on success,
1 for usage errors and 2 when input data cannot be read or does not fit.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .attack import (
    SUMMARY_HEADER,
    AttackConfig,
    TextClassifier,
    build_synonym_index,
    evaluate,
)
from .cnn import ConvTrainConfig, train_conv
from .ensemble import Ensemble, load_ensemble, save_ensemble
from .network import LabeledDataset
from .text import (
    DEFAULT_MAX_LEN,
    CORPUS_FORMATS,
    DocBatch,
    Document,
    EmbeddingFormatError,
    average_vector,
    corpus_stats,
    load_corpus,
    load_embeddings,
)
from .trainer import TrainConfig, parse_config_lines, train

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

MODEL_TYPES = {
    "scd01": "averaged",
    "scd01-binary": "averaged",
    "cnn01": "stacked",
    "cnn01-fs": "stacked",
}
MODEL_NAMES = {"scd01": "SCD01", "scd01-binary": "SCD01-B", "cnn01": "CNN01", "cnn01-fs": "CNN01-FS"}

FEATURES_MANIFEST = "features.json"
ATTACK_STREAM = 1


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# options ------------------------------------------------------------------

# name -> (type, default); every one of these may also appear in --config
OPTIONS = {
    "data": (str, None),
    "format": (str, "signed"),
    "embeddings": (str, None),
    "features": (str, None),
    "model": (str, None),
    "model_type": (str, "scd01"),
    "votes": (int, 8),
    "max_len": (int, None),
    "epochs": (int, 1000),
    "learning_rate": (float, 1.0),
    "batch_fraction": (float, 0.75),
    "feature_pool_size": (int, 128),
    "hidden_nodes": (int, 20),
    "n_filters": (int, 32),
    "filter_width": (int, 3),
    "accept_ties": (str, "false"),
    "seed": (int, 0),
    "n_candidates": (int, 50),
    "min_similarity": (float, 0.5),
    "max_perturb": (float, 1.0),
    "limit": (int, None),
    "dataset": (str, None),
    "adversarial": (str, "false"),
    "n_jobs": (int, None),
    "synonym_embeddings": (str, None),
    "out": (str, None),
}

COMMAND_OPTIONS = {
    "featurize": ["data", "format", "embeddings", "model_type", "max_len", "out"],
    "train": [
        "data", "format", "embeddings", "features", "model_type", "votes", "max_len",
        "epochs", "learning_rate", "batch_fraction", "feature_pool_size", "hidden_nodes",
        "n_filters", "filter_width", "accept_ties", "seed", "n_jobs", "out",
    ],
    "eval": ["model", "data", "format", "embeddings", "features", "out"],
    "attack": [
        "model", "data", "format", "embeddings", "synonym_embeddings", "n_candidates", "min_similarity",
        "max_perturb", "limit", "seed", "dataset", "adversarial", "n_jobs", "out",
    ],
}

HELP = {
    "data": "corpus file (label<TAB>text or label,text)",
    "format": f"corpus label format: {', '.join(sorted(CORPUS_FORMATS))}",
    "embeddings": "GloVe-format text embeddings",
    "features": "directory written by 'featurize' (instead of --data/--embeddings)",
    "model": "directory written by 'train'",
    "model_type": ", ".join(MODEL_TYPES),
    "votes": "ensemble size k",
    "max_len": "tokens kept per document for the convolutional models",
    "accept_ties": "also accept steps that leave the training error unchanged",
    "limit": "attack a seeded random subset of this many documents",
    "adversarial": "also write the perturbed documents",
    "synonym_embeddings": "embeddings for the synonym search (default: the model's)",
    "out": "output directory",
}


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def build_parser():
    parser = _Parser(prog="scd01", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command, names in COMMAND_OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", help="flat 'key = value' option file")
        for name in names:
            flag = "--" + name.replace("_", "-")
            if name in ("accept_ties", "adversarial"):
                p.add_argument(flag, nargs="?", const="true", default=None, help=HELP.get(name))
            else:
                p.add_argument(flag, type=OPTIONS[name][0], default=None, help=HELP.get(name))
    p = sub.add_parser("report")
    p.add_argument("summaries", nargs="+", help="summary.tsv files written by 'attack'")
    p.add_argument("--out", help="write the table here instead of stdout")
    return parser


def resolve_options(args):
    """Defaults, then the config file, then flags. Returns a plain dict."""
    names = COMMAND_OPTIONS[args.command]
    opts = {name: OPTIONS[name][1] for name in names}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                values = parse_config_lines(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        except ValueError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
        for key, text in values.items():
            if key not in names:
                raise UsageError(f"{args.config}: unknown option {key!r} for '{args.command}'")
            try:
                opts[key] = OPTIONS[key][0](text)
            except ValueError:
                raise UsageError(f"{args.config}: invalid value for {key}: {text!r}") from None
    for name in names:
        value = getattr(args, name)
        if value is not None:
            opts[name] = value
    for name in ("accept_ties", "adversarial"):
        if name in opts:
            try:
                opts[name] = _bool(opts[name])
            except ValueError:
                raise UsageError(f"invalid value for {name}: {opts[name]!r}") from None
    if "model_type" in opts and opts["model_type"] not in MODEL_TYPES:
        raise UsageError(f"model_type must be one of {', '.join(MODEL_TYPES)}")
    if "format" in opts and opts["format"] not in CORPUS_FORMATS:
        raise UsageError(f"format must be one of {', '.join(sorted(CORPUS_FORMATS))}")
    return opts


def _require(opts, *names):
    missing = [n for n in names if not opts.get(n)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


# data loading ---------------------------------------------------------------


def _read_corpus(path, fmt):
    try:
        return load_corpus(path, fmt)
    except OSError as exc:
        raise DataError(f"cannot read corpus: {exc}") from None
    except (ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _read_embeddings(path, vocabulary=None):
    try:
        return load_embeddings(path, vocabulary)
    except OSError as exc:
        raise DataError(f"cannot read embeddings: {exc}") from None
    except (EmbeddingFormatError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _vocabulary(*corpora):
    return {t for corpus in corpora for doc in corpus for t in doc.tokens}


def _max_len(opts):
    if opts.get("max_len"):
        return opts["max_len"]
    return DEFAULT_MAX_LEN.get(opts.get("format"), 64)


def featurize_documents(docs, table, representation, max_len):
    if representation == "averaged":
        X = np.empty((len(docs), table.dim))
        for i, doc in enumerate(docs):
            X[i], _ = average_vector(doc, table)
        return X
    return DocBatch.from_documents(docs, table, max_len)


def write_features(directory, representation, X, y, **info):
    """Store a featurized corpus as ``.npy`` arrays plus a small JSON header."""
    os.makedirs(directory, exist_ok=True)
    y = np.asarray(y, dtype=np.int8)
    if representation == "averaged":
        arrays = {"X": np.asarray(X, dtype=np.float64)}
    else:
        arrays = {"indices": X.indices, "lengths": X.lengths, "vectors": X.vectors}
    arrays["y"] = y
    for name, arr in arrays.items():
        np.save(os.path.join(directory, name + ".npy"), arr, allow_pickle=False)
    header = {"representation": representation, "n_docs": int(len(y)), **info}
    with open(os.path.join(directory, FEATURES_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_features(directory):
    """Return ``(representation, X, y, header)`` from :func:`write_features` output."""
    try:
        with open(os.path.join(directory, FEATURES_MANIFEST), encoding="utf-8") as fh:
            header = json.load(fh)

        def load(name):
            return np.load(os.path.join(directory, name + ".npy"), allow_pickle=False)

        y = load("y").astype(np.int64)
        if header["representation"] == "averaged":
            X = load("X")
        else:
            X = DocBatch(load("indices"), load("lengths"), load("vectors"))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read features from {directory}: {exc}") from None
    return header["representation"], X, y, header


def _load_training_data(opts, representation):
    """Features and labels from --features or --data/--embeddings."""
    if opts.get("features"):
        rep, X, y, header = read_features(opts["features"])
        if rep != representation:
            raise DataError(
                f"model type {opts['model_type']} needs {representation} features, "
                f"{opts['features']} holds {rep} features"
            )
        inputs = {"features": opts["features"]}
        for key in ("data", "format", "embeddings"):
            if header.get(key):
                inputs[key] = header[key]
        return X, y, inputs, header.get("max_len")
    _require(opts, "data", "embeddings")
    corpus = _read_corpus(opts["data"], opts["format"])
    table = _read_embeddings(opts["embeddings"], _vocabulary(corpus))
    max_len = _max_len(opts) if representation == "stacked" else None
    X = featurize_documents(corpus, table, representation, max_len)
    y = np.array([d.label for d in corpus])
    inputs = {"data": opts["data"], "format": opts["format"], "embeddings": opts["embeddings"]}
    return X, y, inputs, max_len


# commands -------------------------------------------------------------------


def cmd_featurize(opts):
    _require(opts, "data", "embeddings", "out")
    representation = MODEL_TYPES[opts["model_type"]]
    corpus = _read_corpus(opts["data"], opts["format"])
    table = _read_embeddings(opts["embeddings"], _vocabulary(corpus))
    max_len = _max_len(opts) if representation == "stacked" else None
    X = featurize_documents(corpus, table, representation, max_len)
    write_features(
        opts["out"], representation, X, [d.label for d in corpus],
        data=opts["data"], format=opts["format"], embeddings=opts["embeddings"], max_len=max_len,
    )
    stats = corpus_stats(corpus, table)
    stats.update(malformed=corpus.malformed, filtered=corpus.filtered)
    lines = ["stat\tvalue"] + [f"{k}\t{v}" for k, v in stats.items()]
    with open(os.path.join(opts["out"], "stats.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))


def _train_config(opts):
    model_type = opts["model_type"]
    values = dict(opts)
    if model_type.startswith("cnn01"):
        values["pooling_mode"] = "positive_sum" if model_type == "cnn01-fs" else "signed_average"
        cls = ConvTrainConfig
    else:
        values["binary_mode"] = model_type == "scd01-binary"
        cls = TrainConfig
    names = {f.name for f in fields(cls)}
    try:
        return cls(**{k: v for k, v in values.items() if k in names})
    except ValueError as exc:
        raise UsageError(f"invalid training configuration: {exc}") from None


def _train_member(X, y, config, i):
    config = type(config)(**{**asdict(config), "seed": config.seed + i})
    if isinstance(config, ConvTrainConfig):
        return train_conv(X, y, config)
    return train(LabeledDataset(X, y), config)


def cmd_train(opts):
    _require(opts, "out")
    if opts["votes"] < 1:
        raise UsageError("votes must be at least 1")
    config = _train_config(opts)
    representation = MODEL_TYPES[opts["model_type"]]
    X, y, inputs, max_len = _load_training_data(opts, representation)
    if set(np.unique(y)) != {-1, 1}:
        raise DataError("training data must contain both classes")
    if representation == "stacked" and config.filter_width > X.max_len:
        raise UsageError(f"filter_width {config.filter_width} exceeds max_len {X.max_len}")
    results = Parallel(n_jobs=opts.get("n_jobs"))(
        delayed(_train_member)(X, y, config, i) for i in range(opts["votes"])
    )
    out = opts["out"]
    ensemble = Ensemble([model for model, _ in results])
    save_ensemble(
        ensemble,
        out,
        opts["model_type"],
        representation=representation,
        inputs=inputs,
        max_len=max_len,
        seed=config.seed,
        config=asdict(config),
    )
    for i, (_, log) in enumerate(results):
        log.write_tsv(os.path.join(out, f"log_member_{i:03d}.tsv"))
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        # n_jobs only schedules work; it is left out so artifacts do not depend on it
        for key in sorted(opts):
            if opts[key] is not None and key != "n_jobs":
                fh.write(f"{key} = {opts[key]}\n")
    train_acc = float(np.mean(ensemble.predict(X) == y))
    print(f"trained {ensemble.k} x {opts['model_type']} on {len(y)} documents; train accuracy {100 * train_acc:.1f}%")


def _load_model(path):
    try:
        return load_ensemble(path)
    except OSError as exc:
        raise DataError(f"cannot read model: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _model_embeddings(opts, manifest):
    path = opts.get("embeddings") or manifest.get("inputs", {}).get("embeddings")
    if not path:
        raise UsageError("no --embeddings given and the model manifest names none")
    return path


def _featurizer(table, manifest):
    representation = manifest["representation"]
    max_len = manifest.get("max_len")

    def featurize(docs):
        docs = [Document(d, 1) if not isinstance(d, Document) else d for d in docs]
        return featurize_documents(docs, table, representation, max_len)

    return featurize


def cmd_eval(opts):
    _require(opts, "model")
    ensemble, manifest = _load_model(opts["model"])
    representation = manifest.get("representation")
    if opts.get("features"):
        rep, X, y, _ = read_features(opts["features"])
        if rep != representation:
            raise DataError(
                f"{manifest['model_type']} model expects {representation} inputs, "
                f"{opts['features']} holds {rep} features"
            )
    else:
        _require(opts, "data")
        corpus = _read_corpus(opts["data"], opts["format"])
        table = _read_embeddings(_model_embeddings(opts, manifest), _vocabulary(corpus))
        X = featurize_documents(corpus, table, representation, manifest.get("max_len"))
        y = np.array([d.label for d in corpus])
    _check_inputs(ensemble, X)
    pred = ensemble.predict(X)
    lines = ["class\tn\tcorrect\taccuracy"]
    for name, mask in (("-1", y == -1), ("+1", y == 1), ("all", np.ones(len(y), bool))):
        n = int(mask.sum())
        correct = int(np.sum(pred[mask] == y[mask]))
        acc = f"{100 * correct / n:.1f}" if n else "nan"
        lines.append(f"{name}\t{n}\t{correct}\t{acc}")
    text = "\n".join(lines) + "\n"
    if opts.get("out"):
        os.makedirs(opts["out"], exist_ok=True)
        with open(os.path.join(opts["out"], "eval.tsv"), "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")


def _check_inputs(ensemble, X):
    member = ensemble.members[0]
    if isinstance(X, DocBatch):
        if not hasattr(member, "filters"):
            raise DataError("stacked document inputs given to an averaged-vector model")
        if X.dim != member.dim:
            raise DataError(f"inputs have dimension {X.dim}, model expects {member.dim}")
    else:
        if hasattr(member, "filters"):
            raise DataError("averaged-vector inputs given to a convolutional model")
        if X.shape[1] != member.n_features:
            raise DataError(f"inputs have dimension {X.shape[1]}, model expects {member.n_features}")


def cmd_attack(opts):
    _require(opts, "model", "data", "out")
    ensemble, manifest = _load_model(opts["model"])
    try:
        config = AttackConfig(opts["n_candidates"], opts["min_similarity"], opts["max_perturb"])
    except ValueError as exc:
        raise UsageError(f"invalid attack configuration: {exc}") from None
    corpus = list(_read_corpus(opts["data"], opts["format"]))
    if opts.get("limit") is not None:
        if opts["limit"] < 1:
            raise UsageError("limit must be at least 1")
        if opts["limit"] < len(corpus):
            rng = np.random.default_rng([opts["seed"], ATTACK_STREAM])
            keep = np.sort(rng.choice(len(corpus), size=opts["limit"], replace=False))
            corpus = [corpus[i] for i in keep]
    table = _read_embeddings(_model_embeddings(opts, manifest))
    featurize = _featurizer(table, manifest)
    _check_inputs(ensemble, featurize(corpus[:1]))
    if opts.get("synonym_embeddings"):
        synonyms = _read_embeddings(opts["synonym_embeddings"])
    else:
        synonyms = table
    index = build_synonym_index(
        synonyms, config.n_candidates, config.min_similarity, vocabulary=_vocabulary(corpus)
    )
    report = evaluate(TextClassifier(ensemble, featurize), corpus, index, config, n_jobs=opts.get("n_jobs"))
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    dataset = opts.get("dataset") or opts["format"]
    model = MODEL_NAMES.get(manifest.get("model_type"), manifest.get("model_type", "model"))
    summary = report.summary_tsv(dataset, model)
    with open(os.path.join(out, "attack_report.tsv"), "w", encoding="utf-8") as fh:
        fh.write(report.rows_tsv())
    with open(os.path.join(out, "summary.tsv"), "w", encoding="utf-8") as fh:
        fh.write(summary)
    if opts.get("adversarial"):
        with open(os.path.join(out, "adversarial.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.adversarial_text())
    print(summary, end="")


def read_summary(path):
    """Rows ``(dataset, model, Cl, Adv, Que)`` from a summary file."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line.rstrip("\r\n") for line in fh if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read summary: {exc}") from None
    if not lines or lines[0] != SUMMARY_HEADER:
        raise DataError(f"{path}: not a summary file (bad header)")
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split("\t")
        try:
            if len(parts) != 5:
                raise ValueError("expected 5 fields")
            rows.append((parts[0], parts[1], float(parts[2]), float(parts[3]), int(parts[4])))
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no summary rows")
    return rows


def merge_summaries(rows):
    """Table text with a ``*`` on the highest-Adv row(s) of each dataset."""
    best = {}
    for dataset, _, _, adv, _ in rows:
        best[dataset] = max(adv, best.get(dataset, adv))
    order = list(dict.fromkeys(r[0] for r in rows))
    lines = ["dataset\tmodel\tCl\tAdv\tQue\tbest"]
    for dataset in order:
        for d, model, cl, adv, que in rows:
            if d == dataset:
                mark = "*" if adv == best[dataset] else ""
                lines.append(f"{d}\t{model}\t{cl:.1f}\t{adv:.1f}\t{que}\t{mark}")
    return "\n".join(lines) + "\n"


def cmd_report(args):
    rows = [row for path in args.summaries for row in read_summary(path)]
    table = merge_summaries(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table)
    print(table, end="")


COMMANDS = {"featurize": cmd_featurize, "train": cmd_train, "eval": cmd_eval, "attack": cmd_attack}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "report":
            cmd_report(args)
        else:
            COMMANDS[args.command](resolve_options(args))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
