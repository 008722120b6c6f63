"""Command line: ``synth``, ``train``, ``predict``, ``evaluate`` and ``gradcheck``.

Every option can also come from a ``key=value`` file passed with
``--config``; explicit flags win over the file, and the file wins over the
built-in defaults. Exit codes: 0 success, 2 input or configuration error,
3 numeric failure, 4 gradient-check failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass

from .exceptions import CheckpointError, ConfigError, InputError, NumericError, ParseError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 2, 3, 4

log = logging.getLogger("disentangle")


class UsageError(Exception):
    """Bad command-line or config-file usage; maps to exit code 2."""


def parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Option:
    name: str
    type: object
    default: object
    help: str = ""

    @property
    def flag(self):
        return "--" + self.name.replace("_", "-")


MODEL_OPTIONS = [
    Option("window", int, 50, "candidate window width C (includes the utterance itself)"),
    Option("hidden_dim", int, 64, "pair encoding size D"),
    Option("heads", int, 4, "attention heads N"),
    Option("recurrent_dim", int, 32, "recurrent hidden size per direction"),
    Option("hash_buckets", int, 4096, "hashed vocabulary size"),
    Option("max_tokens", int, 128, "tokens kept per utterance"),
    Option("dropout", float, 0.0, "dropout rate during training"),
    Option("speaker_mask", parse_bool, True, "restrict attention to same-speaker candidates"),
    Option("reference", parse_bool, True, "use the mention graph convolution"),
    Option("graph", str, "query", "reference graph scope: query or window"),
]

OPTIONS = {
    "synth": [
        Option("n", int, 200, "number of utterances"),
        Option("users", int, 6, "number of speakers"),
        Option("threads", int, 4, "number of threads"),
        Option("mention_prob", float, 0.9, "probability a reply names its parent's speaker"),
        Option("seed", int, 0, "random seed"),
        Option("out", str, ".", "output directory"),
    ],
    "train": MODEL_OPTIONS
    + [
        Option("epochs", int, 10, "passes over the training windows"),
        Option("batch_size", int, 8, "windows per optimizer step"),
        Option("lr", float, 1e-3, "peak learning rate"),
        Option("weight_decay", float, 0.01, "decoupled weight decay"),
        Option("lr_decay", str, "linear", "'linear' (to zero) or 'constant'"),
        Option("holdout", float, 0.1, "tail share of each dialogue used for held-out accuracy"),
        Option("seed", int, 0, "random seed for initialisation, shuffling and dropout"),
        Option("out", str, "model.npz", "checkpoint path"),
        Option("trace", str, None, "loss trace CSV path (default: <out>.trace.csv)"),
    ],
    "predict": [
        Option("model", str, "model.npz", "checkpoint path"),
        Option("out", str, "predicted.tsv", "predicted links TSV"),
        Option("confidence", str, None, "confidence JSON-lines path (default: <out>.confidence.jsonl)"),
    ],
    "evaluate": [
        Option("json", str, None, "also write the JSON report to this path"),
    ],
    "gradcheck": [
        Option("seeds", str, "0,1,2,3,4", "comma-separated seeds"),
        Option("step", float, 1e-4, "central-difference half-width"),
        Option("tol", float, 1e-3, "maximum relative error"),
    ],
}


def read_config_file(path, command):
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    known = {o.name: o for o in OPTIONS[command]}
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r} for {command}")
        try:
            values[key] = known[key].type(value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def build_parser():
    parser = argparse.ArgumentParser(prog="disentangle", description="Reply-to link prediction for tangled chat logs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help, positionals=()):
        p = sub.add_parser(name, help=help, argument_default=argparse.SUPPRESS)
        for pos, pos_help in positionals:
            p.add_argument(pos, help=pos_help)
        p.add_argument("--config", help="key=value file with defaults for the options below")
        for o in OPTIONS[name]:
            if o.type is parse_bool:
                p.add_argument(o.flag, dest=o.name, action=argparse.BooleanOptionalAction, help=f"{o.help} (default {o.default})")
            else:
                p.add_argument(o.flag, dest=o.name, type=o.type, help=f"{o.help} (default {o.default})")
        return p

    add("synth", "generate a synthetic tangled dialogue")
    add("train", "train a model", [("utterances", "utterance JSON-lines file"), ("links", "gold links TSV")])
    add("predict", "predict reply-to links", [("utterances", "utterance JSON-lines file")])
    add("evaluate", "compare predicted links against gold links", [("predicted", "predicted links TSV"), ("gold", "gold links TSV")])
    g = add("gradcheck", "compare analytic gradients with finite differences")
    # fault injection for testing the harness itself
    g.add_argument("--inject-wrong-sign", dest="inject_wrong_sign", action="store_true", help=argparse.SUPPRESS)
    return parser


def resolve(args):
    """Merge defaults, the config file and explicit flags (in rising priority)."""
    command = args.command
    values = {o.name: o.default for o in OPTIONS[command]}
    given = vars(args)
    if given.get("config"):
        values.update(read_config_file(given["config"], command))
    values.update({k: v for k, v in given.items() if k not in ("config", "command", "verbose")})
    return argparse.Namespace(**values)


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _require_writable(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"output directory does not exist: {parent}")
    if not os.access(parent, os.W_OK):
        raise UsageError(f"output directory is not writable: {parent}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(a, out=sys.stdout):
    from .corpus import SynthConfig, save_dialogue, synth_generate

    cfg = SynthConfig(n_utterances=a.n, n_users=a.users, n_threads=a.threads, mention_prob=a.mention_prob, seed=a.seed)
    cfg.validate()
    try:
        os.makedirs(a.out, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {a.out}: {exc.strerror}") from None
    utt_path = os.path.join(a.out, "utterances.jsonl")
    links_path = os.path.join(a.out, "links.tsv")
    _require_writable(utt_path)
    save_dialogue(synth_generate(cfg), utt_path, links_path)
    print(f"wrote {utt_path} and {links_path}", file=out)
    return EXIT_OK


def cmd_train(a, out=sys.stdout):
    from .corpus import load_dialogue
    from .model import ModelConfig
    from .pipeline import TrainConfig, train

    _require_file(a.utterances, "utterance file")
    _require_file(a.links, "links file")
    trace_path = a.trace or a.out + ".trace.csv"
    _require_writable(a.out)
    _require_writable(trace_path)
    model = ModelConfig(
        window=a.window,
        hidden_dim=a.hidden_dim,
        heads=a.heads,
        recurrent_dim=a.recurrent_dim,
        hash_buckets=a.hash_buckets,
        max_tokens=a.max_tokens,
        seed=a.seed,
        speaker_mask=a.speaker_mask,
        reference=a.reference,
        dropout=a.dropout,
        graph=a.graph,
    ).validate()
    cfg = TrainConfig(
        epochs=a.epochs,
        batch_size=a.batch_size,
        learning_rate=a.lr,
        weight_decay=a.weight_decay,
        lr_decay=a.lr_decay,
        seed=a.seed,
        window=a.window,
        holdout_fraction=a.holdout,
    ).validate()
    dialogue = load_dialogue(a.utterances, a.links)
    result = train([dialogue], cfg, model_config=model)
    result.model.save(a.out)
    with open(trace_path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy"])
        for r in result.trace:
            w.writerow([r.epoch, repr(r.loss), repr(r.accuracy)])
    last = result.trace[-1]
    print(f"epoch {last.epoch}: loss {last.loss:.4f}, held-out accuracy {last.accuracy:.4f}", file=out)
    print(f"wrote {a.out} and {trace_path}", file=out)
    return EXIT_OK


def cmd_predict(a, out=sys.stdout):
    from .corpus import dump_links, load_dialogue
    from .model import DisentanglementNet
    from .pipeline import predict

    _require_file(a.utterances, "utterance file")
    _require_file(a.model, "checkpoint")
    conf_path = a.confidence or a.out + ".confidence.jsonl"
    _require_writable(a.out)
    _require_writable(conf_path)
    net = DisentanglementNet.load(a.model)
    preds = predict(load_dialogue(a.utterances), net)
    with open(a.out, "w", encoding="ascii", newline="\n") as fh:
        dump_links({p.child: p.parent for p in preds}, fh)
    with open(conf_path, "w", encoding="ascii", newline="\n") as fh:
        for p in preds:
            fh.write(json.dumps({"child": p.child, "parent": p.parent, "confidence": p.confidence}) + "\n")
    print(f"wrote {len(preds)} links to {a.out} and confidences to {conf_path}", file=out)
    return EXIT_OK


def cmd_evaluate(a, out=sys.stdout):
    from .corpus import load_links
    from .metrics import evaluate_all, format_report

    _require_file(a.predicted, "predicted links")
    _require_file(a.gold, "gold links")
    if a.json:
        _require_writable(a.json)
    pred, gold = load_links(a.predicted), load_links(a.gold)
    report = evaluate_all(pred, gold)
    accuracy = sum(pred[c] == gold[c] for c in gold) / len(gold) if gold else float("nan")
    print(format_report(report), file=out)
    print(f"{'accuracy':<10}  {accuracy:10.4f}", file=out)
    text = json.dumps(report)
    print(text, file=out)
    if a.json:
        with open(a.json, "w", encoding="ascii") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_gradcheck(a, out=sys.stdout):
    from .gradcheck import layer_checks

    try:
        seeds = [int(s) for s in str(a.seeds).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {a.seeds!r}") from None
    if not seeds:
        raise UsageError("no seeds given")
    if a.step <= 0 or a.tol <= 0:
        raise UsageError("--step and --tol must be positive")
    failed = False
    print(f"{'seed':>4}  {'layer':<20}  {'max rel err':>12}  result", file=out)
    for seed in seeds:
        reports = layer_checks(seed=seed, step=a.step, flip_sign=getattr(a, "inject_wrong_sign", False))
        for name, rep in reports.items():
            ok = rep.passed(a.tol)
            failed |= not ok
            print(f"{seed:>4}  {name:<20}  {rep.max_rel_error:12.3e}  {'pass' if ok else 'FAIL'}", file=out)
            if not ok:
                e = rep.worst
                print(
                    f"      worst: {e.param}{list(e.index)} analytic {e.analytic:.6e} numeric {e.numeric:.6e}",
                    file=out,
                )
    return EXIT_GRADCHECK if failed else EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        resolved = resolve(args)
        return COMMANDS[args.command](resolved, out)
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, InputError, ParseError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
