"""Command-line entry point: ``s2srec2 {prepare,train,eval,complete}``.

Exit codes: 0 success, 1 runtime failure, 2 input validation failure.
"""
import argparse
import dataclasses
import difflib
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import (
    CorpusFormatError,
    Vocabulary,
    filter_corpus,
    load_corpus,
    load_pretrained_vectors,
    split_corpus,
    write_corpus,
)
from .evaluation import EvalConfig, build_eval_tasks, evaluate_system, evaluate_systems, system_for
from .experiments import SYSTEM_NAMES, build_systems
from .model import ModelConfig, S2SRec2
from .train import InferenceConfig, TrainConfig, TrainingDiverged, complete_basket, train, tune_alpha

log = logging.getLogger("s2srec2")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2

COMPLETION_SCHEMA = {
    "type": "object",
    "required": ["input", "predicted", "round_probs", "rounds_used", "stop_reason"],
    "additionalProperties": False,
    "properties": {
        "input": {"type": "array", "items": {"type": "string"}},
        "predicted": {"type": "array", "items": {"type": "string"}},
        "round_probs": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "rounds_used": {"type": "integer", "minimum": 0},
        "stop_reason": {"enum": ["stop", "max_rounds", "max_set_size", "exhausted"]},
        "trace": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["ingredient", "prob"],
                    "properties": {"ingredient": {"type": "string"}, "prob": {"type": "number"}},
                },
            },
        },
    },
}


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


def default_seed():
    raw = os.environ.get("S2S_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"S2S_SEED must be an integer, got {raw!r}") from None


def _seed(args):
    return args.seed if args.seed is not None else default_seed()


# --------------------------------------------------------------------------
# prepared-data directory


def load_prepared(data_dir):
    """Return ``(vocab, {"train": [...], "val": [...], "test": [...]})`` of encoded recipes."""
    data_dir = Path(data_dir)
    try:
        records = load_corpus(data_dir / "corpus.jsonl")
        vocab = Vocabulary.from_dict(json.loads((data_dir / "vocab.json").read_text()))
        splits = json.loads((data_dir / "splits.json").read_text())
    except FileNotFoundError as exc:
        raise InputError(f"{data_dir} is not a prepared data directory ({exc.filename} missing)") from None
    encoded = [vocab.encode_record(r) for r in records]
    return vocab, {name: [encoded[i] for i in splits[name]] for name in ("train", "val", "test")}


# --------------------------------------------------------------------------
# config file


def load_config(path, vocab_size, seed):
    """Parse a JSON config with optional ``model`` / ``train`` / ``inference`` sections."""
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
    sections = {"model": ModelConfig, "train": TrainConfig, "inference": InferenceConfig}
    unknown = set(raw) - set(sections)
    if unknown:
        raise InputError(f"unknown config section(s): {sorted(unknown)}")
    out = {}
    for name, cls in sections.items():
        values = dict(raw.get(name, {}))
        allowed = {f.name for f in dataclasses.fields(cls)}
        bad = set(values) - allowed
        if bad:
            raise InputError(f"unknown key(s) in '{name}': {sorted(bad)}")
        if name == "model":
            if "vocab_size" in values and values["vocab_size"] != vocab_size:
                raise InputError(f"config vocab_size {values['vocab_size']} does not match data ({vocab_size})")
            values["vocab_size"] = vocab_size
        if name == "train":
            values.setdefault("seed", seed)
        try:
            out[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid '{name}' config: {exc}") from None
    # one alpha drives both the loss and the recorded model config
    out["model"] = dataclasses.replace(out["model"], alpha=out["train"].alpha)
    return out["model"], out["train"], out["inference"]


# --------------------------------------------------------------------------
# commands


def cmd_prepare(args):
    seed = _seed(args)
    try:
        records = load_corpus(args.input)
    except CorpusFormatError as exc:
        raise InputError(str(exc)) from None
    except OSError as exc:
        raise InputError(f"cannot read {args.input}: {exc}") from None
    filtered = filter_corpus(records)
    try:
        train_r, val_r, test_r = split_corpus(filtered, seed)
    except ValueError as exc:
        raise InputError(f"after filtering: {exc}") from None
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    index = {id(r): i for i, r in enumerate(filtered)}
    write_corpus(filtered, out / "corpus.jsonl")
    vocab = Vocabulary.from_records(filtered)
    (out / "vocab.json").write_text(json.dumps(vocab.to_dict(), sort_keys=True) + "\n")
    splits = {"seed": seed}
    for name, part in (("train", train_r), ("val", val_r), ("test", test_r)):
        splits[name] = [index[id(r)] for r in part]
    (out / "splits.json").write_text(json.dumps(splits) + "\n")
    sizes = Counter(len(r.ingredients) for r in filtered)
    freq = Counter(vocab.counts.values())
    stats = {
        "input_recipes": len(records),
        "recipes": len(filtered),
        "vocab_size": len(vocab) - 1,
        "min_ingredient_count": min(vocab.counts.values()) if vocab.counts else None,
        "recipe_size_histogram": {str(k): sizes[k] for k in sorted(sizes)},
        "ingredient_frequency_histogram": {str(k): freq[k] for k in sorted(freq)},
        "splits": {name: len(splits[name]) for name in ("train", "val", "test")},
        "seed": seed,
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    print(json.dumps({k: stats[k] for k in ("input_recipes", "recipes", "vocab_size", "splits")}))
    return EXIT_OK


def _train_one(model_cfg, train_cfg, splits, pretrained, log_fh, on_epoch=None):
    model = S2SRec2(model_cfg, seed=train_cfg.seed, pretrained=pretrained)

    def write(epoch, m, entry):
        log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
        log_fh.flush()
        if on_epoch:
            on_epoch(epoch, m, entry)

    train(model, splits["train"], train_cfg, val_recipes=splits["val"], on_epoch_end=write)
    return model


def cmd_train(args):
    seed = _seed(args)
    vocab, splits = load_prepared(args.data)
    model_cfg, train_cfg, infer_cfg = load_config(args.config, len(vocab), seed)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    pretrained = None
    if args.embeddings:
        dim = model_cfg.embedding_dim_in
        pretrained = load_pretrained_vectors(args.embeddings, vocab, dim)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    extra = {
        "train_config": dataclasses.asdict(train_cfg),
        "inference_config": dataclasses.asdict(infer_cfg),
    }
    with open(log_path, "w", encoding="utf-8") as log_fh:
        log_fh.write(json.dumps({"config": {"model": model_cfg.to_dict(), **extra}}, sort_keys=True) + "\n")
        if args.alpha_sweep:
            best, rows, models = tune_alpha(
                splits["train"], splits["val"], model_cfg, train_cfg,
                model_factory=lambda cfg: S2SRec2(cfg, seed=train_cfg.seed, pretrained=pretrained),
            )
            sweep_path = out.with_name(out.name + ".alpha_sweep.json")
            sweep_path.write_text(json.dumps({"best_alpha": best, "rows": rows}, indent=2) + "\n")
            log_fh.write(json.dumps({"alpha_sweep": rows, "best_alpha": best}, sort_keys=True) + "\n")
            model = models[best]
            extra["train_config"]["alpha"] = best
        else:
            def periodic(epoch, m, entry):
                every = train_cfg.checkpoint_every
                if every and epoch % every == 0 and epoch < train_cfg.epochs:
                    checkpoint.save(out.with_name(f"{out.name}.epoch{epoch}"), m, vocab, extra)

            model = _train_one(model_cfg, train_cfg, splits, pretrained, log_fh, periodic)
        checkpoint.round_to_storage(model)
        final = {}
        if splits["val"]:
            tasks = build_eval_tasks(splits["val"], seed=train_cfg.seed + 1)
            final = evaluate_system(system_for(model), tasks, EvalConfig())
        log_fh.write(json.dumps({"final_val": final}, sort_keys=True) + "\n")
    checkpoint.save(out, model, vocab, extra)
    print(json.dumps({"checkpoint": str(out), "log": str(log_path), "final_val": final}))
    return EXIT_OK


def _parse_k(text):
    try:
        ks = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise InputError(f"--k must be a comma-separated list of integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise InputError("--k values must be >= 1")
    return ks


def cmd_eval(args):
    seed = _seed(args)
    names = [n.strip() for n in args.systems.split(",") if n.strip()]
    unknown = [n for n in names if n not in SYSTEM_NAMES]
    if unknown:
        raise InputError(f"unknown system(s): {', '.join(unknown)}; valid names: {', '.join(SYSTEM_NAMES)}")
    ks = _parse_k(args.k)
    try:
        model, vocab, doc = checkpoint.load(args.checkpoint)
    except (OSError, checkpoint.CheckpointError, KeyError) as exc:
        raise InputError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    data_vocab, splits = load_prepared(args.data)
    if data_vocab.id_to_name != vocab.id_to_name:
        raise InputError("checkpoint vocabulary does not match the prepared data")
    train_cfg = TrainConfig(**doc.get("train_config", {}))
    infer_cfg = InferenceConfig(**doc.get("inference_config", {}))
    if args.config:
        _, train_cfg, infer_cfg = load_config(args.config, len(vocab), train_cfg.seed)
    tasks = build_eval_tasks(splits["test"], seed=seed)
    if not tasks:
        raise InputError("test split is empty")
    systems = build_systems(names, model.config, splits["train"], splits["val"], train_cfg,
                            s2s_model=model, inference_config=infer_cfg)
    report = evaluate_systems(systems, tasks, EvalConfig(k_values=ks, systems=tuple(names), seeds=(seed,)))
    print(report.to_table())
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(Path(args.checkpoint).name + ".eval.json")
    out.write_text(report.to_json() + "\n")
    return EXIT_OK


def _unknown_ingredient(name, vocab):
    close = difflib.get_close_matches(name.strip().lower(), vocab.id_to_name[1:], n=5, cutoff=0.5)
    hint = f"; nearest matches: {', '.join(close)}" if close else ""
    return InputError(f"unknown ingredient {name!r}{hint}")


def cmd_complete(args):
    try:
        model, vocab, doc = checkpoint.load(args.checkpoint)
    except (OSError, checkpoint.CheckpointError, KeyError) as exc:
        raise InputError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    names = [n for n in (x.strip() for x in args.ingredients.split(",")) if n]
    if not names:
        raise InputError("--ingredients is empty")
    ids = []
    for n in names:
        if n not in vocab:
            raise _unknown_ingredient(n, vocab)
        ids.extend(vocab.encode([n]))
    ids = list(dict.fromkeys(ids))
    if len(ids) > model.config.max_set_size:
        raise InputError(f"at most {model.config.max_set_size} ingredients are supported")
    cfg = InferenceConfig(**doc.get("inference_config", {}))
    cfg = dataclasses.replace(cfg, trace=args.trace, max_rounds=args.max_rounds or cfg.max_rounds)
    res = complete_basket(model, ids, cfg)
    out = {
        "input": vocab.decode(ids),
        "predicted": vocab.decode(res.predicted_ids),
        "round_probs": res.round_probs,
        "rounds_used": res.rounds_used,
        "stop_reason": res.terminated_by,
    }
    if args.trace:
        out["trace"] = [[{"ingredient": vocab.id_to_name[c], "prob": p} for c, p in rnd] for rnd in res.trace]
    print(json.dumps(out, indent=2))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="s2srec2", description="Set-to-set basket completion.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter a JSON-lines corpus and split it")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--embeddings", help="JSON-lines file of pretrained ingredient vectors")
    p.add_argument("--alpha-sweep", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate systems on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--systems", default="s2srec2")
    p.add_argument("--k", default="3,5")
    p.add_argument("--config", help="training config for baselines trained on the fly")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("complete", help="complete one basket")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ingredients", required=True)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--trace", action="store_true")
    p.set_defaults(func=cmd_complete)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "max_rounds", None) is not None and args.max_rounds < 1:
            raise InputError("--max-rounds must be >= 1")
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit code 1
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
