"""Command-line entry point binding the whole pipeline.

Commands: tokenizer, gen-toy, pretrain, sweep, eval, analyze. Configuration
is JSON with precedence defaults < file < --set overrides; all randomness
derives from one top-level seed. BABYLAB_OUT provides the default output
root when --out is omitted.
"""

from __future__ import annotations

import argparse
import difflib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import analysis, corpus, evaluator, tokenizer, trainer
from .model import ModelConfig, PRESETS, load_checkpoint, save_checkpoint
from .util import atomic_write_json, file_sha256, read_json

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "corpus": None,
    "suite": None,
    "vocab": None,
    "model": {
        "preset": "xs",
        "max_context": 128,
        "hidden_size": None,
        "intermediate_size": None,
        "num_heads": None,
        "num_layers": None,
    },
    "train": {
        "epochs": 1,
        "num_patterns": 1,
        "batch_size": 32,
        "learning_rate": trainer.DEFAULT_LEARNING_RATE,
        "mask_prob": 0.15,
        "grad_clip": None,
    },
    "sweep": {
        "epochs": list(trainer.GRID_EPOCHS),
        "num_patterns": list(trainer.GRID_NUM_PATTERNS),
        "batch_sizes": list(trainer.GRID_BATCH_SIZES),
        "budget": trainer.DEFAULT_BUDGET,
    },
    "tokenizer": {"vocab_size": 8192},
}


class CliError(Exception):
    pass


def _flatten_keys(d: dict, prefix: str = "") -> list[str]:
    keys = []
    for k, v in d.items():
        dotted = f"{prefix}{k}"
        keys.append(dotted)
        if isinstance(v, dict):
            keys.extend(_flatten_keys(v, dotted + "."))
    return keys


_VALID_KEYS = _flatten_keys(DEFAULT_CONFIG)


def _unknown_key_error(dotted: str) -> CliError:
    near = difflib.get_close_matches(dotted, _VALID_KEYS, n=1)
    hint = f"; did you mean {near[0]!r}?" if near else ""
    return CliError(f"unknown config key {dotted!r}{hint}")


def _merge_config(base: dict, overlay: dict, prefix: str = "") -> None:
    for k, v in overlay.items():
        dotted = f"{prefix}{k}"
        if k not in base:
            raise _unknown_key_error(dotted)
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge_config(base[k], v, dotted + ".")
        else:
            base[k] = v


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise CliError(f"override {assignment!r} is not of the form key=value")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = dotted.split(".")
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise _unknown_key_error(".".join(parts[: i + 1]))
        node = node[part]
    if parts[-1] not in node:
        raise _unknown_key_error(dotted)
    node[parts[-1]] = value


def load_config(config_path: str | None, overrides: list[str]) -> dict:
    """Defaults < config file < --set overrides."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if config_path:
        try:
            file_cfg = read_json(config_path)
        except FileNotFoundError:
            raise CliError(f"config file not found: {config_path}") from None
        if not isinstance(file_cfg, dict):
            raise CliError(f"config file {config_path} must hold a JSON object")
        _merge_config(cfg, file_cfg)
    for assignment in overrides:
        _apply_override(cfg, assignment)
    return cfg


def _out_dir(args: argparse.Namespace, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = os.environ.get("BABYLAB_OUT")
        if not root:
            raise CliError("no --out given and BABYLAB_OUT is not set")
        out = Path(root) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg: dict, key: str) -> str:
    if not cfg.get(key):
        raise CliError(f"config key {key!r} is required for this command")
    path = cfg[key]
    if not Path(path).exists():
        raise CliError(f"{key} file not found: {path}")
    return path


def _model_config(cfg: dict, vocab_size: int) -> ModelConfig:
    m = cfg["model"]
    preset = m["preset"]
    dims = (m["hidden_size"], m["intermediate_size"], m["num_heads"], m["num_layers"])
    if preset == "custom":
        if any(d is None for d in dims):
            raise CliError("model.preset=custom requires all four model dimensions")
        return ModelConfig(*dims, vocab_size, m["max_context"], preset_name="custom")
    if preset not in PRESETS:
        raise CliError(f"unknown model preset {preset!r}; choose from {sorted(PRESETS)} or custom")
    if any(d is not None for d in dims):
        raise CliError("explicit model dimensions require model.preset=custom")
    return ModelConfig.from_preset(preset, vocab_size, m["max_context"])


def _seed(args: argparse.Namespace, cfg: dict) -> int:
    return args.seed if args.seed is not None else cfg["seed"]


def cmd_tokenizer(args: argparse.Namespace) -> int:
    out = _out_dir(args, "tokenizer")
    if not Path(args.corpus).exists():
        raise CliError(f"corpus file not found: {args.corpus}")
    with open(args.corpus, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    vocab = tokenizer.train_bpe(lines, args.vocab_size)
    vocab_path = out / "vocab.json"
    tokenizer.save_vocab(vocab, vocab_path)
    print(f"trained vocabulary of {vocab.size} tokens -> {vocab_path}")
    return 0


def cmd_gen_toy(args: argparse.Namespace) -> int:
    out = _out_dir(args, "gen-toy")
    corpus_path = out / "corpus.txt"
    suite_path = out / "suite.jsonl"
    corpus.generate_toy_grammar(
        args.num_sentences, args.seed if args.seed is not None else 0,
        corpus_path, suite_path, num_pairs=args.num_pairs,
    )
    print(f"wrote {args.num_sentences} sentences -> {corpus_path}, {args.num_pairs} pairs -> {suite_path}")
    return 0


def _load_inputs(cfg: dict):
    vocab = tokenizer.load_vocab(_require(cfg, "vocab"))
    sentences, stats = corpus.load_corpus(
        _require(cfg, "corpus"), vocab, cfg["model"]["max_context"]
    )
    suite = evaluator.load_suite(_require(cfg, "suite"))
    return vocab, sentences, stats, suite


def _hyperparams(cfg: dict, seed: int, preset_name: str) -> trainer.Hyperparams:
    t = cfg["train"]
    return trainer.Hyperparams(
        epochs=t["epochs"],
        num_patterns=t["num_patterns"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        seed=seed,
        preset_name=preset_name,
    )


def cmd_pretrain(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    out = _out_dir(args, "pretrain")
    seed = _seed(args, cfg)
    vocab, sentences, stats, suite = _load_inputs(cfg)
    mcfg = _model_config(cfg, vocab.size)
    hp = _hyperparams(cfg, seed, mcfg.preset_name)
    started = time.monotonic()
    params, curve = trainer.pretrain(
        mcfg, hp, sentences, vocab,
        mask_prob=cfg["train"]["mask_prob"], grad_clip=cfg["train"]["grad_clip"],
    )
    ckpt = out / "model.ckpt"
    save_checkpoint(params, ckpt, seed=seed, step=len(curve))
    scores, overall = evaluator.evaluate_suite(params, vocab, suite)
    record = trainer.RunRecord(
        hyperparams=hp,
        loss_curve=trainer._persisted_curve(curve),
        eval={s.task: s.accuracy for s in scores},
        overall=overall,
        wall_time=time.monotonic() - started,
        checkpoint="model.ckpt",
    )
    atomic_write_json(out / "record.json", record.to_json_dict())
    print(
        f"pretrained {mcfg.preset_name} on {stats.num_sentences} sentences, "
        f"{len(curve)} steps, final loss {curve[-1]:.4f}, overall {overall:.4f}"
    )
    return 0


def _grid_from_config(cfg: dict, seed: int, preset_name: str) -> list[trainer.Hyperparams]:
    s = cfg["sweep"]
    return trainer.sorted_grid(
        trainer.Hyperparams(
            epochs=e, num_patterns=p, batch_size=b,
            learning_rate=cfg["train"]["learning_rate"], seed=seed, preset_name=preset_name,
        )
        for e in s["epochs"]
        for p in s["num_patterns"]
        for b in s["batch_sizes"]
    )


def _sweep_worker(payload: dict) -> str:
    """Run one sweep point in a separate process; records land in sweep_dir."""
    cfg = payload["cfg"]
    vocab = tokenizer.load_vocab(cfg["vocab"])
    sentences, _ = corpus.load_corpus(cfg["corpus"], vocab, cfg["model"]["max_context"])
    suite = evaluator.load_suite(cfg["suite"])
    mcfg = ModelConfig.from_dict(payload["model_config"])
    hp = trainer.Hyperparams(**payload["hyperparams"])
    record = trainer.execute_run(
        mcfg, hp, sentences, vocab, suite, Path(payload["sweep_dir"]),
        mask_prob=cfg["train"]["mask_prob"],
    )
    return record.run_hash


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    out = _out_dir(args, "sweep")
    seed = _seed(args, cfg)
    budget = args.budget if args.budget is not None else cfg["sweep"]["budget"]
    vocab, sentences, _, suite = _load_inputs(cfg)
    mcfg = _model_config(cfg, vocab.size)
    grid = _grid_from_config(cfg, seed, mcfg.preset_name)
    jobs = args.jobs or 1
    if jobs > 1:
        points = trainer.sorted_grid(grid)[: max(0, budget)]
        pending = [
            hp for hp in points
            if not (out / f"{trainer.hyperparams_hash(hp)}.json").exists()
        ]
        payloads = [
            {
                "cfg": cfg,
                "model_config": mcfg.to_dict(),
                "hyperparams": asdict(hp),
                "sweep_dir": str(out),
            }
            for hp in pending
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_sweep_worker, payloads))
    records = trainer.run_sweep(mcfg, grid, budget, sentences, vocab, suite, out,
                                mask_prob=cfg["train"]["mask_prob"])
    best = trainer.select_best(records)
    print(
        f"sweep complete: {len(records)} runs in {out}; best {best.run_hash} "
        f"(epochs={best.hyperparams.epochs}, patterns={best.hyperparams.num_patterns}, "
        f"batch={best.hyperparams.batch_size}) overall {best.overall:.4f}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    out = _out_dir(args, "eval")
    for name, path in (("checkpoint", args.checkpoint), ("suite", args.suite), ("vocab", args.vocab)):
        if not Path(path).exists():
            raise CliError(f"{name} file not found: {path}")
    params, _ = load_checkpoint(args.checkpoint)
    vocab = tokenizer.load_vocab(args.vocab)
    if vocab.size != params.config.vocab_size:
        raise CliError(
            f"vocabulary size {vocab.size} does not match checkpoint vocab_size "
            f"{params.config.vocab_size}"
        )
    suite = evaluator.load_suite(args.suite)
    scores, overall = evaluator.evaluate_suite(params, vocab, suite)
    report = out / "report.json"
    evaluator.write_report(
        report, scores, overall,
        checkpoint_hash=file_sha256(args.checkpoint), suite_hash=file_sha256(args.suite),
    )
    print(f"overall {overall:.4f} over {len(scores)} tasks -> {report}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    out = _out_dir(args, "analyze")
    if not Path(args.sweep_dir).is_dir():
        raise CliError(f"sweep directory not found: {args.sweep_dir}")
    records = trainer.load_records(args.sweep_dir)
    if not records:
        raise CliError(f"no run records found in {args.sweep_dir}")
    paths = analysis.emit_report(records, out)
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="babylab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config: bool = True) -> None:
        p.add_argument("--out", help="output directory (default: $BABYLAB_OUT/<command>)")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        if config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a config key (dotted path)")

    p = sub.add_parser("tokenizer", help="train a BPE vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-size", type=int, default=DEFAULT_CONFIG["tokenizer"]["vocab_size"])
    common(p, config=False)
    p.set_defaults(func=cmd_tokenizer)

    p = sub.add_parser("gen-toy", help="generate the toy corpus and suite")
    p.add_argument("--num-sentences", type=int, required=True)
    p.add_argument("--num-pairs", type=int, default=1000)
    common(p, config=False)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("pretrain", help="pretrain one model and evaluate it")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("sweep", help="run the hyperparameter grid")
    common(p)
    p.add_argument("--budget", type=int, help="maximum number of runs")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="score a checkpoint on a minimal-pair suite")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--vocab", required=True)
    common(p, config=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="emit report files for a sweep directory")
    p.add_argument("--sweep-dir", required=True)
    common(p, config=False)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
