"""Command-line surface: trie building, decoding, benchmarking, toy training.

One JSON configuration file drives every command; defaults equal the
reference constants (k=25, w=20, theta=59, w_ng=0.5, gamma=0.6, d=8) and any
dotted key can be overridden on the command line with --override. Exit codes:
0 success, 2 configuration errors, 3 I/O and file-format errors, 4 training
divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import DecodeConfig, baseline_decode, decode, estimate_speedup
from .errors import ConfigError, TrainingDivergedError, TrieFormatError
from .models import (
    AdversarialDrafter,
    MarkovTarget,
    NoisyOracleDrafter,
    OracleDrafter,
    ToyDraft,
    UniformDrafter,
    sample_markov_target,
)
from .ngram import (
    NgramTrie,
    build_trie,
    load_trie,
    read_text_corpus,
    read_token_corpus,
    save_trie,
    tokenize_bytes,
)
from .tree import PruneConfig
from .training import TrainingLogRecord, evaluate_alpha, train_toy_draft

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


@dataclass
class RunConfig:
    """Mirror of the JSON configuration file."""

    seed: int = 0
    prune: PruneConfig = field(default_factory=PruneConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    target: MarkovTarget | None = None
    training: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)


_TRAINING_DEFAULTS = {
    "gamma": 0.6,
    "d": 8,
    "steps": 500,
    "lr": 0.1,
    "shifted": True,
    "corpus_sequences": 16,
    "sequence_length": 24,
    "heldout_sequences": 50,
}
_TARGET_DEFAULTS = {"seed": 7, "vocab_size": 64, "order": 2, "concentration": 0.2}
_PATH_KEYS = {"trie", "model", "corpus", "train_log"}


def _reject_unknown(section: str, given: dict, allowed: set[str]) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s) in {section}: {sorted(unknown)}")


def load_config(path: str | None, overrides: list[str] | None = None,
                output_paths: set[str] = frozenset()) -> RunConfig:
    """Parse the config file, apply dotted-key overrides, validate strictly.

    Referenced files must exist, except paths named in `output_paths` (files
    the invoking command will create).
    """
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, value = item.split("=", 1)
        keys = dotted.split(".")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        cursor = raw
        for key in keys[:-1]:
            cursor = cursor.setdefault(key, {})
            if not isinstance(cursor, dict):
                raise ConfigError(f"override path {dotted!r} crosses a non-object")
        cursor[keys[-1]] = parsed

    _reject_unknown("config", raw, {"seed", "prune", "decode", "target", "training", "paths"})
    prune_raw = dict(raw.get("prune", {}))
    _reject_unknown("prune", prune_raw,
                    {"k", "w", "theta", "w_ng", "logit_decay", "level_exponent", "epsilon"})
    decode_raw = dict(raw.get("decode", {}))
    _reject_unknown("decode", decode_raw, {"d", "temperature", "max_tokens", "eos_token"})
    target_raw = {**_TARGET_DEFAULTS, **raw.get("target", {})}
    _reject_unknown("target", raw.get("target", {}), set(_TARGET_DEFAULTS))
    training = {**_TRAINING_DEFAULTS, **raw.get("training", {})}
    _reject_unknown("training", raw.get("training", {}), set(_TRAINING_DEFAULTS))
    paths = dict(raw.get("paths", {}))
    _reject_unknown("paths", paths, _PATH_KEYS)

    seed = int(raw.get("seed", 0))
    prune_cfg = PruneConfig(**prune_raw)
    decode_cfg = DecodeConfig(seed=seed, prune=prune_cfg, **decode_raw)
    target = sample_markov_target(
        int(target_raw["seed"]), int(target_raw["vocab_size"]),
        int(target_raw["order"]), float(target_raw["concentration"]),
    )
    for key, p in paths.items():
        if key in output_paths or key == "train_log":
            continue
        if p is not None and not Path(p).exists():
            raise ConfigError(f"paths.{key} does not exist: {p}")
    return RunConfig(seed=seed, prune=prune_cfg, decode=decode_cfg,
                     target=target, training=training, paths=paths)


def _emit(args, records: list[dict], text: str) -> None:
    if getattr(args, "jsonl", False):
        for rec in records:
            print(json.dumps(rec))
    else:
        print(text)


# -- commands -------------------------------------------------------------------


def cmd_build_trie(args) -> int:
    reader = read_text_corpus if args.format == "text" else read_token_corpus
    corpus = reader(args.corpus)
    if not any(len(s) >= args.order for s in corpus):
        print("warning: corpus has no windows of the requested order; "
              "trie will contain only the root", file=sys.stderr)
    vocab = 256 if args.format == "text" else args.vocab_size
    trie = build_trie(corpus, args.order, vocab)
    n_bytes = save_trie(trie, args.out)
    stats = trie.stats()
    _emit(args, [{"node_count": stats.node_count,
                  "distinct_contexts": stats.distinct_contexts,
                  "bytes_on_disk": n_bytes}],
          f"node_count         {stats.node_count}\n"
          f"distinct_contexts  {stats.distinct_contexts}\n"
          f"bytes_on_disk      {n_bytes}")
    return EXIT_OK


def _make_drafter(name: str, cfg: RunConfig, seed: int):
    target = cfg.target
    if name == "oracle":
        return OracleDrafter(target)
    if name == "adversarial":
        return AdversarialDrafter(target)
    if name == "uniform":
        return UniformDrafter(target.vocab_size, seed=seed)
    if name == "noisy-oracle":
        return NoisyOracleDrafter(target, seed=seed)
    if name == "toy":
        model_path = cfg.paths.get("model")
        if model_path is None:
            raise ConfigError("drafter 'toy' needs paths.model in the config")
        model = ToyDraft.load(model_path)
        if model.vocab_size != target.vocab_size:
            raise ConfigError(
                f"model at {model_path} has vocab {model.vocab_size}, "
                f"target has {target.vocab_size}"
            )
        return model
    raise ConfigError(f"unknown drafter {name!r}")


def _parse_prompt(args, cfg: RunConfig) -> list[int]:
    if args.prompt_tokens:
        return [int(t) for t in args.prompt_tokens.replace(",", " ").split()]
    if args.prompt is not None:
        if cfg.target.vocab_size != 256:
            raise ConfigError("text prompts need target.vocab_size = 256 (byte tokens)")
        return tokenize_bytes(args.prompt)
    return [0]


def _load_optional_trie(args, cfg: RunConfig) -> NgramTrie | None:
    if getattr(args, "no_ngram", False):
        return None
    path = cfg.paths.get("trie")
    if path is None:
        print("warning: no trie configured; continuity scores fall back to the "
              "epsilon floor (no-n-gram mode)", file=sys.stderr)
        return None
    return load_trie(path)


def cmd_decode(args) -> int:
    unused = set() if args.drafter == "toy" else {"model"}
    cfg = load_config(args.config, args.override, output_paths=unused)
    prompt = _parse_prompt(args, cfg)
    if args.baseline:
        tokens = baseline_decode(prompt, cfg.target, cfg.decode.max_tokens,
                                 cfg.decode.temperature, seed=cfg.seed,
                                 eos_token=cfg.decode.eos_token)
        _write_transcript(args, cfg, tokens)
        return EXIT_OK
    trie = _load_optional_trie(args, cfg)
    drafter = _make_drafter(args.drafter, cfg, cfg.seed)
    tokens, metrics = decode(prompt, cfg.target, drafter, trie, cfg.decode)
    _write_transcript(args, cfg, tokens)
    if args.jsonl:
        for rec in metrics.to_records():
            print(json.dumps(rec))
        print(json.dumps({"tau": metrics.tau, "cycles": metrics.cycles,
                          "tokens_out": metrics.tokens_out,
                          "modeled_speedup": metrics.modeled_speedup,
                          "draft_ratio": metrics.draft_ratio}))
    else:
        print(metrics.report())
    return EXIT_OK


def _write_transcript(args, cfg: RunConfig, tokens: list[int]) -> None:
    line = " ".join(str(t) for t in tokens)
    if cfg.target.vocab_size == 256:
        rendered = bytes(tokens).decode("utf-8", errors="replace")
        line += f"\n# text: {rendered!r}"
    if args.transcript:
        Path(args.transcript).write_text(line + "\n", encoding="utf-8")
    else:
        print(line)


def cmd_bench_trie(args) -> int:
    trie = load_trie(args.trie)
    if args.queries == 0:
        _emit(args, [], "no queries requested; empty histogram")
        return EXIT_OK
    rng = np.random.default_rng(args.seed)

    # Sample query contexts from the observed context set, plus some misses.
    contexts = []
    stack = [(trie.root, ())]
    while stack:
        node, ctx = stack.pop()
        if len(ctx) == trie.order - 1:
            if node.children:
                contexts.append(ctx)
            continue
        stack.extend((child, ctx + (tok,)) for tok, child in node.children.items())
    if not contexts:
        contexts = [(0,) * (trie.order - 1)]
    picks = rng.integers(0, len(contexts), size=args.queries)
    miss = rng.random(args.queries) < 0.1
    V = max(trie.vocab_size, 1)
    miss_ctx = rng.integers(0, V, size=(args.queries, trie.order - 1))

    def run_queries(lo: int, hi: int) -> list[tuple[float, float]]:
        """Returns (wall-clock time, latency us) per query."""
        out = []
        for i in range(lo, hi):
            ctx = tuple(miss_ctx[i]) if miss[i] else contexts[picks[i]]
            t0 = time.perf_counter_ns()
            trie.children_scores(ctx)
            t1 = time.perf_counter_ns()
            out.append((t1, (t1 - t0) / 1e3))
        return out

    warmup = min(args.queries, 2000)
    run_queries(0, warmup)

    start = time.perf_counter_ns()
    if args.threads > 1:
        bounds = np.linspace(0, args.queries, args.threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            parts = pool.map(lambda b: run_queries(b[0], b[1]), zip(bounds, bounds[1:]))
            results = [r for part in parts for r in part]
    else:
        results = run_queries(0, args.queries)

    lat = np.array([r[1] for r in results])
    wall = np.array([r[0] for r in results])
    interval_ns = args.interval_ms * 1e6
    buckets = ((wall - start) // interval_ns).astype(int)
    records = []
    for b in sorted(set(buckets)):
        sel = lat[buckets == b]
        records.append({"interval": int(b), "queries": int(sel.size),
                        "mean_us": float(sel.mean())})
    summary = {"median_us": float(np.median(lat)), "p90_us": float(np.percentile(lat, 90)),
               "mean_us": float(lat.mean()), "queries": int(lat.size),
               "threads": args.threads}
    lines = [f"{'interval':>8} {'queries':>8} {'mean_us':>8}"]
    lines += [f"{r['interval']:>8} {r['queries']:>8} {r['mean_us']:>8.2f}" for r in records]
    lines.append(f"median {summary['median_us']:.2f} us | p90 {summary['p90_us']:.2f} us "
                 f"| mean {summary['mean_us']:.2f} us over {summary['queries']} queries")
    _emit(args, records + [summary], "\n".join(lines))
    return EXIT_OK


def _training_corpora(cfg: RunConfig):
    tr = cfg.training
    rng = np.random.default_rng(cfg.seed)
    corpus = [cfg.target.sample_sequence(rng, int(tr["sequence_length"]))
              for _ in range(int(tr["corpus_sequences"]))]
    heldout = [cfg.target.sample_sequence(rng, int(tr["sequence_length"]))
               for _ in range(int(tr["heldout_sequences"]))]
    return corpus, heldout


def cmd_train_toy(args) -> int:
    cfg = load_config(args.config, args.override, output_paths={"model"})
    tr = cfg.training
    model_path = cfg.paths.get("model", "toy_draft.npz")
    log_path = cfg.paths.get("train_log") or args.log or f"{model_path}.log.jsonl"
    corpus, heldout = _training_corpora(cfg)
    log: list[TrainingLogRecord] = []
    model = train_toy_draft(
        cfg.target, corpus, float(tr["gamma"]), int(tr["d"]), int(tr["steps"]),
        float(tr["lr"]), cfg.seed, shifted=bool(tr["shifted"]),
        eval_sequences=heldout, eval_every=args.eval_every, log=log,
    )
    model.save(model_path)
    with open(log_path, "w", encoding="utf-8") as f:
        for rec in log:
            f.write(json.dumps(rec.to_dict()) + "\n")
    print(f"model written to {model_path}; {len(log)} log records in {log_path}")
    if log:
        print(f"final loss {log[-1].loss:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    unused = set() if args.drafter == "toy" else {"model"}
    cfg = load_config(args.config, args.override, output_paths=unused)
    tr = cfg.training
    d = int(tr["d"])
    _, heldout = _training_corpora(cfg)
    drafter = _make_drafter(args.drafter, cfg, cfg.seed)
    alpha = evaluate_alpha(drafter, cfg.target, heldout, d,
                           vs_greedy=args.alpha_vs == "greedy")

    trie = load_trie(cfg.paths["trie"]) if cfg.paths.get("trie") else None
    taus = []
    for i, seq in enumerate(heldout[: args.tau_prompts]):
        run = DecodeConfig(d=d, temperature=cfg.decode.temperature,
                           max_tokens=48, seed=cfg.seed + i, prune=cfg.prune)
        _, metrics = decode(seq[:4], cfg.target, drafter, trie, run, measure_base=False)
        taus.append(metrics.tau)
    tau = float(np.mean(taus)) if taus else float("nan")

    header = " ".join(f"{'a-' + str(t+1):>7}" for t in range(d)) + f" {'tau':>6}"
    row = " ".join(f"{100 * a:>6.1f}%" for a in alpha) + f" {tau:>6.2f}"
    _emit(args, [{"alpha": alpha, "tau": tau, "drafter": args.drafter}],
          header + "\n" + row)
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.log, "r", encoding="utf-8") as f:
        records = [json.loads(line) for line in f if line.strip()]
    if not records:
        print("empty training log")
        return EXIT_OK
    print(f"{'step':>6} {'loss':>12}  alpha")
    for rec in records:
        if args.every and rec["step"] % args.every:
            continue
        alpha = rec.get("alpha")
        alpha_s = " ".join(f"{100 * a:.1f}%" for a in alpha) if alpha else "-"
        print(f"{rec['step']:>6} {rec['loss']:>12.6f}  {alpha_s}")
    return EXIT_OK


def cmd_estimate_speedup(args) -> int:
    speedup, ratio = estimate_speedup(args.tau, args.t_verify, args.t_draft,
                                      args.t_prune, args.t_base)
    _emit(args, [{"speedup": speedup, "draft_ratio": ratio}],
          f"speedup      {speedup:.4f}\ndraft_ratio  {ratio:.4f}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specdraft",
        description="Speculative decoding with parallel drafting and "
                    "n-gram-guided draft-tree pruning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--jsonl", action="store_true",
                       help="machine-readable line-delimited JSON output")

    p = sub.add_parser("build-trie", help="count n-gram windows into a trie file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["tokens", "text"], default="tokens",
                   help="tokens: integer ids per line; text: byte-level")
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--jsonl", action="store_true")
    p.set_defaults(func=cmd_build_trie)

    p = sub.add_parser("decode", help="run the draft-prune-verify loop")
    add_common(p)
    p.add_argument("--drafter", default="oracle",
                   choices=["oracle", "uniform", "adversarial", "noisy-oracle", "toy"])
    p.add_argument("--prompt", default=None, help="text prompt (byte tokenizer, V=256)")
    p.add_argument("--prompt-tokens", default=None, help="integer token ids")
    p.add_argument("--no-ngram", action="store_true",
                   help="epsilon-floor continuity scores (ablation mode)")
    p.add_argument("--baseline", action="store_true",
                   help="pure autoregressive decoding instead")
    p.add_argument("--transcript", default=None, help="write tokens to this file")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("bench-trie", help="trie query latency benchmark")
    p.add_argument("--trie", required=True)
    p.add_argument("--queries", type=int, default=100000)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--interval-ms", type=float, default=200.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jsonl", action="store_true")
    p.set_defaults(func=cmd_bench_trie)

    p = sub.add_parser("train-toy", help="train the toy drafter")
    add_common(p)
    p.add_argument("--log", default=None, help="training log path (JSONL)")
    p.add_argument("--eval-every", type=int, default=100)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", help="held-out per-position accuracy and tau")
    add_common(p)
    p.add_argument("--drafter", default="toy",
                   choices=["oracle", "uniform", "adversarial", "noisy-oracle", "toy"])
    p.add_argument("--alpha-vs", choices=["data", "greedy"], default="data",
                   help="score argmax hits against held-out tokens or the "
                        "target's greedy continuation")
    p.add_argument("--tau-prompts", type=int, default=8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="pretty-print a training log")
    p.add_argument("--log", required=True)
    p.add_argument("--every", type=int, default=0, help="print every Nth step only")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("estimate-speedup", help="analytical cycle-latency model")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--t-verify", type=float, required=True)
    p.add_argument("--t-draft", type=float, required=True)
    p.add_argument("--t-prune", type=float, required=True)
    p.add_argument("--t-base", type=float, required=True)
    p.add_argument("--jsonl", action="store_true")
    p.set_defaults(func=cmd_estimate_speedup)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, TrieFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
