"""Draft-verify decode loop with lossless tree verification.

Each cycle runs three stages: one drafting forward producing parallel logits,
tree pruning, and tree verification against the target model. Verification
walks the tree from the root; at every node the offered children are tested
one after another by rejection against the running residual of the target
conditional (each rejected sibling's mass is removed and the residual
renormalized), and when all siblings are rejected the bonus token is sampled
from what remains. Because each sibling's acceptance probability equals
exactly its residual target mass, the joint law of (accepted path, bonus
token) is identical to ancestral sampling from the target -- for any draft
tree whatsoever. At temperature 0 this degenerates to following the argmax
child and emitting the argmax as bonus.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigError
from .ngram import NgramTrie
from .tree import (
    ROOT_ID,
    DraftTree,
    LinearizedTree,
    ParallelLogits,
    PruneConfig,
    linearize,
    prune,
)


class TargetModel(Protocol):
    vocab_size: int

    def next_dist(self, prefix, temperature: float = 1.0) -> np.ndarray: ...

    def features(self, prefix): ...


class DraftPredictor(Protocol):
    def predict(self, prefix, feats, d: int, *, temperature: float = 0.0,
                rng: np.random.Generator | None = None) -> ParallelLogits: ...


@dataclass(frozen=True)
class DecodeConfig:
    d: int = 8
    temperature: float = 0.0
    max_tokens: int = 128
    seed: int = 0
    prune: PruneConfig = field(default_factory=PruneConfig)
    eos_token: int | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"draft length must be >= 1, got {self.d}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")


@dataclass
class CycleRecord:
    cycle: int
    accepted: int  # accepted draft tokens (bonus not counted)
    emitted: int   # tokens appended to the output this cycle
    draft_ms: float
    prune_ms: float
    verify_ms: float

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "accepted": self.accepted,
            "emitted": self.emitted,
            "draft_ms": self.draft_ms,
            "prune_ms": self.prune_ms,
            "verify_ms": self.verify_ms,
        }


@dataclass
class DecodeMetrics:
    cycles: int
    tokens_out: int
    tau: float
    draft_ms: float   # per-stage medians, first cycle excluded once there is more than one
    prune_ms: float
    verify_ms: float
    base_ms: float | None
    modeled_speedup: float | None
    draft_ratio: float | None
    records: list[CycleRecord] = field(default_factory=list)

    def report(self) -> str:
        lines = [
            f"cycles           {self.cycles}",
            f"tokens_out       {self.tokens_out}",
            f"tau              {self.tau:.4f}",
            f"draft_ms (med)   {self.draft_ms:.4f}",
            f"prune_ms (med)   {self.prune_ms:.4f}",
            f"verify_ms (med)  {self.verify_ms:.4f}",
        ]
        if self.base_ms is not None:
            lines.append(f"base_ms (med)    {self.base_ms:.4f}")
        if self.modeled_speedup is not None:
            lines.append(f"modeled_speedup  {self.modeled_speedup:.3f}")
            lines.append(f"draft_ratio      {self.draft_ratio:.3f}")
        return "\n".join(lines)

    def to_records(self) -> list[dict]:
        return [r.to_dict() for r in self.records]


def verify(
    tree: DraftTree,
    lin: LinearizedTree,
    prefix: Sequence[int],
    target: TargetModel,
    temperature: float,
    rng: np.random.Generator | None,
) -> tuple[list[int], int]:
    """Walk the draft tree against the target; returns (accepted path, bonus).

    The target conditional is computed once for the root and once per tree
    node (the stand-in for one batched tree-attention forward). At
    temperature 0 the walk follows the unique argmax child. Above zero, the
    children of the current node are tried in tree order: each is accepted
    with probability equal to its mass under the residual target conditional,
    and on rejection that mass is removed and the residual renormalized. The
    bonus token comes from the final residual, so the output distribution is
    exactly the target's regardless of the drafter.
    """
    if not tree.nodes:
        raise ConfigError("cannot verify an empty tree")
    prefix = list(prefix)

    # One conditional per node plus the root. Each node's context is read off
    # the linearization: the prefix plus every tree position its attention-mask
    # row admits (its ancestors and itself, in order) -- the same view a
    # batched tree-attention forward would give the target.
    dists: dict[int, np.ndarray] = {ROOT_ID: target.next_dist(prefix, temperature)}
    children: dict[int, list] = {ROOT_ID: []}
    for idx, node in enumerate(tree.nodes):
        visible = np.flatnonzero(lin.attention_mask[idx])
        context = prefix + [lin.tokens[j] for j in visible]
        dists[node.id] = target.next_dist(context, temperature)
        children.setdefault(node.id, [])
        children[node.parent_id].append(node)

    accepted: list[int] = []
    current = ROOT_ID
    while True:
        dist = dists[current]
        offered = children[current]
        if temperature == 0:
            best = int(np.argmax(dist))
            match = next((c for c in offered if c.token == best), None)
            if match is None:
                return accepted, best
            accepted.append(match.token)
            current = match.id
            continue

        residual = dist.astype(np.float64).copy()
        total = float(residual.sum())
        chosen = None
        for child in offered:
            mass = float(residual[child.token])
            if total <= 0.0:
                break
            if rng.random() < mass / total:
                chosen = child
                break
            residual[child.token] = 0.0
            total -= mass
        if chosen is None:
            if total <= 0.0:
                # All target mass sat on the offered children (fp corner);
                # fall back to the highest-mass child to stay well-defined.
                fallback = max(offered, key=lambda c: float(dist[c.token]))
                accepted.append(fallback.token)
                current = fallback.id
                continue
            cum = np.cumsum(residual)
            bonus = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            return accepted, bonus
        accepted.append(chosen.token)
        current = chosen.id


def baseline_decode(
    prompt: Sequence[int],
    target: TargetModel,
    max_tokens: int,
    temperature: float = 0.0,
    seed: int = 0,
    eos_token: int | None = None,
) -> list[int]:
    """Plain autoregressive decoding (the reference for losslessness checks)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    prefix = list(prompt)
    out: list[int] = []
    while len(out) < max_tokens:
        dist = target.next_dist(prefix, temperature)
        if temperature == 0:
            tok = int(np.argmax(dist))
        else:
            cum = np.cumsum(dist)
            tok = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        out.append(tok)
        prefix.append(tok)
        if eos_token is not None and tok == eos_token:
            break
    return out


def _median(values: list[float]) -> float:
    return statistics.median(values) if values else 0.0


def decode(
    prompt: Sequence[int],
    target: TargetModel,
    drafter: DraftPredictor,
    trie: NgramTrie | None,
    cfg: DecodeConfig,
    measure_base: bool = True,
) -> tuple[list[int], DecodeMetrics]:
    """Run draft -> prune -> verify cycles until max_tokens or the end token.

    A missing trie scores every continuation at the epsilon floor (the
    no-n-gram ablation mode). Per-stage wall-clock latencies are recorded per
    cycle; medians exclude the first (warmup) cycle when more than one ran.
    """
    if len(prompt) == 0:
        raise ConfigError("prompt must be nonempty")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    prefix = list(int(t) for t in prompt)
    out: list[int] = []
    records: list[CycleRecord] = []
    stop = False

    while not stop and len(out) < cfg.max_tokens:
        t0 = time.perf_counter_ns()
        feats = target.features(prefix)
        logits = drafter.predict(prefix, feats, cfg.d,
                                 temperature=cfg.temperature, rng=rng)
        t1 = time.perf_counter_ns()
        tree = prune(logits, trie, cfg.prune, prefix)
        lin = linearize(tree, len(prefix))
        t2 = time.perf_counter_ns()
        accepted, bonus = verify(tree, lin, prefix, target, cfg.temperature, rng)
        t3 = time.perf_counter_ns()

        emitted = accepted + [bonus]
        if cfg.eos_token is not None and cfg.eos_token in emitted:
            emitted = emitted[: emitted.index(cfg.eos_token) + 1]
            stop = True
        room = cfg.max_tokens - len(out)
        if len(emitted) >= room:
            emitted = emitted[:room]
            stop = True
        out.extend(emitted)
        prefix.extend(emitted)
        records.append(CycleRecord(
            cycle=len(records),
            accepted=len(emitted) - 1,
            emitted=len(emitted),
            draft_ms=(t1 - t0) / 1e6,
            prune_ms=(t2 - t1) / 1e6,
            verify_ms=(t3 - t2) / 1e6,
        ))

    steady = records[1:] if len(records) > 1 else records
    draft_ms = _median([r.draft_ms for r in steady])
    prune_ms = _median([r.prune_ms for r in steady])
    verify_ms = _median([r.verify_ms for r in steady])

    base_ms = None
    modeled_speedup = None
    draft_ratio = None
    if measure_base:
        for _ in range(2):  # warm the target's lazy caches
            target.next_dist(prefix, cfg.temperature)
        samples = []
        for _ in range(5):
            b0 = time.perf_counter_ns()
            target.next_dist(prefix, cfg.temperature)
            samples.append((time.perf_counter_ns() - b0) / 1e6)
        base_ms = _median(samples)
        tau = len(out) / len(records)
        if verify_ms > 0 and base_ms > 0:
            modeled_speedup, draft_ratio = estimate_speedup(
                max(tau, 1.0), verify_ms, draft_ms, prune_ms, base_ms
            )

    metrics = DecodeMetrics(
        cycles=len(records),
        tokens_out=len(out),
        tau=len(out) / len(records),
        draft_ms=draft_ms,
        prune_ms=prune_ms,
        verify_ms=verify_ms,
        base_ms=base_ms,
        modeled_speedup=modeled_speedup,
        draft_ratio=draft_ratio,
        records=records,
    )
    return out, metrics


def estimate_speedup(
    tau: float,
    t_verify: float,
    t_draft: float,
    t_prune: float,
    t_base: float,
) -> tuple[float, float]:
    """Analytical cycle model: how much faster than autoregressive decoding.

    speedup = tau * t_base / (t_verify + t_draft + t_prune);
    draft_ratio = (t_draft + t_prune) / (t_verify + t_draft + t_prune).
    Verification and baseline times must be positive; drafting and pruning
    may be zero (free drafting) but not negative.
    """
    if tau < 1:
        raise ConfigError(f"tau must be >= 1, got {tau}")
    if t_verify <= 0 or t_base <= 0:
        raise ConfigError("t_verify and t_base must be > 0")
    if t_draft < 0 or t_prune < 0:
        raise ConfigError("t_draft and t_prune must be >= 0")
    cycle = t_verify + t_draft + t_prune
    return tau * t_base / cycle, (t_draft + t_prune) / cycle


def exactness_check(
    target: TargetModel,
    drafter: DraftPredictor,
    trie: NgramTrie | None,
    cfg: DecodeConfig,
    n_samples: int,
    prompt: Sequence[int] = (0,),
    horizon: int = 3,
) -> float:
    """Total-variation distance between decode outputs and exact ancestral
    sampling over all length-`horizon` continuations.

    Requires temperature > 0 and a vocabulary small enough to enumerate.
    n_samples <= 0 returns the sentinel TV of 1.0 (nothing was measured).
    """
    if cfg.temperature <= 0:
        raise ConfigError("exactness check requires temperature > 0")
    if n_samples <= 0:
        return 1.0
    V = target.vocab_size
    prompt = list(prompt)

    exact: dict[tuple[int, ...], float] = {}

    def enumerate_seqs(prefix: list[int], prob: float, depth: int):
        if depth == horizon:
            exact[tuple(prefix[len(prompt):])] = prob
            return
        dist = target.next_dist(prefix, cfg.temperature)
        for tok in range(V):
            p = float(dist[tok])
            if p > 0:
                enumerate_seqs(prefix + [tok], prob * p, depth + 1)

    enumerate_seqs(prompt, 1.0, 0)

    counts: dict[tuple[int, ...], int] = {}
    seeds = np.random.SeedSequence(cfg.seed).generate_state(n_samples, dtype=np.uint64)
    run_cfg = replace(cfg, max_tokens=horizon)
    for i in range(n_samples):
        sample_cfg = replace(run_cfg, seed=int(seeds[i]))
        tokens, _ = decode(prompt, target, drafter, trie, sample_cfg, measure_base=False)
        key = tuple(tokens[:horizon])
        counts[key] = counts.get(key, 0) + 1

    tv = 0.0
    for key in exact.keys() | counts.keys():
        tv += abs(counts.get(key, 0) / n_samples - exact.get(key, 0.0))
    return 0.5 * tv
