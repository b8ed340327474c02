"""Prefix-shared masked training of the toy drafter.

A training sequence of length L is packed as [prompt block | one mask block
per prompt position]: the prompt attends causally to itself, each mask block
sees only its own prompt prefix and itself (causally), and different blocks
never see each other. Every supervised prompt position therefore contributes
d future-position predictions to a single forward pass.

The objective is a position-annealed KL divergence against the target model's
exact conditionals, weighted gamma^(t-1) for the t-th future position. All
arithmetic is float64 and gradients are written by hand, so they can be
validated against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingDivergedError
from .models import MarkovTarget, ToyDraft
from .ngram import EPSILON

LOG_FLOOR = float(np.log(EPSILON))


@dataclass(frozen=True)
class AnnealedKLConfig:
    gamma: float = 0.6
    d: int = 8

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")

    @property
    def weights(self) -> np.ndarray:
        return self.gamma ** np.arange(self.d, dtype=np.float64)


def build_training_mask(prompt_len: int, block_len: int,
                        valid_len: int | None = None) -> np.ndarray:
    """Boolean attention mask over the packed layout of P*(block_len+1) slots.

    OR of three predicates: causal attention inside the prompt, each mask
    block viewing prompt positions up to its own group index, and causal
    attention inside a block. Prompt positions and block groups at or beyond
    valid_len are masked out entirely.
    """
    P, m = prompt_len, block_len
    if P < 1 or m < 1:
        raise ConfigError(f"prompt_len and block_len must be >= 1, got {P}, {m}")
    if valid_len is None:
        valid_len = P
    if not 0 <= valid_len <= P:
        raise ConfigError(f"valid_len must be in [0, {P}], got {valid_len}")
    M = P * (m + 1)
    q = np.arange(M)[:, None]
    kv = np.arange(M)[None, :]
    q_group = (q - P) // m
    kv_group = (kv - P) // m

    prompt_causal = (q < P) & (kv < P) & (q >= kv) & (q < valid_len) & (kv < valid_len)
    draft_view_prompt = (q >= P) & (kv < P) & (q_group < valid_len) & (kv <= q_group)
    draft_internal = ((q >= P) & (kv >= P) & (q_group == kv_group)
                      & (q >= kv) & (q_group < valid_len))
    return prompt_causal | draft_view_prompt | draft_internal


def build_position_ids(prompt_len: int, block_len: int) -> np.ndarray:
    """Prompt positions 0..P-1; the block for prompt position g continues it
    with g+1 .. g+block_len."""
    P, m = prompt_len, block_len
    if P < 1 or m < 1:
        raise ConfigError(f"prompt_len and block_len must be >= 1, got {P}, {m}")
    blocks = [np.arange(g + 1, g + m + 1) for g in range(P)]
    return np.concatenate([np.arange(P)] + blocks)


def _safe_q_log_q(q: np.ndarray) -> np.ndarray:
    return np.where(q > 0, q * np.log(np.maximum(q, 1e-300)), 0.0)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def annealed_kl_loss(draft_logits: np.ndarray, target_dists: np.ndarray,
                     gamma: float) -> tuple[float, np.ndarray, bool]:
    """Sum_t gamma^(t-1) KL(q_t || softmax(logits_t)) with exact logit grads.

    Returns (loss, d loss / d logits, floored) where `floored` flags any
    coordinate whose log-probability was clamped at the epsilon floor while
    carrying target mass. The gradient is exact for the clamped objective:
    clamped coordinates stop contributing their -q_v log p_v term.
    """
    draft_logits = np.asarray(draft_logits, dtype=np.float64)
    q = np.asarray(target_dists, dtype=np.float64)
    if draft_logits.shape != q.shape or draft_logits.ndim != 2:
        raise ConfigError(
            f"logits and target dists must share a (d, V) shape, got "
            f"{draft_logits.shape} vs {q.shape}"
        )
    cfg = AnnealedKLConfig(gamma=gamma, d=draft_logits.shape[0])
    lam = cfg.weights
    logp = _log_softmax(draft_logits)
    unfloored = logp >= LOG_FLOOR
    floored = bool(np.any(~unfloored & (q > 0)))
    logp_eff = np.maximum(logp, LOG_FLOOR)
    kl = (_safe_q_log_q(q) - q * logp_eff).sum(axis=-1)
    loss = float((lam * kl).sum())

    p = np.exp(logp)
    q_mass = (q * unfloored).sum(axis=-1, keepdims=True)
    grad = lam[:, None] * (q_mass * p - q * unfloored)
    return loss, grad, floored


@dataclass
class TrainingBatch:
    """One packed, fully materialized training batch (fixed-length sequences)."""

    feats: np.ndarray          # (B, P, 3*FEAT_WIDTH)
    emb_tokens: np.ndarray     # (B, P)
    mask: np.ndarray           # (M, M) bool
    position_ids: np.ndarray   # (M,)
    n_prefix: int
    slot_positions: np.ndarray  # (S,) packed positions carrying supervision
    slot_weights: np.ndarray    # (S,) annealing weight of each slot
    labels: np.ndarray          # (B, S, V) exact target conditionals
    norm: float                 # slots are averaged per (sequence, group)


def build_training_batch(target: MarkovTarget, sequences: list[list[int]],
                         d: int, gamma: float, shifted: bool = True) -> TrainingBatch:
    """Pack equal-length sequences into the prefix-shared layout.

    Shifted mode uses mask blocks of length d-1 (the first future position is
    read from the prompt position itself); unshifted uses blocks of length d
    read entirely from mask positions. Group g is supervised when all d
    future tokens fall inside the sequence.
    """
    if not sequences:
        raise ConfigError("need at least one training sequence")
    L = len(sequences[0])
    if any(len(s) != L for s in sequences):
        raise ConfigError("training sequences must share one length")
    if L <= d:
        raise ConfigError(f"sequences of length {L} cannot supervise d={d} futures")
    cfg = AnnealedKLConfig(gamma=gamma, d=d)
    m = d - 1 if shifted else d
    if m < 1:
        raise ConfigError("shifted training needs d >= 2")
    P = L
    groups = list(range(L - d))  # supervised prompt positions

    slot_positions = []
    slot_weights = []
    for g in groups:
        for t in range(1, d + 1):
            if shifted:
                pos = g if t == 1 else P + g * m + (t - 2)
            else:
                pos = P + g * m + (t - 1)
            slot_positions.append(pos)
            slot_weights.append(cfg.weights[t - 1])

    B = len(sequences)
    V = target.vocab_size
    feats = np.empty((B, P, 3 * target.features(sequences[0]).low.shape[1]))
    emb_tokens = np.empty((B, P), dtype=np.int64)
    labels = np.empty((B, len(slot_positions), V))
    for b, seq in enumerate(sequences):
        feats[b] = target.features(seq).concatenated()
        if shifted:
            emb_tokens[b, :-1] = seq[1:]
            emb_tokens[b, -1] = 0  # inert: only the unsupervised last block sees it
        else:
            emb_tokens[b] = seq
        ctx_dists = {}
        s = 0
        for g in groups:
            for t in range(1, d + 1):
                j = g + t  # label = conditional given the first j tokens
                if j not in ctx_dists:
                    ctx_dists[j] = target.next_dist(seq[:j], 1.0)
                labels[b, s] = ctx_dists[j]
                s += 1

    return TrainingBatch(
        feats=feats,
        emb_tokens=emb_tokens,
        mask=build_training_mask(P, m),
        position_ids=build_position_ids(P, m),
        n_prefix=P,
        slot_positions=np.asarray(slot_positions),
        slot_weights=np.asarray(slot_weights),
        labels=labels,
        norm=float(B * len(groups)),
    )


def batch_loss(model: ToyDraft, batch: TrainingBatch,
               want_grads: bool = True):
    """Annealed KL over every supervised slot; returns (loss, grads, floored)."""
    M = batch.mask.shape[0]
    z = model.build_inputs(batch.feats, batch.emb_tokens,
                           M - batch.n_prefix, batch.position_ids)
    logits, cache = model.forward_core(z, batch.mask)
    slot_logits = logits[:, batch.slot_positions, :]
    logp = _log_softmax(slot_logits)
    q = batch.labels
    unfloored = logp >= LOG_FLOOR
    floored = bool(np.any(~unfloored & (q > 0)))
    logp_eff = np.maximum(logp, LOG_FLOOR)
    kl = (_safe_q_log_q(q) - q * logp_eff).sum(axis=-1)  # (B, S)
    loss = float((batch.slot_weights[None, :] * kl).sum() / batch.norm)
    if not want_grads:
        return loss, None, floored

    p = np.exp(logp)
    q_mass = (q * unfloored).sum(axis=-1, keepdims=True)
    dslot = batch.slot_weights[None, :, None] * (q_mass * p - q * unfloored) / batch.norm
    dlogits = np.zeros_like(logits)
    dlogits[:, batch.slot_positions, :] = dslot  # slot positions are distinct
    grads = model.backward_core(cache, dlogits, batch.feats, batch.n_prefix)
    return loss, grads, floored


@dataclass
class TrainingLogRecord:
    step: int
    loss: float
    alpha: list[float] | None = None

    def to_dict(self) -> dict:
        rec = {"step": self.step, "loss": self.loss}
        if self.alpha is not None:
            rec["alpha"] = self.alpha
        return rec


def train_toy_draft(
    target: MarkovTarget,
    corpus: list[list[int]],
    gamma: float,
    d: int,
    steps: int,
    lr: float,
    seed: int,
    *,
    shifted: bool = True,
    eval_sequences: list[list[int]] | None = None,
    eval_every: int = 0,
    checkpoint_hook=None,
    log: list[TrainingLogRecord] | None = None,
) -> ToyDraft:
    """Full-batch gradient descent on the annealed KL objective.

    Aborts with diagnostics if the loss exceeds 10x its initial value.
    checkpoint_hook(step, model, batch) fires every eval_every steps, for
    gradient-audit instrumentation.
    """
    model = ToyDraft(target.vocab_size, target.embeddings, seed=seed, shifted=shifted)
    if steps == 0:
        return model
    batch = build_training_batch(target, corpus, d, gamma, shifted=shifted)
    initial_loss = None
    for step in range(steps):
        loss, grads, _ = batch_loss(model, batch)
        if initial_loss is None:
            initial_loss = loss
        if loss > 10 * initial_loss:
            raise TrainingDivergedError(step, loss, initial_loss)
        for name, g in grads.items():
            model.params[name] -= lr * g
        if log is not None:
            alpha = None
            if eval_every and eval_sequences and (step + 1) % eval_every == 0:
                alpha = evaluate_alpha(model, target, eval_sequences, d)
            log.append(TrainingLogRecord(step, loss, alpha))
        if checkpoint_hook and eval_every and (step + 1) % eval_every == 0:
            checkpoint_hook(step, model, batch)
    return model


def evaluate_alpha(drafter, target: MarkovTarget,
                   sequences: list[list[int]], d: int,
                   min_prefix: int = 1, vs_greedy: bool = False) -> list[float]:
    """Held-out argmax accuracy per future position, inference conditions.

    alpha[t-1] is the fraction of (sequence, prefix) pairs whose row-t argmax
    equals the token t steps ahead -- the held-out sequence's token by
    default, or the target's own greedy continuation with vs_greedy (the
    quantity that controls greedy-decode acceptance). Works with anything
    exposing the predict() drafting interface.
    """
    hits = np.zeros(d)
    total = 0
    for seq in sequences:
        for g in range(min_prefix, len(seq) - d):
            prefix = seq[: g + 1]
            rows = drafter.predict(prefix, target.features(prefix), d).rows
            preds = np.argmax(rows, axis=1)
            truth = target.greedy_chain(prefix, d) if vs_greedy else seq[g + 1: g + 1 + d]
            for t in range(d):
                hits[t] += preds[t] == truth[t]
            total += 1
    if total == 0:
        raise ConfigError("no evaluation prefixes: sequences too short for d")
    return [float(h / total) for h in hits]


def flatten_params(model: ToyDraft) -> tuple[np.ndarray, list[tuple[str, tuple]]]:
    shapes = [(name, model.params[name].shape) for name in sorted(model.params)]
    flat = np.concatenate([model.params[name].ravel() for name, _ in shapes])
    return flat, shapes


def finite_diff_check(model: ToyDraft, batch: TrainingBatch, h: float,
                      n_coords: int = 40, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients
    over a random subsample of parameter coordinates."""
    if not 1e-6 <= h <= 1e-3:
        raise ConfigError(f"step size must be in [1e-6, 1e-3], got {h}")
    _, grads, _ = batch_loss(model, batch)
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    names = sorted(model.params)
    for _ in range(n_coords):
        name = names[rng.integers(len(names))]
        param = model.params[name]
        idx = tuple(rng.integers(s) for s in param.shape)
        orig = param[idx]
        param[idx] = orig + h
        plus, _, _ = batch_loss(model, batch, want_grads=False)
        param[idx] = orig - h
        minus, _, _ = batch_loss(model, batch, want_grads=False)
        param[idx] = orig
        fd = (plus - minus) / (2 * h)
        a = grads[name][idx]
        rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
        worst = max(worst, rel)
    return worst
