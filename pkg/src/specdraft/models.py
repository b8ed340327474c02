"""Desk-scale target and draft models.

MarkovTarget is an order-k Markov chain standing in for the target LM: exact
conditional distributions, deterministic per-context feature vectors standing
in for low/middle/high hidden states, and a frozen token embedding table.

ToyDraft realizes the parallel drafting architecture at toy scale: the three
feature vectors are concatenated and projected, the projection is joined with
shifted token embeddings, a learned mask vector fills the future positions,
and one causal attention layer plus an output head produces logits for all d
future positions in a single forward pass (row 1 read from the last prefix
position, the rest from mask positions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tree import ParallelLogits

FEAT_WIDTH = 8       # width of each of the three feature vectors
PROJ_WIDTH = 16      # feature projection output
EMB_WIDTH = 8        # token embedding width
MODEL_WIDTH = PROJ_WIDTH + EMB_WIDTH

MODEL_FILE_VERSION = 1


def temperature_adjust(dist: np.ndarray, temperature: float) -> np.ndarray:
    """p^(1/T) renormalized; T = 0 collapses to argmax (lowest ID on ties)."""
    if temperature < 0:
        raise ConfigError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0:
        out = np.zeros_like(dist)
        out[int(np.argmax(dist))] = 1.0
        return out
    if temperature == 1.0:
        return dist / dist.sum()
    powed = dist ** (1.0 / temperature)
    return powed / powed.sum()


def sample_from(dist: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(dist)
    return int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))


@dataclass
class TargetFeatures:
    """Per-position feature vectors plus the target's conditional at the
    prefix end (used to form the shifted embedding of the next position)."""

    low: np.ndarray      # (n, FEAT_WIDTH)
    mid: np.ndarray
    high: np.ndarray
    next_dist: np.ndarray  # (V,), untempered

    def concatenated(self) -> np.ndarray:
        return np.concatenate([self.low, self.mid, self.high], axis=-1)


class MarkovTarget:
    """Order-k Markov chain with exact conditionals and deterministic features.

    Transition rows and feature vectors are generated lazily per context from
    (seed, context), so two targets with the same construction arguments agree
    on every row. Contexts shorter than k are left-padded with token 0.
    """

    def __init__(self, seed: int, vocab_size: int, order: int, concentration: float = 0.3):
        if vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {vocab_size}")
        if order < 1:
            raise ConfigError(f"markov order must be >= 1, got {order}")
        if concentration <= 0:
            raise ConfigError(f"concentration must be > 0, got {concentration}")
        self.seed = seed
        self.vocab_size = vocab_size
        self.order = order
        self.concentration = concentration
        self._rows: dict[tuple[int, ...], np.ndarray] = {}
        self._feats: dict[tuple[int, ...], np.ndarray] = {}
        emb_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
        self.embeddings = emb_rng.standard_normal((vocab_size, EMB_WIDTH))

    def _context(self, prefix) -> tuple[int, ...]:
        ctx = tuple(int(t) for t in prefix[-self.order:])
        if len(ctx) < self.order:
            ctx = (0,) * (self.order - len(ctx)) + ctx
        return ctx

    def _row(self, ctx: tuple[int, ...]) -> np.ndarray:
        row = self._rows.get(ctx)
        if row is None:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, 1, *ctx])))
            row = rng.dirichlet(np.full(self.vocab_size, self.concentration))
            self._rows[ctx] = row
        return row

    def _feat(self, ctx: tuple[int, ...]) -> np.ndarray:
        feat = self._feats.get(ctx)
        if feat is None:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, 2, *ctx])))
            feat = rng.standard_normal((3, FEAT_WIDTH))
            self._feats[ctx] = feat
        return feat

    def next_dist(self, prefix, temperature: float = 1.0) -> np.ndarray:
        return temperature_adjust(self._row(self._context(prefix)), temperature)

    def features(self, prefix) -> TargetFeatures:
        n = len(prefix)
        low = np.empty((n, FEAT_WIDTH))
        mid = np.empty((n, FEAT_WIDTH))
        high = np.empty((n, FEAT_WIDTH))
        for i in range(n):
            f = self._feat(self._context(prefix[: i + 1]))
            low[i], mid[i], high[i] = f
        return TargetFeatures(low, mid, high, self._row(self._context(prefix)))

    def greedy_chain(self, prefix, length: int) -> list[int]:
        """Argmax rollout of `length` tokens past `prefix`."""
        seq = list(prefix)
        out = []
        for _ in range(length):
            tok = int(np.argmax(self._row(self._context(seq))))
            out.append(tok)
            seq.append(tok)
        return out

    def argmin_chain(self, prefix, length: int) -> list[int]:
        seq = list(prefix)
        out = []
        for _ in range(length):
            tok = int(np.argmin(self._row(self._context(seq))))
            out.append(tok)
            seq.append(tok)
        return out

    def sample_sequence(self, rng: np.random.Generator, length: int, prompt=()) -> list[int]:
        seq = list(prompt)
        for _ in range(length):
            seq.append(sample_from(self._row(self._context(seq)), rng))
        return seq[len(prompt):] if prompt else seq


def sample_markov_target(seed: int, vocab_size: int, order: int,
                         concentration: float = 0.3) -> MarkovTarget:
    """Deterministic-from-seed random stochastic table plus features."""
    return MarkovTarget(seed, vocab_size, order, concentration)


def positional_encoding(position_ids, width: int = MODEL_WIDTH) -> np.ndarray:
    """Fixed sinusoidal encoding of the given (possibly repeated) position ids."""
    ids = np.asarray(position_ids, dtype=np.float64)[:, None]
    half = width // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)[None, :]
    enc = np.empty((ids.shape[0], width))
    enc[:, 0::2] = np.sin(ids * freqs)
    enc[:, 1::2] = np.cos(ids * freqs)
    return enc


class ToyDraft:
    """Single-layer parallel drafter.

    predict() makes exactly one attention forward per call. The input sequence
    is the projected features joined with shifted token embeddings over the
    prefix, followed by learned mask vectors for the remaining future
    positions; logits for future position t are read from input position
    n + t - 1 (shifted) or n + t (unshifted).
    """

    def __init__(self, vocab_size: int, embeddings: np.ndarray, seed: int = 0,
                 shifted: bool = True):
        if embeddings.shape != (vocab_size, EMB_WIDTH):
            raise ConfigError(
                f"embeddings must be ({vocab_size}, {EMB_WIDTH}), got {embeddings.shape}"
            )
        self.vocab_size = vocab_size
        self.embeddings = embeddings  # frozen, shared with the target
        self.shifted = shifted
        self.attention_calls = 0
        self._pe_cache: dict[tuple, np.ndarray] = {}
        d = MODEL_WIDTH
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 3])))
        scale = 1.0 / np.sqrt(d)
        self.params: dict[str, np.ndarray] = {
            "W_in": rng.standard_normal((3 * FEAT_WIDTH, PROJ_WIDTH)) / np.sqrt(3 * FEAT_WIDTH),
            "mask_vec": rng.standard_normal(d) * 0.5,
            "Wq": rng.standard_normal((d, d)) * scale,
            "Wk": rng.standard_normal((d, d)) * scale,
            "Wv": rng.standard_normal((d, d)) * scale,
            "W_head": rng.standard_normal((d, vocab_size)) * scale,
            "b_head": np.zeros(vocab_size),
        }

    # -- core forward/backward (batched) ------------------------------------

    def build_inputs(self, feats: np.ndarray, emb_tokens: np.ndarray,
                     n_mask: int, position_ids) -> np.ndarray:
        """Assemble z = [proj(feats) || E[emb_tokens], mask_vec...] + PE.

        feats: (B, n, 3*FEAT_WIDTH); emb_tokens: (B, n) token ids whose
        embeddings occupy each prefix position.
        """
        B, n, _ = feats.shape
        g = feats @ self.params["W_in"]
        e = self.embeddings[emb_tokens]
        z_prefix = np.concatenate([g, e], axis=-1)
        z_mask = np.broadcast_to(self.params["mask_vec"], (B, n_mask, MODEL_WIDTH))
        z = np.concatenate([z_prefix, z_mask], axis=1)
        key = tuple(int(i) for i in position_ids)
        pe = self._pe_cache.get(key)
        if pe is None:
            pe = positional_encoding(position_ids)
            if len(self._pe_cache) < 64:
                self._pe_cache[key] = pe
        return z + pe[None, :, :]

    def forward_core(self, z: np.ndarray, attn_mask: np.ndarray):
        """One causal-masked attention layer with residual, then the head.

        Returns (logits (B, L, V), cache for backward).
        """
        self.attention_calls += 1
        p = self.params
        scale = 1.0 / np.sqrt(MODEL_WIDTH)
        q = z @ p["Wq"]
        k = z @ p["Wk"]
        v = z @ p["Wv"]
        s = (q @ k.transpose(0, 2, 1)) * scale
        s = np.where(attn_mask[None, :, :], s, -1e30)
        s -= s.max(axis=-1, keepdims=True)
        e = np.exp(s)
        attn = e / e.sum(axis=-1, keepdims=True)
        ctx = attn @ v
        y = z + ctx
        logits = y @ p["W_head"] + p["b_head"]
        cache = {"z": z, "q": q, "k": k, "v": v, "attn": attn, "y": y,
                 "mask": attn_mask, "scale": scale}
        return logits, cache

    def backward_core(self, cache: dict, dlogits: np.ndarray,
                      feats: np.ndarray, n_prefix: int) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss with given d(loss)/d(logits)."""
        p = self.params
        z, q, k, v = cache["z"], cache["q"], cache["k"], cache["v"]
        attn, y, scale = cache["attn"], cache["y"], cache["scale"]

        grads = {}
        grads["W_head"] = np.tensordot(y, dlogits, axes=([0, 1], [0, 1]))
        grads["b_head"] = dlogits.sum(axis=(0, 1))
        dy = dlogits @ p["W_head"].T
        dz = dy.copy()
        dctx = dy
        dattn = dctx @ v.transpose(0, 2, 1)
        dv = attn.transpose(0, 2, 1) @ dctx
        ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        ds = ds * scale
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        grads["Wq"] = np.tensordot(z, dq, axes=([0, 1], [0, 1]))
        grads["Wk"] = np.tensordot(z, dk, axes=([0, 1], [0, 1]))
        grads["Wv"] = np.tensordot(z, dv, axes=([0, 1], [0, 1]))
        dz += dq @ p["Wq"].T + dk @ p["Wk"].T + dv @ p["Wv"].T

        dz_prefix = dz[:, :n_prefix, :]
        grads["mask_vec"] = dz[:, n_prefix:, :].sum(axis=(0, 1))
        dg = dz_prefix[..., :PROJ_WIDTH]
        grads["W_in"] = np.tensordot(feats, dg, axes=([0, 1], [0, 1]))
        return grads

    # -- inference ------------------------------------------------------------

    def causal_mask(self, length: int) -> np.ndarray:
        return np.tril(np.ones((length, length), dtype=bool))

    def forward(self, feats: np.ndarray, emb_tokens, d: int) -> np.ndarray:
        """Single-sequence drafting forward; returns (d, V) logits."""
        n = feats.shape[0]
        if n < 1:
            raise ConfigError("prefix must be nonempty")
        n_mask = d - 1 if self.shifted else d
        length = n + n_mask
        ids = list(range(length))
        z = self.build_inputs(feats[None, :, :], np.asarray(emb_tokens)[None, :], n_mask, ids)
        logits, _ = self.forward_core(z, self.causal_mask(length))
        start = n - 1 if self.shifted else n
        return logits[0, start:start + d, :]

    def predict(self, prefix, feats: TargetFeatures, d: int, *,
                temperature: float = 0.0, rng: np.random.Generator | None = None) -> ParallelLogits:
        """One drafting forward: d rows of future-position logits.

        The shifted variant embeds the target's next-token choice at the last
        prefix position: argmax of the target conditional at temperature 0,
        a sample from the tempered conditional otherwise.
        """
        if temperature > 0 and rng is None:
            raise ConfigError("sampling the shifted next token requires an rng")
        prefix = [int(t) for t in prefix]
        if self.shifted:
            dist = temperature_adjust(feats.next_dist, temperature)
            nxt = int(np.argmax(dist)) if temperature == 0 else sample_from(dist, rng)
            emb_tokens = prefix[1:] + [nxt]
        else:
            emb_tokens = prefix
        return ParallelLogits(self.forward(feats.concatenated(), emb_tokens, d))

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        np.savez(
            path,
            version=np.int64(MODEL_FILE_VERSION),
            vocab_size=np.int64(self.vocab_size),
            shifted=np.int64(1 if self.shifted else 0),
            embeddings=self.embeddings,
            **self.params,
        )

    @classmethod
    def load(cls, path) -> "ToyDraft":
        with np.load(path) as data:
            version = int(data["version"])
            if version != MODEL_FILE_VERSION:
                raise ConfigError(
                    f"model file version {version}, expected {MODEL_FILE_VERSION}"
                )
            model = cls(
                int(data["vocab_size"]),
                data["embeddings"],
                shifted=bool(int(data["shifted"])),
            )
            for name in model.params:
                model.params[name] = data[name]
        return model


# -- reference drafters --------------------------------------------------------

CHAIN_LOGIT = 12.0


class OracleDrafter:
    """Row-i argmax equals the target's greedy token i steps ahead."""

    def __init__(self, target: MarkovTarget):
        self.target = target

    def predict(self, prefix, feats, d, *, temperature=0.0, rng=None) -> ParallelLogits:
        rows = np.zeros((d, self.target.vocab_size))
        for i, tok in enumerate(self.target.greedy_chain(prefix, d)):
            rows[i, tok] = CHAIN_LOGIT
        return ParallelLogits(rows)


class AdversarialDrafter:
    """Dominant logits on the target's least likely continuation chain."""

    def __init__(self, target: MarkovTarget):
        self.target = target

    def predict(self, prefix, feats, d, *, temperature=0.0, rng=None) -> ParallelLogits:
        rows = np.zeros((d, self.target.vocab_size))
        for i, tok in enumerate(self.target.argmin_chain(prefix, d)):
            rows[i, tok] = CHAIN_LOGIT
        return ParallelLogits(rows)


class UniformDrafter:
    """Uniform random logits; a fresh row set per cycle from a seeded stream."""

    def __init__(self, vocab_size: int, seed: int = 0):
        self.vocab_size = vocab_size
        self.rng = np.random.Generator(np.random.PCG64(seed))

    def predict(self, prefix, feats, d, *, temperature=0.0, rng=None) -> ParallelLogits:
        return ParallelLogits(self.rng.random((d, self.vocab_size)))


class NoisyOracleDrafter:
    """Greedy-chain drafter with the dominant logit damped and Gaussian noise
    added, so the true continuation usually survives in the top-k but is often
    not the top-ranked candidate. Used by the n-gram ablation."""

    def __init__(self, target: MarkovTarget, noise: float = 1.0, base: float = 1.2, seed: int = 0):
        self.target = target
        self.noise = noise
        self.base = base
        self.rng = np.random.Generator(np.random.PCG64(seed))

    def predict(self, prefix, feats, d, *, temperature=0.0, rng=None) -> ParallelLogits:
        rows = self.rng.standard_normal((d, self.target.vocab_size)) * self.noise
        for i, tok in enumerate(self.target.greedy_chain(prefix, d)):
            rows[i, tok] += self.base
        return ParallelLogits(rows)
