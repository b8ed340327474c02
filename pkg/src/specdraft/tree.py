"""Draft token tree construction from one set of parallel per-position logits.

One drafting forward yields d rows of logits, one per future position. Those
rows induce a combinatorially large tree of candidate continuations; pruning
walks the positions level by level, expanding an active beam by the top-k
tokens of each row, scoring every expansion with a blend of the draft logit
score and an n-gram continuity score, and finally keeping the top-theta
scoring nodes as an ancestor-closed tree ready for tree-attention
verification.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidTreeError
from .ngram import EPSILON, NgramTrie

ROOT_ID = -1


@dataclass
class ParallelLogits:
    """d rows of vocabulary logits; row i scores the (i+1)-th future position."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ConfigError(f"logits must be (d, V) with d >= 1, got {self.rows.shape}")
        if not np.all(np.isfinite(self.rows)):
            raise ConfigError("logit rows must be finite")

    @property
    def d(self) -> int:
        return self.rows.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class PruneConfig:
    """Pruning hyperparameters. Defaults follow the reference operating point:
    top-25 candidates per position, beam width 20, 59-node trees, n-gram
    weight 0.5, logit weight 0.9^level, level weight (level+1)^-0.7."""

    k: int = 25
    w: int = 20
    theta: int = 59
    w_ng: float = 0.5
    logit_decay: float = 0.9
    level_exponent: float = 0.7
    epsilon: float = EPSILON

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.w < 1:
            raise ConfigError(f"beam width must be >= 1, got {self.w}")
        if self.theta < 1:
            raise ConfigError(f"theta must be >= 1, got {self.theta}")
        if self.w_ng < 0:
            raise ConfigError(f"w_ng must be >= 0, got {self.w_ng}")
        if not 0 < self.logit_decay <= 1:
            raise ConfigError(f"logit_decay must be in (0, 1], got {self.logit_decay}")
        if self.level_exponent < 0:
            raise ConfigError(f"level_exponent must be >= 0, got {self.level_exponent}")


@dataclass
class DraftNode:
    id: int
    parent_id: int  # ROOT_ID for children of the prefix
    token: int
    level: int  # 0 = first future position
    score: float  # cumulative combined score


@dataclass
class DraftTree:
    """Ancestor-closed scored token tree, nodes listed parents-before-children."""

    nodes: list[DraftNode]

    def __len__(self) -> int:
        return len(self.nodes)

    def children_of(self, node_id: int) -> list[DraftNode]:
        return [n for n in self.nodes if n.parent_id == node_id]

    def path_tokens(self, node_id: int) -> list[int]:
        """Tokens from the first level down to and including `node_id`."""
        by_id = {n.id: n for n in self.nodes}
        path = []
        while node_id != ROOT_ID:
            node = by_id[node_id]
            path.append(node.token)
            node_id = node.parent_id
        path.reverse()
        return path

    def render(self) -> str:
        """Indented text rendering for debugging."""
        lines = []
        by_parent: dict[int, list[DraftNode]] = {}
        for n in self.nodes:
            by_parent.setdefault(n.parent_id, []).append(n)

        def walk(parent_id: int, indent: int):
            for n in by_parent.get(parent_id, []):
                lines.append(f"{'  ' * indent}{n.token} (score={n.score:.4f})")
                walk(n.id, indent + 1)

        walk(ROOT_ID, 0)
        return "\n".join(lines)

    def to_records(self) -> list[dict]:
        """Machine-readable adjacency listing for golden tests."""
        return [
            {
                "id": n.id,
                "parent_id": n.parent_id,
                "token": n.token,
                "level": n.level,
                "score": n.score,
            }
            for n in self.nodes
        ]


@dataclass
class LinearizedTree:
    tokens: list[int]
    position_ids: list[int]
    attention_mask: np.ndarray  # bool (N, N); prefix visibility is implicit

    def __len__(self) -> int:
        return len(self.tokens)


def log_softmax(row: np.ndarray) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    shifted = row - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def top_k_candidates(row: np.ndarray, k: int, eps: float = EPSILON) -> list[tuple[int, float]]:
    """The k highest-logit tokens with s_logit = log(softmax(row) + eps).

    Sorted by descending score; ties broken by ascending token ID.
    """
    row = np.asarray(row, dtype=np.float64)
    if k > row.shape[0]:
        raise ConfigError(f"k = {k} exceeds vocabulary size {row.shape[0]}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    order = np.lexsort((np.arange(row.shape[0]), -row))[:k]
    probs = np.exp(log_softmax(row))
    return [(int(t), float(np.log(probs[t] + eps))) for t in order]


def combine(s_logit: float, s_ng: float, level: int, cfg: PruneConfig) -> float:
    """Score increment for extending a candidate at tree depth `level`.

    (logit_decay^level * s_logit + w_ng * s_ng) * (level+1)^-level_exponent,
    clamped to <= 0 so cumulative scores never increase along a path.
    """
    if level < 0:
        raise ConfigError(f"level must be >= 0, got {level}")
    w_logit = cfg.logit_decay ** level
    w_level = (level + 1) ** (-cfg.level_exponent)
    return min(0.0, (w_logit * s_logit + cfg.w_ng * s_ng) * w_level)


@dataclass
class _Candidate:
    node_id: int  # ROOT_ID for the bare prefix
    tokens: tuple[int, ...]  # prefix + accepted draft tokens so far
    score: float


def _expand(
    cand: _Candidate,
    topk: list[tuple[int, float]],
    trie: NgramTrie | None,
    cfg: PruneConfig,
    level: int,
    floor: float,
) -> list[tuple[int, int, float, float]]:
    """(parent_id, token, new_score, s_logit) for every top-k extension."""
    if trie is None:
        ng_scores: dict[int, float] = {}
    else:
        ng_scores = trie.children_scores(cand.tokens, eps=cfg.epsilon)
    out = []
    for token, s_logit in topk:
        s_ng = ng_scores.get(token, floor)
        inc = combine(s_logit, s_ng, level, cfg)
        out.append((cand.node_id, token, cand.score + inc, s_logit))
    return out


def prune(
    logits: ParallelLogits,
    trie: NgramTrie | None,
    cfg: PruneConfig,
    prefix: Sequence[int],
    workers: int = 1,
) -> DraftTree:
    """Continuity-aware pruning of the implicit candidate tree.

    The active beam starts as the bare prefix with score 0. At future position
    i (level i-1) every active candidate expands by the row's top-k tokens;
    each expansion is scored by `combine` of the logit score and the trie's
    continuity score for the candidate's trailing context, enters the global
    pool, and competes for the top-w beam. The result is the top-theta pool
    nodes, ancestor-closed.

    Ties everywhere break as (higher score, lower level, lower token, lower
    parent id), so results are bit-identical for any `workers` count.
    """
    if len(prefix) == 0:
        raise ConfigError("prefix must be nonempty")
    floor = float(np.log(cfg.epsilon))
    prefix = tuple(int(t) for t in prefix)

    pool: list[DraftNode] = []
    beam: list[_Candidate] = [_Candidate(ROOT_ID, prefix, 0.0)]
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for i in range(logits.d):
            topk = top_k_candidates(logits.rows[i], cfg.k, eps=cfg.epsilon)
            if executor is not None:
                chunks = executor.map(
                    lambda c: _expand(c, topk, trie, cfg, i, floor), beam
                )
            else:
                chunks = (_expand(c, topk, trie, cfg, i, floor) for c in beam)
            # Deterministic merge: beam order, then top-k order within a candidate.
            expansions = [e for chunk in chunks for e in chunk]
            parent_tokens = {c.node_id: c.tokens for c in beam}
            next_candidates = []
            for parent_id, token, score, _s_logit in expansions:
                node = DraftNode(len(pool), parent_id, token, i, score)
                pool.append(node)
                next_candidates.append(
                    _Candidate(node.id, parent_tokens[parent_id] + (token,), score)
                )
            next_candidates.sort(key=lambda c: (-c.score, pool[c.node_id].token, pool[c.node_id].parent_id))
            beam = next_candidates[: cfg.w]
    finally:
        if executor is not None:
            executor.shutdown()

    # Top-theta selection. Since increments are clamped <= 0 and parents sort
    # strictly before their children under this key, walking the sorted pool
    # keeps the selection ancestor-closed; the parent check guards the
    # invariant rather than implementing a search.
    ranked = sorted(pool, key=lambda n: (-n.score, n.level, n.token, n.parent_id))
    selected: dict[int, int] = {}  # old id -> new id
    nodes: list[DraftNode] = []
    for node in ranked:
        if len(nodes) >= cfg.theta:
            break
        if node.parent_id != ROOT_ID and node.parent_id not in selected:
            continue  # unreachable under score monotonicity; skip, never strand
        new_id = len(nodes)
        selected[node.id] = new_id
        parent = ROOT_ID if node.parent_id == ROOT_ID else selected[node.parent_id]
        nodes.append(DraftNode(new_id, parent, node.token, node.level, node.score))
    return DraftTree(nodes)


def linearize(tree: DraftTree, prefix_len: int) -> LinearizedTree:
    """Flatten a draft tree for tree-attention verification.

    Nodes keep their stored order (parents before children); position IDs are
    prefix_len + level; mask entry (q, kv) is true iff kv is q or one of q's
    ancestors. Prefix positions are always visible and are not part of the
    matrix.
    """
    n = len(tree.nodes)
    index_of: dict[int, int] = {}
    mask = np.zeros((n, n), dtype=bool)
    tokens = []
    position_ids = []
    for idx, node in enumerate(tree.nodes):
        if node.id in index_of:
            raise InvalidTreeError(f"duplicate node id {node.id}")
        if node.parent_id == ROOT_ID:
            if node.level != 0:
                raise InvalidTreeError(f"root child {node.id} has level {node.level}")
        else:
            if node.parent_id not in index_of:
                raise InvalidTreeError(
                    f"node {node.id} appears before its parent {node.parent_id} "
                    "or the parent is missing"
                )
            parent_idx = index_of[node.parent_id]
            if node.level != tree.nodes[parent_idx].level + 1:
                raise InvalidTreeError(f"node {node.id} level skips its parent's")
            mask[idx] = mask[parent_idx]
        index_of[node.id] = idx
        mask[idx, idx] = True
        tokens.append(node.token)
        position_ids.append(prefix_len + node.level)
    return LinearizedTree(tokens, position_ids, mask)
