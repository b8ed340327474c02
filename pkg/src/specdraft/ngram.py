"""Count-based n-gram trie used as the continuity scorer during draft-tree pruning.

The trie stores exact window counts: every length-`order` window of the corpus
increments one root-to-leaf path. A context (the trailing ``order - 1`` tokens
of a sequence) maps to an internal node whose children are the observed
continuations; the conditional probability of a continuation is its count
divided by the parent's total child count. Scores are ``log(p + eps)`` so that
unseen continuations degrade to a finite floor instead of -inf.

After construction the trie is immutable and may be queried from any number of
threads without synchronization.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (
    BadMagicError,
    ConfigError,
    OutOfVocabularyError,
    TruncatedFileError,
    VersionMismatchError,
)

EPSILON = 1e-9
LOG_EPSILON = math.log(EPSILON)

MAGIC = b"NGTR"
FORMAT_VERSION = 1


class TrieNode:
    __slots__ = ("children", "count", "total_child_count")

    def __init__(self):
        self.children: dict[int, TrieNode] = {}
        self.count = 0
        self.total_child_count = 0


@dataclass
class TrieStats:
    node_count: int
    distinct_contexts: int
    bytes_on_disk: int = 0


class NgramTrie:
    """Immutable count trie over token windows of length `order`."""

    def __init__(self, order: int, vocab_size: int, root: TrieNode | None = None):
        if order < 2:
            raise ConfigError(f"n-gram order must be >= 2, got {order}")
        self.order = order
        self.vocab_size = vocab_size
        self.root = root if root is not None else TrieNode()
        self._bytes_on_disk = 0

    # -- queries ------------------------------------------------------------

    def _context_node(self, context: Sequence[int]) -> TrieNode | None:
        """Descend through the trailing order-1 tokens of `context`.

        Shorter contexts (sequence start) descend as far as tokens exist.
        """
        if len(context) > self.order - 1:
            context = context[-(self.order - 1):]
        node = self.root
        for tok in context:
            node = node.children.get(tok)
            if node is None:
                return None
        return node

    def score(self, context: Sequence[int], token: int, eps: float = EPSILON) -> float:
        """log(Pr(token | context) + eps); log(eps) for anything unseen."""
        node = self._context_node(context)
        if node is None or node.total_child_count == 0:
            return math.log(eps)
        child = node.children.get(token)
        if child is None:
            return math.log(eps)
        return math.log(child.count / node.total_child_count + eps)

    def children_scores(self, context: Sequence[int], eps: float = EPSILON) -> dict[int, float]:
        """Scores for every observed continuation of `context`, one descent.

        Tokens absent from the returned map are implicitly at log(eps).
        """
        node = self._context_node(context)
        if node is None or node.total_child_count == 0:
            return {}
        total = node.total_child_count
        log = math.log
        return {tok: log(child.count / total + eps) for tok, child in node.children.items()}

    def stats(self) -> TrieStats:
        node_count = 0
        distinct_contexts = 0
        context_depth = self.order - 1
        stack = [(self.root, 0)]
        while stack:
            node, depth = stack.pop()
            node_count += 1
            if depth == context_depth and node.children:
                distinct_contexts += 1
            if depth < self.order:
                stack.extend((child, depth + 1) for child in node.children.values())
        return TrieStats(node_count, distinct_contexts, self._bytes_on_disk)


def build_trie(
    corpus: Iterable[Sequence[int]],
    order: int,
    vocab_size: int | None = None,
) -> NgramTrie:
    """Count every length-`order` window of every sequence into a trie.

    vocab_size=None infers V as max token + 1; when given, any token >= V
    raises OutOfVocabularyError naming the offending sequence.
    """
    if order < 2:
        raise ConfigError(f"n-gram order must be >= 2, got {order}")
    root = TrieNode()
    max_token = -1
    for seq_index, seq in enumerate(corpus):
        if vocab_size is not None:
            for tok in seq:
                if tok >= vocab_size or tok < 0:
                    raise OutOfVocabularyError(tok, vocab_size, seq_index)
        elif seq:
            max_token = max(max_token, max(seq))
            if min(seq) < 0:
                raise OutOfVocabularyError(min(seq), 0, seq_index)
        for start in range(len(seq) - order + 1):
            node = root
            for tok in seq[start:start + order]:
                node.total_child_count += 1
                child = node.children.get(tok)
                if child is None:
                    child = TrieNode()
                    node.children[tok] = child
                node = child
                node.count += 1
    if vocab_size is None:
        vocab_size = max_token + 1
    return NgramTrie(order, vocab_size, root)


# -- serialization ------------------------------------------------------------
#
# Little-endian layout: MAGIC, u16 version, varint order, varint vocab_size,
# then the node stream in preorder. Each node is varint(count),
# varint(num_children), then children in ascending token order as
# varint(token) followed by the child node. total_child_count is derived.


def _write_varint(buf: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.append(byte | 0x80)
        else:
            buf.append(byte)
            return


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise TruncatedFileError("file ended inside a varint")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def save_trie(trie: NgramTrie, path: str | os.PathLike) -> int:
    """Serialize to `path`; returns bytes written."""
    buf = bytearray()
    buf += MAGIC
    buf += FORMAT_VERSION.to_bytes(2, "little")
    _write_varint(buf, trie.order)
    _write_varint(buf, trie.vocab_size)

    # Preorder without recursion: each stack entry is a node to emit.
    stack = [trie.root]
    while stack:
        node = stack.pop()
        _write_varint(buf, node.count)
        _write_varint(buf, len(node.children))
        items = sorted(node.children.items())
        for token, _child in items:
            _write_varint(buf, token)
        # Children follow in ascending token order; push reversed for the stack.
        stack.extend(child for _tok, child in reversed(items))

    with open(path, "wb") as f:
        f.write(buf)
    trie._bytes_on_disk = len(buf)
    return len(buf)


def load_trie(path: str | os.PathLike) -> NgramTrie:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(MAGIC) + 2:
        raise TruncatedFileError(f"{path}: file too short for header")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a trie file (bad magic)")
    version = int.from_bytes(data[len(MAGIC):len(MAGIC) + 2], "little")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}"
        )
    pos = len(MAGIC) + 2
    order, pos = _read_varint(data, pos)
    vocab_size, pos = _read_varint(data, pos)

    def read_header(pos: int) -> tuple[TrieNode, list[int], int]:
        node = TrieNode()
        node.count, pos = _read_varint(data, pos)
        n_children, pos = _read_varint(data, pos)
        tokens = []
        for _ in range(n_children):
            tok, pos = _read_varint(data, pos)
            tokens.append(tok)
        tokens.reverse()  # consumed back-to-front below
        return node, tokens, pos

    root, pending, pos = read_header(pos)
    stack: list[tuple[TrieNode, list[int]]] = [(root, pending)]
    while stack:
        parent, pending = stack[-1]
        if not pending:
            stack.pop()
            parent.total_child_count = sum(c.count for c in parent.children.values())
            continue
        tok = pending.pop()
        node, child_tokens, pos = read_header(pos)
        parent.children[tok] = node
        stack.append((node, child_tokens))
    if pos != len(data):
        raise TruncatedFileError(f"{path}: {len(data) - pos} trailing bytes")

    trie = NgramTrie(order, vocab_size, root)
    trie._bytes_on_disk = len(data)
    return trie


# -- corpus ingestion ----------------------------------------------------------


def read_token_corpus(path: str | os.PathLike) -> list[list[int]]:
    """Newline-delimited records of whitespace-separated integer token IDs."""
    corpus = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                corpus.append([])
                continue
            try:
                corpus.append([int(tok) for tok in line.split()])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: non-integer token: {exc}") from exc
    return corpus


def tokenize_bytes(text: str) -> list[int]:
    """Byte-level demo tokenizer: UTF-8 bytes as token IDs (V = 256)."""
    return list(text.encode("utf-8"))


def read_text_corpus(path: str | os.PathLike) -> list[list[int]]:
    """Plain-text mode: one record per line, byte-level tokens."""
    with open(path, "r", encoding="utf-8") as f:
        return [tokenize_bytes(line.rstrip("\n")) for line in f]
