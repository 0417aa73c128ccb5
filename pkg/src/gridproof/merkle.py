"""Merkle commitments over cell arrays, with batched multi-openings.

A tree commits to n_leaves byte blocks (n_leaves a power of two). Each leaf block
here is a fixed-size group of field cells serialized little-endian, so opening one
leaf reveals its whole group; neighbours inside a group ride along for free.

The flat-array layout follows the usual convention: tree[1] is the root, leaf i
lives at tree[n_leaves + i]. A multiproof for a set of leaves contains exactly the
sibling digests that cannot be derived from the opened leaves themselves, emitted
in deterministic bottom-up order; opening every leaf therefore needs zero digests.
"""

from __future__ import annotations

import hashlib

import numpy as np

_LEAF_TAG = b"\x00leaf"
_NODE_TAG = b"\x01node"


def _h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def leaf_bytes(cells: np.ndarray) -> bytes:
    return np.ascontiguousarray(cells, dtype="<u8").tobytes()


class MerkleTree:
    __slots__ = ("n_leaves", "tree")

    def __init__(self, leaves: list[bytes]):
        n = len(leaves)
        if n == 0 or n & (n - 1):
            raise ValueError(f"leaf count must be a power of two, got {n}")
        self.n_leaves = n
        tree: list[bytes] = [b""] * (2 * n)
        sha = hashlib.sha256
        for i, blob in enumerate(leaves):
            tree[n + i] = sha(_LEAF_TAG + blob).digest()
        for pos in range(n - 1, 0, -1):
            tree[pos] = sha(_NODE_TAG + tree[2 * pos] + tree[2 * pos + 1]).digest()
        self.tree = tree

    @classmethod
    def from_cells(cls, cells: np.ndarray) -> "MerkleTree":
        """cells: (n_leaves, cells_per_leaf) uint64; one row per leaf."""
        data = np.ascontiguousarray(cells, dtype="<u8")
        n, width = data.shape
        raw = data.tobytes()
        stride = width * 8
        return cls([raw[i * stride : (i + 1) * stride] for i in range(n)])

    @property
    def root(self) -> bytes:
        return self.tree[1]

    def multiproof(self, leaf_indices: list[int]) -> list[bytes]:
        """Sibling digests needed to recompute the root from the given leaves."""
        if not leaf_indices:
            raise ValueError("empty opening set")
        level = sorted({self.n_leaves + i for i in leaf_indices})
        if level[0] < self.n_leaves or level[-1] >= 2 * self.n_leaves:
            raise IndexError("leaf index out of range")
        need: list[bytes] = []
        while level != [1]:
            nxt: list[int] = []
            i = 0
            while i < len(level):
                pos = level[i]
                if i + 1 < len(level) and level[i + 1] == (pos ^ 1):
                    i += 2
                else:
                    need.append(self.tree[pos ^ 1])
                    i += 1
                nxt.append(pos >> 1)
            level = nxt
        return need


def verify_multiproof(
    root: bytes, n_leaves: int, openings: dict[int, bytes], proof_nodes: list[bytes]
) -> bool:
    """Recompute the root from {leaf_index: leaf_block} plus the supplied digests."""
    if not openings or n_leaves <= 0 or n_leaves & (n_leaves - 1):
        return False
    if any(not 0 <= i < n_leaves for i in openings):
        return False
    sha = hashlib.sha256
    digest = {n_leaves + i: sha(_LEAF_TAG + blob).digest() for i, blob in openings.items()}
    level = sorted(digest)
    nodes = iter(proof_nodes)
    try:
        while level != [1]:
            nxt: list[int] = []
            i = 0
            while i < len(level):
                pos = level[i]
                sib = pos ^ 1
                if i + 1 < len(level) and level[i + 1] == sib:
                    left, right = digest[pos], digest[sib]
                    i += 2
                else:
                    other = next(nodes)
                    left, right = (digest[pos], other) if pos % 2 == 0 else (other, digest[pos])
                    i += 1
                digest[pos >> 1] = sha(_NODE_TAG + left + right).digest()
                nxt.append(pos >> 1)
            level = nxt
    except StopIteration:
        return False
    if next(nodes, None) is not None:  # trailing junk is a malformed proof
        return False
    return digest[1] == root
