import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridproof.merkle import MerkleTree, leaf_bytes, verify_multiproof

RNG = np.random.default_rng(7)


def make_tree(n_leaves=64, width=12):
    cells = RNG.integers(0, 2**63, size=(n_leaves, width), dtype=np.uint64)
    return MerkleTree.from_cells(cells), cells


def blocks(cells, idxs):
    return {i: leaf_bytes(cells[i]) for i in idxs}


class TestMerkle:
    def test_root_is_deterministic(self):
        cells = np.arange(64 * 4, dtype=np.uint64).reshape(64, 4)
        assert MerkleTree.from_cells(cells).root == MerkleTree.from_cells(cells).root
        cells2 = cells.copy()
        cells2[13, 2] ^= 1
        assert MerkleTree.from_cells(cells).root != MerkleTree.from_cells(cells2).root

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValueError):
            MerkleTree([b"a", b"b", b"c"])

    @given(st.sets(st.integers(0, 63), min_size=1, max_size=63))
    @settings(max_examples=150, deadline=None)
    def test_multiproof_round_trip(self, idxs):
        tree, cells = make_tree()
        idxs = sorted(idxs)
        proof = tree.multiproof(idxs)
        assert verify_multiproof(tree.root, 64, blocks(cells, idxs), proof)

    def test_full_opening_needs_no_digests(self):
        tree, cells = make_tree(16, 3)
        proof = tree.multiproof(list(range(16)))
        assert proof == []
        assert verify_multiproof(tree.root, 16, blocks(cells, range(16)), [])

    def test_tampered_leaf_rejected(self):
        tree, cells = make_tree()
        idxs = [3, 17, 40]
        proof = tree.multiproof(idxs)
        bad = blocks(cells, idxs)
        bad[17] = bad[17][:-1] + bytes([bad[17][-1] ^ 1])
        assert not verify_multiproof(tree.root, 64, bad, proof)

    def test_tampered_node_rejected(self):
        tree, cells = make_tree()
        idxs = [5]
        proof = tree.multiproof(idxs)
        proof[2] = hashlib.sha256(b"junk").digest()
        assert not verify_multiproof(tree.root, 64, blocks(cells, idxs), proof)

    def test_truncated_and_padded_proofs_rejected(self):
        tree, cells = make_tree()
        idxs = [1, 2, 60]
        proof = tree.multiproof(idxs)
        assert not verify_multiproof(tree.root, 64, blocks(cells, idxs), proof[:-1])
        assert not verify_multiproof(tree.root, 64, blocks(cells, idxs), proof + [proof[0]])

    def test_wrong_index_rejected(self):
        tree, cells = make_tree()
        proof = tree.multiproof([9])
        assert not verify_multiproof(tree.root, 64, {10: leaf_bytes(cells[9])}, proof)

    def test_out_of_range_rejected(self):
        tree, cells = make_tree()
        with pytest.raises(IndexError):
            tree.multiproof([64])
        assert not verify_multiproof(tree.root, 64, {64: b"x"}, [])

    def test_proof_size_shrinks_with_shared_paths(self):
        tree, _ = make_tree(1024, 2)
        lone = sum(len(tree.multiproof([i])) for i in (100, 101, 102, 103))
        shared = len(tree.multiproof([100, 101, 102, 103]))
        assert shared < lone
