"""Parser, writer, and shape-rule tests for the graph text format."""

import numpy as np
import pytest

from gridproof.graph import (
    Graph,
    GraphError,
    Node,
    einsum_output_shape,
    graph_to_text,
    parse_einsum_spec,
    parse_graph,
)

MATMUL_SRC = """\
version 1
tensor a fix 2 3
tensor b fix 3 4
tensor y fix 2 4
input a
input b
output y
node y matmul a b
"""


class TestParse:
    def test_matmul_normalizes_to_einsum(self):
        g = parse_graph(MATMUL_SRC)
        assert len(g.nodes) == 1
        n = g.nodes[0]
        assert n.op == "einsum"
        assert n.attr("spec") == "ij,jk->ik"
        assert n.inputs == ("a", "b")
        assert g.shape("y") == (2, 4)

    def test_nonlinear_sugar(self):
        src = (
            "version 1\ntensor x fix 3\ntensor y fix 3\n"
            "input x\noutput y\nnode y relu x\n"
        )
        g = parse_graph(src)
        assert g.nodes[0].op == "nonlinear"
        assert g.nodes[0].attr("fn") == "relu"

    def test_const_kinds(self):
        src = (
            "version 1\n"
            "tensor w fix 4 4\n"
            "tensor c fix\n"
            "tensor e fix 2 4\n"
            "tensor x fix 4\n"
            "tensor y fix 4\n"
            "input x\n"
            "const w weight=w0\n"
            "const c scalar=107 scale=1\n"
            "const e eye\n"
            "node y mul bcast=scalar x c\n"
            "output y\n"
        )
        g = parse_graph(src)
        kinds = {n.name: n.attr("kind") for n in g.nodes if n.op == "const"}
        assert kinds == {"w": "weight", "c": "scalar", "e": "eye"}
        assert g.weight_names() == ("w0",)

    def test_comments_and_blanks(self):
        g = parse_graph("# header\n\n" + MATMUL_SRC + "\n# trailing\n")
        assert len(g.nodes) == 1

    @pytest.mark.parametrize(
        "src,msg",
        [
            ("tensor a fix 2\n", "missing version"),
            ("version 2\n", "unsupported format version"),
            ("version 1\ntensor a fix 2\ninput a\noutput a\n" * 1, None),  # ok
            ("version 1\ntensor a fix 2\ntensor a fix 2\n", "redefined tensor"),
            ("version 1\ntensor y fix 2\noutput y\n", "never produced"),
            ("version 1\ntensor a fix 2\noutput z\n", "undefined tensor"),
            (
                "version 1\ntensor a fix 2\ntensor y fix 2\noutput y\nnode y relu a\n",
                "used before it is produced",
            ),
            (
                "version 1\ntensor a fix 2\ntensor y fix 3\ninput a\noutput y\nnode y relu a\n",
                "declared (3,), inferred (2,)",
            ),
            (
                "version 1\ntensor a idx 2\ntensor y fix 2\ninput a\noutput y\nnode y relu a\n",
                "idx tensor",
            ),
            (
                "version 1\ntensor a fix 2\ntensor y fix 2\ninput a\noutput y\nnode y frobnicate a\n",
                "unknown op",
            ),
            ("version 1\ntensor a fix 0\n", "bad tensor shape"),
            ("version 1\nwibble x\n", "unknown statement"),
        ],
    )
    def test_rejects(self, src, msg):
        if msg is None:
            parse_graph(src)
            return
        with pytest.raises(GraphError) as e:
            parse_graph(src)
        assert msg in str(e.value)

    def test_self_reference_rejected(self):
        src = "version 1\ntensor y fix 2\noutput y\nnode y relu y\n"
        with pytest.raises(GraphError, match="used before"):
            parse_graph(src)

    def test_no_outputs_rejected(self):
        with pytest.raises(GraphError, match="no outputs"):
            parse_graph("version 1\ntensor a fix 2\ninput a\n")

    def test_gather_requires_idx(self):
        src = (
            "version 1\ntensor t fix 8 4\ntensor i fix 3\ntensor y fix 3 4\n"
            "input t\ninput i\noutput y\nnode y gather t i\n"
        )
        with pytest.raises(GraphError, match="idx dtype"):
            parse_graph(src)

    def test_scalar_const_needs_scalar_shape(self):
        src = "version 1\ntensor c fix 2\nconst c scalar=3 scale=1\noutput c\n"
        with pytest.raises(GraphError, match="scalar const"):
            parse_graph(src)


class TestEinsumSpec:
    def test_matmul_shape(self):
        assert einsum_output_shape("ij,jk->ik", [(2, 3), (3, 4)]) == (2, 4)

    def test_batched_attention_shape(self):
        assert einsum_output_shape("htd,hsd->hts", [(4, 5, 8), (4, 9, 8)]) == (4, 5, 9)

    def test_row_sum(self):
        assert einsum_output_shape("ab->a", [(3, 7)]) == (3,)

    def test_contracted_letters(self):
        _, out, contracted = parse_einsum_spec("htd,hsd->hts", 2)
        assert out == "hts" and contracted == ["d"]

    @pytest.mark.parametrize(
        "spec,n",
        [
            ("ij,jk", 2),  # no arrow
            ("iij->i", 1),  # repeated in one operand
            ("ij,jk->iz", 2),  # unknown output letter
            ("ij,kl->ijkl", 2),  # fine actually? no contraction, allowed
            ("ab,cd->ac", 2),  # b contracted but only on one operand
            ("ij,jk->ikk", 2),  # repeated output letter
            ("i1->i", 1),  # bad letter
        ],
    )
    def test_bad_specs(self, spec, n):
        if spec == "ij,kl->ijkl":
            parse_einsum_spec(spec, n)  # outer product, no contraction: legal
            return
        with pytest.raises(GraphError):
            parse_einsum_spec(spec, n)

    def test_dim_mismatch(self):
        with pytest.raises(GraphError, match="dim mismatch"):
            einsum_output_shape("ij,jk->ik", [(2, 3), (4, 5)])


class TestWriter:
    def test_round_trip(self):
        src = (
            "version 1\n"
            "tensor tok idx 3\n"
            "tensor emb fix 8 4\n"
            "tensor x fix 3 4\n"
            "tensor xt fix 4 3\n"
            "tensor g fix 4\n"
            "tensor y fix 3 4\n"
            "tensor z fix 3 4\n"
            "tensor m fix 3 3\n"
            "tensor mm fix 3 3\n"
            "input tok\n"
            "const emb weight=emb\n"
            "const g weight=g\n"
            "node x gather emb tok\n"
            "node xt transpose perm=1,0 x\n"
            "node y mul bcast=last x g\n"
            "node z gelu y\n"
            "node m einsum spec=ij,kj->ik x z\n"
            "node mm maskfill mode=causal m\n"
            "output mm\n"
        )
        g1 = parse_graph(src)
        text = graph_to_text(g1)
        g2 = parse_graph(text)
        assert g1 == g2
        assert graph_to_text(g2) == text

    def test_round_trip_consts(self):
        src = (
            "version 1\ntensor c fix\ntensor e fix 3 5\ntensor w fix 3 5\n"
            "tensor y fix 3 5\n"
            "const c scalar=-17 scale=2\nconst e eye\nconst w weight=wq\n"
            "node y mul bcast=scalar e c\noutput y\n"
        )
        g1 = parse_graph(src)
        g2 = parse_graph(graph_to_text(g1))
        assert g1 == g2


class TestShapes:
    def _graph(self, body: str, tensors: str) -> Graph:
        return parse_graph("version 1\n" + tensors + body)

    def test_concat(self):
        g = self._graph(
            "input a\ninput b\noutput y\nnode y concat axis=1 a b\n",
            "tensor a fix 2 3\ntensor b fix 2 5\ntensor y fix 2 8\n",
        )
        assert g.shape("y") == (2, 8)

    def test_concat_mismatch(self):
        with pytest.raises(GraphError, match="concat shape mismatch"):
            self._graph(
                "input a\ninput b\noutput y\nnode y concat axis=1 a b\n",
                "tensor a fix 2 3\ntensor b fix 3 5\ntensor y fix 2 8\n",
            )

    def test_reshape_size_mismatch(self):
        with pytest.raises(GraphError, match="reshape size mismatch"):
            self._graph(
                "input a\noutput y\nnode y reshape dims=4,2 a\n",
                "tensor a fix 2 3\ntensor y fix 4 2\n",
            )

    def test_transpose_bad_perm(self):
        with pytest.raises(GraphError, match="transpose perm"):
            self._graph(
                "input a\noutput y\nnode y transpose perm=0,0 a\n",
                "tensor a fix 2 3\ntensor y fix 2 3\n",
            )

    def test_bcast_modes(self):
        # keep: divisor indexed by leading dims; last: affine suffix
        g = self._graph(
            "input a\ninput r\ninput s\noutput y\noutput z\n"
            "node y mul bcast=keep a r\nnode z mul bcast=last a s\n",
            "tensor a fix 2 4 6\ntensor r fix 2 4\ntensor s fix 6\n"
            "tensor y fix 2 4 6\ntensor z fix 2 4 6\n",
        )
        assert g.shape("y") == g.shape("z") == (2, 4, 6)

    def test_bcast_rejects_wrong_rank(self):
        with pytest.raises(GraphError, match="bcast=keep"):
            self._graph(
                "input a\ninput r\noutput y\nnode y mul bcast=keep a r\n",
                "tensor a fix 2 4 6\ntensor r fix 4\ntensor y fix 2 4 6\n",
            )

    def test_eye_rows_le_cols(self):
        with pytest.raises(GraphError, match="eye wants rows <= cols"):
            parse_graph("version 1\ntensor e fix 5 3\nconst e eye\noutput e\n")

    def test_layernorm_param_shapes(self):
        with pytest.raises(GraphError, match=r"affine params must be \(4,\)"):
            self._graph(
                "input x\ninput g\ninput b\noutput y\nnode y layernorm x g b\n",
                "tensor x fix 3 4\ntensor g fix 3\ntensor b fix 4\ntensor y fix 3 4\n",
            )
