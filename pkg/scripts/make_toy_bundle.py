#!/usr/bin/env python3
"""Write a toy model's graph, weights, and a sample input file for CLI use.

    python3 scripts/make_toy_bundle.py --kind gpt --out-dir /tmp/toygpt
    python3 scripts/make_toy_bundle.py --kind mlp --out-dir /tmp/toymlp

Produces <out-dir>/model.graph, model.gpwt, inputs.json, and prints the
quant flag and commitment to pass to the other verbs.
"""

import argparse
import json
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from gridproof.field import QuantConfig
from gridproof.graph import graph_to_text
from gridproof.models import (
    MlpConfig,
    NanoGptConfig,
    build_mlp_graph,
    build_nanogpt_graph,
    init_mlp_weights,
    init_nanogpt_weights,
    model_commitment,
    write_weights,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", choices=("gpt", "mlp"), default="gpt")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out-dir", required=True)
    args = ap.parse_args()

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed + 1)

    if args.kind == "gpt":
        quant = QuantConfig(7, 20)
        cfg = NanoGptConfig(65, 4, 2, 4, 32)
        g = build_nanogpt_graph(cfg, quant)
        weights = init_nanogpt_weights(cfg, quant, seed=args.seed)
        inputs = {"tok": rng.integers(0, cfg.vocab, cfg.block).tolist()}
    else:
        quant = QuantConfig(7, 16)
        cfg = MlpConfig(32, 2)
        g = build_mlp_graph(cfg)
        weights = init_mlp_weights(cfg, quant, seed=args.seed)
        inputs = {"x": rng.normal(0.0, 0.5, cfg.width).tolist()}

    gt = graph_to_text(g)
    (out / "model.graph").write_text(gt)
    write_weights(out / "model.gpwt", weights)
    (out / "inputs.json").write_text(json.dumps(inputs))

    print(f"wrote {out}/model.graph {out}/model.gpwt {out}/inputs.json")
    print(f"quant flag:  --quant {quant.scale_bits},{quant.lookup_bits}")
    print(f"commitment:  {model_commitment(gt, weights, quant).hex()}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
