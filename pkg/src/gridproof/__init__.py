"""Verifiable quantized inference: graphs -> cell matrices -> spot-check proofs."""

from gridproof.field import PRIME, QuantConfig, build_lookup, quantize, dequantize

__all__ = ["PRIME", "QuantConfig", "build_lookup", "quantize", "dequantize"]
