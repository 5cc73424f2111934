"""Tensor, layer and network primitives."""
