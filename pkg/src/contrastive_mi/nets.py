"""MLP encoders that map data vectors to (optionally unit-norm) embeddings."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Linear:
    """Affine layer. Weights initialized uniform in +-1/sqrt(fan_in)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.w = Tensor(rng.uniform(-bound, bound, size=(in_dim, out_dim)), requires_grad=True)
        self.b = Tensor(rng.uniform(-bound, bound, size=out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


class MLPEncoder:
    """Stack of linear layers with ReLU between them, linear output.

    ``n_layers`` counts the linear layers. When ``l2_normalize`` is set the
    output rows are scaled to unit norm, so embeddings live on the sphere.
    """

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, n_layers: int,
                 rng: np.random.Generator, l2_normalize: bool = True):
        if n_layers < 1:
            raise ValueError("encoder needs at least one linear layer")
        dims = [in_dim] + [hidden_dim] * (n_layers - 1) + [out_dim]
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(n_layers)]
        self.l2_normalize = l2_normalize

    def forward(self, x) -> Tensor:
        """Encode a [B, in_dim] batch; accepts arrays or tensors."""
        h = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        if self.l2_normalize:
            h = ad.l2_normalize_rows(h)
        return h

    __call__ = forward

    def encode_array(self, x: np.ndarray) -> np.ndarray:
        """Encode without keeping the graph; returns a plain array."""
        return self.forward(Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))).data

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]
