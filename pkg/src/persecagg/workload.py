"""Synthetic sparse client updates and index-overlap models.

Client gradients are drawn as ``mix_c @ label_means + noise``: every label
has its own mean gradient, and a client's mix of labels decides where its
large coordinates land.  Under ``iid`` all clients hold every label equally,
so their top-k supports agree up to noise; under ``dirichlet-skewed`` each
client's label mix is a Dirichlet draw and supports drift apart.
``uniform`` is pure noise (independent supports).
"""

from __future__ import annotations

import numpy as np

from . import ring
from .ring import MaskScope

OVERLAP_MODELS = ("uniform", "iid", "dirichlet-skewed")


def synthetic_gradients(
    n_clients: int,
    dim: int,
    model: str,
    rng: np.random.Generator,
    *,
    n_labels: int = 10,
    alpha: float = 0.5,
    noise: float = 0.5,
) -> np.ndarray:
    if model not in OVERLAP_MODELS:
        raise ValueError(f"overlap model must be one of {OVERLAP_MODELS}")
    if model == "uniform":
        return rng.normal(0.0, 1.0, (n_clients, dim))
    means = rng.normal(0.0, 1.0, (n_labels, dim))
    if model == "iid":
        mix = np.full((n_clients, n_labels), 1.0 / n_labels)
    else:
        mix = rng.dirichlet(np.full(n_labels, alpha), size=n_clients)
    return mix @ means + noise * rng.normal(0.0, 1.0, (n_clients, dim))


def top_k_support(grads: np.ndarray, keep: int) -> np.ndarray:
    """Boolean mask of each row's ``keep`` largest-magnitude entries."""
    support = np.zeros(grads.shape, dtype=bool)
    if keep > 0:
        top = np.argpartition(-np.abs(grads), keep - 1, axis=1)[:, :keep]
        np.put_along_axis(support, top, True, axis=1)
    return support


def make_updates(
    n_clients: int,
    dim: int,
    sparsity: float,
    rng: np.random.Generator,
    *,
    model: str = "uniform",
    scale: float = 0.01,
    frac_bits: int = ring.DEFAULT_FRAC_BITS,
    width: int = ring.DEFAULT_WIDTH,
    **model_kw,
) -> list[np.ndarray]:
    """Quantized sparse updates, one per client, each at the target sparsity."""
    if not 0 <= sparsity < 1:
        raise ValueError("sparsity must be in [0, 1)")
    grads = scale * synthetic_gradients(n_clients, dim, model, rng, **model_kw)
    out = []
    for g in grads:
        x = ring.sparsify(g, ring.sparsity_threshold(g, sparsity))
        out.append(ring.quantize(x, frac_bits, width, n_clients))
    return out


def scope_support(n_clients: int, scope: MaskScope, sparsity: float, model: str, rng, **model_kw) -> np.ndarray:
    """Support matrix (clients x scope positions) with exactly (1 - sparsity) * K' entries per client."""
    keep = int(round((1 - sparsity) * len(scope)))
    return top_k_support(synthetic_gradients(n_clients, len(scope), model, rng, **model_kw), keep)


def revealed_fraction(support: np.ndarray, t_prime: int) -> float:
    counts = support.sum(axis=0)
    return float(np.mean(counts >= t_prime)) if counts.size else 0.0
