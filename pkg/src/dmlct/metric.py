"""Patch embeddings and the pull/push metric loss.

Positive pairs are embeddings of the same spatial location in the network input
and output; negatives are different locations of the same image, taken
separately for the input-side and output-side embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor


class DegenerateEmbeddingError(ValueError):
    pass


class PairingError(ValueError):
    pass


class EmptySetError(ValueError):
    pass


class CapacityError(ValueError):
    pass


NORM_EPS = 1e-12


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature tau must be > 0, got {tau}")


def normalize_rows(features):
    """L2-normalize along the last axis.

    Rows whose norm is below 1e-12 raise :class:`DegenerateEmbeddingError`
    instead of being clamped. Numpy input gives numpy output.
    """
    is_numpy = not isinstance(features, Tensor)
    f = _as_tensor(features)
    norms = f.norm(dim=-1, keepdim=True)
    bad = norms.detach() < NORM_EPS
    if bool(bad.any()):
        idx = torch.nonzero(bad.squeeze(-1)).tolist()
        raise DegenerateEmbeddingError(f"{len(idx)} embedding row(s) have norm < {NORM_EPS}: {idx[:5]}")
    out = f / norms
    return out.numpy() if is_numpy else out


def metric_distance(z, w, tau: float):
    """Squared euclidean distance over ``2 * tau``, along the last axis."""
    _check_tau(tau)
    is_numpy = not isinstance(z, Tensor) and not isinstance(w, Tensor)
    z, w = _as_tensor(z), _as_tensor(w)
    d = ((z - w) ** 2).sum(-1) / (2.0 * tau)
    if is_numpy:
        d = d.numpy()
        return float(d) if d.ndim == 0 else d
    return d


@dataclass(frozen=True)
class PairScheme:
    num_locations: int = 256
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_locations < 1:
            raise ValueError(f"num_locations must be >= 1, got {self.num_locations}")


def sample_anchor_locations(feat_shape, scheme: PairScheme) -> np.ndarray:
    """K unique (row, col) grid cells, uniform without replacement; shape (K, 2)."""
    h, w = feat_shape
    k = scheme.num_locations
    if k > h * w:
        raise CapacityError(f"cannot sample {k} unique locations from a {h}x{w} grid")
    rng = np.random.default_rng(scheme.rng_seed)
    flat = rng.choice(h * w, size=k, replace=False)
    return np.stack([flat // w, flat % w], axis=1).astype(np.int64)


@dataclass
class PatchEmbeddingSet:
    """K unit-norm embeddings (``vectors`` is K x D) at grid ``locations`` (K x 2)."""

    vectors: Tensor
    locations: np.ndarray
    depth_tag: int
    source_tag: str

    def __post_init__(self):
        self.vectors = _as_tensor(self.vectors)
        self.locations = np.asarray(self.locations, dtype=np.int64).reshape(-1, 2)
        if self.vectors.ndim != 2:
            raise ValueError(f"vectors must be K x D, got shape {tuple(self.vectors.shape)}")
        if self.vectors.shape[0] != len(self.locations):
            raise ValueError("vectors and locations disagree on K")
        if self.depth_tag not in (1, 2):
            raise ValueError(f"depth_tag must be 1 or 2, got {self.depth_tag}")
        if self.source_tag not in ("x", "y"):
            raise ValueError(f"source_tag must be 'x' or 'y', got {self.source_tag!r}")
        if len(np.unique(self.locations, axis=0)) != len(self.locations):
            raise ValueError("locations must be unique within a set")

    def __len__(self) -> int:
        return len(self.locations)

    def check_unit_norm(self, atol: float = 1e-5) -> None:
        norms = self.vectors.detach().norm(dim=-1)
        if not torch.allclose(norms, torch.ones_like(norms), atol=atol):
            raise DegenerateEmbeddingError("embedding vectors are not unit norm")


def _check_pair(z_set: PatchEmbeddingSet, w_set: PatchEmbeddingSet) -> None:
    if len(z_set) == 0 or len(w_set) == 0:
        raise EmptySetError("metric loss needs at least one anchor")
    if len(z_set) != len(w_set):
        raise PairingError(f"sets have different K: {len(z_set)} vs {len(w_set)}")
    if z_set.depth_tag != w_set.depth_tag:
        raise PairingError("sets come from different feature depths")
    if not np.array_equal(z_set.locations, w_set.locations):
        raise PairingError("positive pairs must share identical locations in identical order")
    if z_set.vectors.shape[-1] != w_set.vectors.shape[-1]:
        raise PairingError("embedding dimensions differ")


def _offdiag_exp_mean(v: Tensor, tau: float) -> Tensor:
    k = v.shape[-2]
    if k < 2:
        return v.new_zeros(v.shape[:-2])
    sim = torch.exp(v @ v.transpose(-1, -2) / tau)
    mask = ~torch.eye(k, dtype=torch.bool, device=v.device)
    return (sim * mask).sum((-1, -2)) / (k * (k - 1))


def metric_loss_tensor(z: Tensor, w: Tensor, tau: float) -> Tensor:
    """Batched metric loss on aligned unit embeddings of shape (..., K, D).

    Per item: -mean_k exp(z_k.w_k / tau) + mean_{j!=k} exp(z_k.z_j / tau)
    + mean_{j!=k} exp(w_k.w_j / tau); the result is averaged over leading dims.
    """
    _check_tau(tau)
    if z.shape != w.shape:
        raise PairingError(f"embedding shapes differ: {tuple(z.shape)} vs {tuple(w.shape)}")
    if z.shape[-2] == 0:
        raise EmptySetError("metric loss needs at least one anchor")
    pos = torch.exp((z * w).sum(-1) / tau).mean(-1)
    loss = -pos + _offdiag_exp_mean(z, tau) + _offdiag_exp_mean(w, tau)
    return loss.mean()


def metric_loss(z_set: PatchEmbeddingSet, w_set: PatchEmbeddingSet, tau: float) -> Tensor:
    _check_pair(z_set, w_set)
    return metric_loss_tensor(z_set.vectors, w_set.vectors, tau)


def _offdiag_exp_dist_mean(v: Tensor, tau: float) -> Tensor:
    k = v.shape[-2]
    if k < 2:
        return v.new_zeros(v.shape[:-2])
    sq = ((v.unsqueeze(-2) - v.unsqueeze(-3)) ** 2).sum(-1)
    mask = ~torch.eye(k, dtype=torch.bool, device=v.device)
    return (torch.exp(sq / (2.0 * tau)) * mask).sum((-1, -2)) / (k * (k - 1))


def metric_loss_eq2_variant(z_set: PatchEmbeddingSet, w_set: PatchEmbeddingSet, tau: float) -> Tensor:
    """Distance form: E[exp(d(z, w))] - E[exp(d(z, z'))] - E[exp(d(w, w'))].

    Kept for ablation only; it is not numerically equal to :func:`metric_loss`.
    """
    _check_pair(z_set, w_set)
    _check_tau(tau)
    z, w = z_set.vectors, w_set.vectors
    pos = torch.exp(metric_distance(z, w, tau)).mean(-1)
    return pos - _offdiag_exp_dist_mean(z, tau) - _offdiag_exp_dist_mean(w, tau)
