"""Normalized gradient fields and the pointwise/aggregate NGF similarities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Mask, Volume

DEFAULT_EPSILON = 1e-5


@dataclass(frozen=True)
class NgfConfig:
    """Regularization for gradient normalization."""

    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class VectorField:
    """Three scalar components per voxel, stored as one (3, nx, ny, nz) array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] != 3:
            raise ValueError(f"vector field must have shape (3, nx, ny, nz), got {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("vector field contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def norms(self) -> np.ndarray:
        return np.sqrt((self.data**2).sum(axis=0))


def _stencil_ok(bits: np.ndarray, axis: int) -> np.ndarray:
    """True where every voxel used by the difference stencil along axis is masked."""
    n = bits.shape[axis]
    ok = np.empty_like(bits)
    mid = [slice(None)] * 3
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    mid[axis] = slice(1, n - 1)
    lo[axis] = slice(0, n - 2)
    hi[axis] = slice(2, n)
    ok[tuple(mid)] = bits[tuple(lo)] & bits[tuple(hi)]
    first = [slice(None)] * 3
    second = [slice(None)] * 3
    first[axis] = 0
    second[axis] = 1
    ok[tuple(first)] = bits[tuple(first)] & bits[tuple(second)]
    first[axis] = n - 1
    second[axis] = n - 2
    ok[tuple(first)] = bits[tuple(first)] & bits[tuple(second)]
    return ok


def gradient(v: Volume, m: Mask) -> VectorField:
    """Central-difference gradient, one-sided at borders, zeroed at mask edges.

    The gradient is set to the zero vector at every voxel that is unmasked or
    whose stencil touches an unmasked voxel along any axis.
    """
    if min(v.dims) < 2:
        raise ValueError(f"gradient requires dims >= 2 on every axis, got {v.dims}")
    if m.dims != v.dims:
        raise ValueError("mask dims do not match volume dims")
    data = v.data.astype(np.float64)
    g = np.stack([np.gradient(data, axis=ax, edge_order=1) for ax in range(3)])
    ok = m.bits.copy()
    for ax in range(3):
        ok &= _stencil_ok(m.bits, ax)
    g *= ok
    return VectorField(g)


def normalize(g: VectorField, cfg: NgfConfig = NgfConfig()) -> VectorField:
    """Divide each vector by sqrt(|g|^2 + epsilon^2); zero maps to zero."""
    mag2 = (g.data**2).sum(axis=0)
    return VectorField(g.data / np.sqrt(mag2 + cfg.epsilon**2))


def sngf_point(a, b) -> float:
    """Squared dot-product similarity of two (normalized) gradient vectors."""
    return float(np.dot(a, b) ** 2)


def usngf_point(a, b) -> float:
    """Unsquared, sign-sensitive dot-product similarity."""
    return float(np.dot(a, b))


def angf(
    a: Volume,
    b: Volume,
    mask_a: Mask,
    mask_b: Mask,
    cfg: NgfConfig = NgfConfig(),
    squared: bool = True,
) -> float:
    """Average NGF similarity over the mask intersection at fixed alignment."""
    if not (a.dims == b.dims == mask_a.dims == mask_b.dims):
        raise ValueError("all inputs must share the same dims")
    both = mask_a.bits & mask_b.bits
    if not both.any():
        raise ValueError("mask intersection is empty")
    na = normalize(gradient(a, mask_a), cfg)
    nb = normalize(gradient(b, mask_b), cfg)
    dot = (na.data * nb.data).sum(axis=0)
    s = dot**2 if squared else dot
    return float(s[both].mean())
