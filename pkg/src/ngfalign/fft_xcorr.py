"""Real-input frequency-domain cross-correlation of 3D grids.

The correlation convention is fixed by the direct sum:

    CC(f, g)(chi) = sum_x f(x) * g(x + chi)

computed as irfftn(conj(F) * G) on a zero-padded grid and re-windowed onto
the displacement lattice chi in [-(dims_g - 1), dims_f - 1] per axis.  The
padded size is at least 2*max(dims_f, dims_g) - 1 per axis so every lattice
entry is free of circular aliasing even for mismatched grid sizes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

_count_lock = threading.Lock()
_counts = {"forward": 0, "inverse": 0}


def reset_transform_counts() -> None:
    with _count_lock:
        _counts["forward"] = 0
        _counts["inverse"] = 0


def transform_counts() -> dict[str, int]:
    with _count_lock:
        return dict(_counts)


def _bump(kind: str) -> None:
    with _count_lock:
        _counts[kind] += 1


@dataclass(frozen=True)
class Spectrum:
    """Real-to-complex transform of a zero-padded grid."""

    coeffs: np.ndarray
    grid_dims: tuple[int, int, int]
    padded_dims: tuple[int, int, int]


@dataclass(frozen=True)
class CorrelationGrid:
    """Correlation values over the displacement lattice.

    values[i] holds CC at chi = i - origin (per axis); origin = dims_g - 1.
    """

    values: np.ndarray
    origin: tuple[int, int, int]


def padded_dims_for(dims_a, dims_b) -> tuple[int, int, int]:
    """Smallest efficient transform size covering the full linear correlation."""
    return tuple(
        sfft.next_fast_len(2 * max(a, b) - 1, real=True)
        for a, b in zip(dims_a, dims_b)
    )


def forward(f: np.ndarray, padded_dims) -> Spectrum:
    """Real FFT of the grid zero-padded to padded_dims."""
    f = np.asarray(f, dtype=np.float64)
    padded_dims = tuple(int(p) for p in padded_dims)
    if any(p < d for p, d in zip(padded_dims, f.shape)):
        raise ValueError(f"padded dims {padded_dims} smaller than grid {f.shape}")
    coeffs = sfft.rfftn(f, s=padded_dims)
    _bump("forward")
    return Spectrum(coeffs, f.shape, padded_dims)


def _crop_to_lattice(full, dims_f, dims_g) -> CorrelationGrid:
    origin = tuple(g - 1 for g in dims_g)
    lattice = tuple(a + g - 1 for a, g in zip(dims_f, dims_g))
    rolled = np.roll(full, shift=origin, axis=(0, 1, 2))
    return CorrelationGrid(
        np.ascontiguousarray(rolled[: lattice[0], : lattice[1], : lattice[2]]), origin
    )


def correlate(f_spec: Spectrum, g_spec: Spectrum) -> CorrelationGrid:
    """Cross-correlation of two grids from their cached spectra."""
    if f_spec.padded_dims != g_spec.padded_dims:
        raise ValueError(
            f"padded dims mismatch: {f_spec.padded_dims} vs {g_spec.padded_dims}"
        )
    cross = np.conj(f_spec.coeffs) * g_spec.coeffs
    full = sfft.irfftn(cross, s=f_spec.padded_dims)
    _bump("inverse")
    return _crop_to_lattice(full, f_spec.grid_dims, g_spec.grid_dims)


def accumulate_correlate(pairs, weights) -> CorrelationGrid:
    """Weighted sum of correlations, accumulated in the frequency domain.

    Performs a single inverse transform for the whole sum.
    """
    pairs = list(pairs)
    weights = list(weights)
    if not pairs:
        raise ValueError("accumulate_correlate needs at least one spectrum pair")
    if len(weights) != len(pairs):
        raise ValueError("one weight per pair required")
    f0, g0 = pairs[0]
    acc = np.zeros_like(f0.coeffs)
    for (f_spec, g_spec), w in zip(pairs, weights):
        if f_spec.padded_dims != f0.padded_dims or g_spec.padded_dims != f0.padded_dims:
            raise ValueError("all spectra must share padded dims")
        if f_spec.grid_dims != f0.grid_dims or g_spec.grid_dims != g0.grid_dims:
            raise ValueError("all spectra must share grid dims")
        acc += w * np.conj(f_spec.coeffs) * g_spec.coeffs
    full = sfft.irfftn(acc, s=f0.padded_dims)
    _bump("inverse")
    return _crop_to_lattice(full, f0.grid_dims, g0.grid_dims)
