"""CSNGF / USNGF displacement maps: FFT fast path and brute-force oracle.

The squared measure expands the squared dot-product of the two normalized
gradient fields into 6 separable component images per side (3 squares plus
3 cross products, the latter weighted 2 in the sum); the unsquared measure
uses the 3 raw components directly.  One map costs 14 forward transforms
(6 component grids + 1 mask per image) and 2 inverse transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .fft_xcorr import (
    CorrelationGrid,
    Spectrum,
    accumulate_correlate,
    correlate,
    forward,
    padded_dims_for,
)
from .ngf import VectorField
from .volume import Mask

SQUARED = "squared"
UNSQUARED = "unsquared"

_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
_SQUARED_WEIGHTS = (1.0, 1.0, 1.0, 2.0, 2.0, 2.0)

# Larger deviation of the mask correlation from an integer signals a
# misconfigured transform, not rounding noise.
_OVERLAP_INT_TOL = 1e-3


@dataclass(frozen=True)
class ComponentImages:
    """The 6 per-voxel products of masked NGF components."""

    grids: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class SimilarityMap:
    """Similarity and overlap count over the displacement lattice.

    score[i] applies to chi = i - origin; entries failing the minimum-overlap
    test carry NaN and valid=False.
    """

    score: np.ndarray
    overlap: np.ndarray
    valid: np.ndarray
    origin: tuple[int, int, int]
    gamma: float
    measure: str

    def chi_index(self, chi) -> tuple[int, int, int]:
        return tuple(int(c + o) for c, o in zip(chi, self.origin))

    def score_at(self, chi) -> float:
        return float(self.score[self.chi_index(chi)])

    def overlap_at(self, chi) -> int:
        return int(self.overlap[self.chi_index(chi)])


def masked_components(n: VectorField, m: Mask) -> np.ndarray:
    """NGF components with unmasked voxels zeroed, shape (3, nx, ny, nz)."""
    if n.dims != m.dims:
        raise ValueError("field dims do not match mask dims")
    return n.data * m.bits


def component_images(n: VectorField, m: Mask) -> ComponentImages:
    """Products n_i * n_j of the masked field for the 6 separable terms."""
    c = masked_components(n, m)
    return ComponentImages(tuple(c[i] * c[j] for i, j in _PAIRS))


@dataclass(frozen=True)
class NgfSpectra:
    """Cached spectra for one side of the correlation: term grids + mask."""

    terms: tuple[Spectrum, ...]
    mask: Spectrum
    measure: str


def ngf_spectra(n: VectorField, m: Mask, padded_dims, measure: str = SQUARED) -> NgfSpectra:
    """Forward-transform the term grids (6 or 3) and the mask of one image."""
    if measure == SQUARED:
        grids = component_images(n, m).grids
    elif measure == UNSQUARED:
        grids = tuple(masked_components(n, m))
    else:
        raise ValueError(f"unknown measure {measure!r}")
    terms = tuple(forward(g, padded_dims) for g in grids)
    mask_spec = forward(m.bits.astype(np.float64), padded_dims)
    return NgfSpectra(terms, mask_spec, measure)


def _overlap_from_correlation(ncc: CorrelationGrid) -> np.ndarray:
    rounded = np.rint(ncc.values)
    dev = np.abs(ncc.values - rounded).max()
    if dev > _OVERLAP_INT_TOL:
        raise RuntimeError(
            f"mask correlation deviates {dev:.2e} from integers; "
            "transform configuration is inconsistent"
        )
    return np.maximum(rounded, 0.0).astype(np.int64)


def _finish_map(num: np.ndarray, overlap: np.ndarray, origin, gamma, measure) -> SimilarityMap:
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    n_max = int(overlap.max())
    if n_max < 1:
        raise ValueError("masks never overlap on the displacement lattice")
    valid = (overlap >= gamma * n_max) & (overlap >= 1)
    if not valid.any():
        raise ValueError(f"no valid displacements for gamma={gamma}")
    score = np.full(num.shape, np.nan)
    score[valid] = num[valid] / overlap[valid]
    if measure == SQUARED:
        # the squared measure is a mean of squares; sub-roundoff negatives
        # from the transform are clamped to the analytic lower bound
        np.maximum(score, 0.0, out=score, where=valid)
    return SimilarityMap(score, overlap, valid, tuple(origin), float(gamma), measure)


def map_from_spectra(ref: NgfSpectra, flo: NgfSpectra, gamma: float = 0.5) -> SimilarityMap:
    """Similarity map from precomputed spectra; 2 inverse transforms total."""
    if ref.measure != flo.measure:
        raise ValueError("reference and floating spectra use different measures")
    weights = _SQUARED_WEIGHTS if ref.measure == SQUARED else (1.0, 1.0, 1.0)
    num = accumulate_correlate(list(zip(ref.terms, flo.terms)), weights)
    ncc = correlate(ref.mask, flo.mask)
    overlap = _overlap_from_correlation(ncc)
    return _finish_map(num.values, overlap, num.origin, gamma, ref.measure)


def csngf_map_fft(
    a_ngf: VectorField, mask_a: Mask, b_ngf: VectorField, mask_b: Mask, gamma: float = 0.5
) -> SimilarityMap:
    """Squared-measure map for all displacements via the 6-term FFT algorithm."""
    padded = padded_dims_for(a_ngf.dims, b_ngf.dims)
    ref = ngf_spectra(a_ngf, mask_a, padded, SQUARED)
    flo = ngf_spectra(b_ngf, mask_b, padded, SQUARED)
    return map_from_spectra(ref, flo, gamma)


def usngf_map_fft(
    a_ngf: VectorField, mask_a: Mask, b_ngf: VectorField, mask_b: Mask, gamma: float = 0.5
) -> SimilarityMap:
    """Unsquared (sign-sensitive) map via the 3-term FFT algorithm."""
    padded = padded_dims_for(a_ngf.dims, b_ngf.dims)
    ref = ngf_spectra(a_ngf, mask_a, padded, UNSQUARED)
    flo = ngf_spectra(b_ngf, mask_b, padded, UNSQUARED)
    return map_from_spectra(ref, flo, gamma)


@njit(cache=True, parallel=True)
def _direct_sums(a, ma, b, mb, squared):  # pragma: no cover - compiled
    nax, nay, naz = a.shape[1], a.shape[2], a.shape[3]
    nbx, nby, nbz = b.shape[1], b.shape[2], b.shape[3]
    lx, ly, lz = nax + nbx - 1, nay + nby - 1, naz + nbz - 1
    num = np.zeros((lx, ly, lz))
    cnt = np.zeros((lx, ly, lz), dtype=np.int64)
    for ix in prange(lx):
        cx = ix - (nbx - 1)
        x0 = max(0, -cx)
        x1 = min(nax - 1, nbx - 1 - cx)
        for iy in range(ly):
            cy = iy - (nby - 1)
            y0 = max(0, -cy)
            y1 = min(nay - 1, nby - 1 - cy)
            for iz in range(lz):
                cz = iz - (nbz - 1)
                z0 = max(0, -cz)
                z1 = min(naz - 1, nbz - 1 - cz)
                s = 0.0
                n = 0
                for x in range(x0, x1 + 1):
                    for y in range(y0, y1 + 1):
                        for z in range(z0, z1 + 1):
                            if ma[x, y, z] and mb[x + cx, y + cy, z + cz]:
                                d = (
                                    a[0, x, y, z] * b[0, x + cx, y + cy, z + cz]
                                    + a[1, x, y, z] * b[1, x + cx, y + cy, z + cz]
                                    + a[2, x, y, z] * b[2, x + cx, y + cy, z + cz]
                                )
                                if squared:
                                    s += d * d
                                else:
                                    s += d
                                n += 1
                num[ix, iy, iz] = s
                cnt[ix, iy, iz] = n
    return num, cnt


def csngf_map_direct(
    a_ngf: VectorField,
    mask_a: Mask,
    b_ngf: VectorField,
    mask_b: Mask,
    gamma: float = 0.5,
    measure: str = SQUARED,
) -> SimilarityMap:
    """Brute-force map: literal nested loop over all axis-aligned shifts.

    Computes the per-voxel dot product directly (no separable expansion), so
    it is an independent check of the FFT path.  Intended for small inputs.
    """
    if measure not in (SQUARED, UNSQUARED):
        raise ValueError(f"unknown measure {measure!r}")
    a = np.ascontiguousarray(masked_components(a_ngf, mask_a))
    b = np.ascontiguousarray(masked_components(b_ngf, mask_b))
    ma = np.ascontiguousarray(mask_a.bits.astype(np.uint8))
    mb = np.ascontiguousarray(mask_b.bits.astype(np.uint8))
    num, cnt = _direct_sums(a, ma, b, mb, measure == SQUARED)
    origin = tuple(d - 1 for d in b_ngf.dims)
    return _finish_map(num, cnt, origin, gamma, measure)


def argmax_displacement(smap: SimilarityMap) -> tuple[tuple[int, int, int], float]:
    """Best valid displacement; ties broken by lexicographically smallest chi."""
    if not smap.valid.any():
        raise ValueError("similarity map has no valid entries")
    scores = np.where(smap.valid, smap.score, -np.inf)
    best = scores.max()
    idx = np.argwhere(scores == best)[0]
    chi = tuple(int(i - o) for i, o in zip(idx, smap.origin))
    return chi, float(best)
