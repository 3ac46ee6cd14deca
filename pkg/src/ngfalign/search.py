"""Global rigid alignment: multi-resolution random rotation search.

Each pyramid level smooths (at original resolution) and downsamples both
images, precomputes the reference-side spectra once, then scores a batch of
rotations: the retained starting points from the previous level plus random
perturbations around them.  Translations are re-estimated at every level as
the argmax of the similarity map, so only rotations propagate across levels.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ngf import NgfConfig, gradient, normalize
from .simmap import (
    SQUARED,
    UNSQUARED,
    NgfSpectra,
    argmax_displacement,
    map_from_spectra,
    ngf_spectra,
)
from .fft_xcorr import padded_dims_for
from .volume import (
    Mask,
    RigidTransform,
    Volume,
    apply_rigid,
    downsample,
    gaussian_smooth,
    _norm_angle,
)

DEFAULT_D = (4, 2, 2, 1)
DEFAULT_SIGMA = (5.0, 3.0, 2.0, 1.5)
DEFAULT_U = (180.0, 30.0, 10.0, 0.0)
DEFAULT_A = (5000, 3000, 300, 0)
DEFAULT_P = (1, 20, 3, 1)
# Reference volume size the default rotation-sample counts were tuned for.
REFERENCE_VOXELS = 151**3
A_FLOOR = (1500, 800, 500, 0)
# Retention for sub-reference volumes: noisier coarse scores need a wider
# surviving candidate set to keep the true basin alive across levels.
P_SMALL = (1, 20, 10, 3)

# Candidates closer than this on all three angles collapse into one slot.
_DISTINCT_DEG = 0.5


@dataclass(frozen=True)
class PyramidConfig:
    """Per-level schedule of the multi-resolution search."""

    levels: int = 4
    d: tuple[int, ...] = DEFAULT_D
    sigma: tuple[float, ...] = DEFAULT_SIGMA
    u: tuple[float, ...] = DEFAULT_U
    a: tuple[int, ...] = DEFAULT_A
    p: tuple[int, ...] = DEFAULT_P

    def __post_init__(self):
        for name in ("d", "sigma", "u", "a", "p"):
            vec = getattr(self, name)
            if len(vec) != self.levels:
                raise ValueError(f"{name} must have length {self.levels}, got {len(vec)}")
        if any(f < 1 for f in self.d):
            raise ValueError("downsampling factors must be >= 1")
        if any(x < 0 for x in self.u) or any(x < 0 for x in self.a):
            raise ValueError("u and a entries must be >= 0")
        if any(x < 1 for x in self.p):
            raise ValueError("p entries must be >= 1")


def scaled_schedule(dims) -> PyramidConfig:
    """Default schedule with the rotation-sample counts scaled to volume size.

    The a-vector shrinks proportionally to voxels/151^3 with a fixed floor, so
    small volumes stay tractable while the schedule keeps its shape.  The
    floor is dominated by rotation-space coverage, which does not shrink with
    the volume; below reference size the retained-candidate counts also grow.
    """
    ratio = (dims[0] * dims[1] * dims[2]) / REFERENCE_VOXELS
    if ratio >= 1.0:
        return PyramidConfig()
    a = tuple(
        max(floor, round(base * ratio))
        for base, floor in zip(DEFAULT_A, A_FLOOR)
    )
    p = tuple(max(base, small) for base, small in zip(DEFAULT_P, P_SMALL))
    return PyramidConfig(a=a, p=p)


@dataclass(frozen=True)
class SearchConfig:
    gamma: float = 0.5
    epsilon: float = 1e-5
    measure: str = SQUARED
    invert_floating: bool = False
    rng_seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.measure not in (SQUARED, UNSQUARED):
            raise ValueError(f"unknown measure {self.measure!r}")


@dataclass(frozen=True)
class Candidate:
    euler_deg: tuple[float, float, float]
    chi: tuple[int, int, int]
    score: float
    level: int


@dataclass(frozen=True)
class SearchResult:
    transform: RigidTransform
    score: float
    history: tuple[tuple[Candidate, ...], ...]
    wall_time_s: float


@dataclass(frozen=True)
class LevelData:
    index: int
    ref_v: Volume
    ref_m: Mask
    flo_v: Volume
    flo_m: Mask
    ref_spectra: NgfSpectra
    padded_dims: tuple[int, int, int]
    ngf_cfg: NgfConfig
    gamma: float
    measure: str


def sample_rotation(base, u: float, rng: np.random.Generator):
    """Perturb a base rotation by independent uniform steps in [-u, u]."""
    if u < 0:
        raise ValueError(f"u must be >= 0, got {u}")
    r = rng.uniform(-u, u, size=3)
    return tuple(_norm_angle(b + step) for b, step in zip(base, r))


def _level_images(v: Volume, m: Mask, sigma: float, d: int):
    return downsample(gaussian_smooth(v, sigma), m, d)


def build_level(
    ref_v: Volume,
    ref_m: Mask,
    flo_v: Volume,
    flo_m: Mask,
    k: int,
    pcfg: PyramidConfig,
    scfg: SearchConfig,
) -> LevelData:
    """Smooth + downsample both images and cache the reference spectra."""
    rv, rm = _level_images(ref_v, ref_m, pcfg.sigma[k], pcfg.d[k])
    fv, fm = _level_images(flo_v, flo_m, pcfg.sigma[k], pcfg.d[k])
    if min(rv.dims) < 2 or min(fv.dims) < 2:
        raise ValueError(
            f"level {k}: downsampled dims {rv.dims}/{fv.dims} too small"
        )
    cfg = NgfConfig(scfg.epsilon)
    padded = padded_dims_for(rv.dims, fv.dims)
    ref_ngf = normalize(gradient(rv, rm), cfg)
    spectra = ngf_spectra(ref_ngf, rm, padded, scfg.measure)
    return LevelData(k, rv, rm, fv, fm, spectra, padded, cfg, scfg.gamma, scfg.measure)


def evaluate_rotation(level: LevelData, euler_deg, scfg: SearchConfig) -> Candidate:
    """Warp the floating level image by the rotation and optimize over chi."""
    t = RigidTransform(tuple(euler_deg), center_vx=tuple(level.flo_v.center()))
    wv, wm = apply_rigid(level.flo_v, level.flo_m, t, "trilinear")
    flo_ngf = normalize(gradient(wv, wm), level.ngf_cfg)
    flo_spectra = ngf_spectra(flo_ngf, wm, level.padded_dims, level.measure)
    smap = map_from_spectra(level.ref_spectra, flo_spectra, level.gamma)
    chi, score = argmax_displacement(smap)
    return Candidate(tuple(float(a) for a in euler_deg), chi, score, level.index)


def _angles_close(a, b) -> bool:
    return all(
        abs(_norm_angle(x - y)) < _DISTINCT_DEG for x, y in zip(a, b)
    )


def _dedupe(cands):
    kept = []
    for c in cands:
        if not any(_angles_close(c.euler_deg, k.euler_deg) for k in kept):
            kept.append(c)
    return kept


def global_search(
    ref_v: Volume,
    ref_m: Mask,
    flo_v: Volume,
    flo_m: Mask,
    pcfg: PyramidConfig,
    scfg: SearchConfig,
) -> SearchResult:
    """Coarse-to-fine random rotation search with exhaustive displacement maps."""
    t_start = time.perf_counter()
    if scfg.invert_floating:
        flo_v = Volume(-flo_v.data, flo_v.spacing)
    rng = np.random.default_rng(scfg.rng_seed)

    thetas: list[tuple[float, float, float]] = [(0.0, 0.0, 0.0)]
    history: list[tuple[Candidate, ...]] = []
    for k in range(pcfg.levels):
        level = build_level(ref_v, ref_m, flo_v, flo_m, k, pcfg, scfg)
        rotations = list(thetas)
        for _ in range(pcfg.a[k]):
            base = thetas[int(rng.integers(len(thetas)))]
            rotations.append(sample_rotation(base, pcfg.u[k], rng))

        def _eval(euler):
            try:
                return evaluate_rotation(level, euler, scfg)
            except ValueError:
                return None  # rotation left no valid displacement

        if scfg.threads > 1:
            with ThreadPoolExecutor(max_workers=scfg.threads) as pool:
                cands = list(pool.map(_eval, rotations))
        else:
            cands = [_eval(r) for r in rotations]
        cands = [c for c in cands if c is not None]
        if not cands:
            raise ValueError(f"level {k}: no rotation produced a valid displacement")
        cands.sort(key=lambda c: (-c.score, c.euler_deg))
        keep_n = pcfg.p[k + 1] if k + 1 < pcfg.levels else 1
        kept = _dedupe(cands)[:keep_n]
        history.append(tuple(kept))
        thetas = [c.euler_deg for c in kept]

    best = history[-1][0]
    d_last = pcfg.d[-1]
    # Conjugate the level-frame transform back to full resolution: a level
    # voxel x_L sits at d*x_L + (d-1)/2 in the original grid.
    half = (d_last - 1) / 2.0
    flo_last_dims = tuple(-(-dim // d_last) for dim in flo_v.dims)
    center = tuple(
        d_last * (n - 1) / 2.0 + half for n in flo_last_dims
    )
    translation = tuple(float(d_last * c) for c in best.chi)
    transform = RigidTransform(best.euler_deg, translation, center)
    return SearchResult(
        transform, best.score, tuple(history), time.perf_counter() - t_start
    )
