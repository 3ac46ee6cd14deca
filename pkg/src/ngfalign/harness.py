"""Synthetic evaluation harness: phantoms, displaced trials, metrics, bench.

Phantom pairs share one blob-label geometry but are rendered with unrelated
(partially contrast-inverted) intensity tables, standing in for real
multimodal data.  Trials warp one rendering by a known rigid transform and
crop a central block; recovery quality is the mean corner displacement d_E.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np

from .ngf import NgfConfig, gradient, normalize
from .simmap import SQUARED, UNSQUARED, csngf_map_direct, csngf_map_fft
from .search import PyramidConfig, SearchConfig, global_search, scaled_schedule
from .volume import Mask, RigidTransform, Volume, apply_rigid, full_mask, gaussian_smooth

SUCCESS_THRESHOLD_VX = 5.0
CURVE_MAX_VX = 20.0
CURVE_STEP_VX = 0.25

VARIANTS = ("squared", "unsquared", "unsquared-inverted")


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for one synthetic multimodal pair."""

    dims: tuple[int, int, int] = (96, 96, 96)
    n_blobs: int = 25
    blob_radius: tuple[float, float] = (6.0, 16.0)
    intensity_a: tuple[float, ...] = (0.0, 0.35, 0.65, 1.0)
    intensity_b: tuple[float, ...] = (0.1, 0.95, 0.25, 0.8)
    noise_sigma: float = 0.02
    smooth_a: float = 1.0
    smooth_b: float = 1.0
    nonlin_exponent_a: float | None = None
    nonlin_exponent_b: float | None = None
    seed: int = 0

    def __post_init__(self):
        if len(self.intensity_a) != len(self.intensity_b):
            raise ValueError("intensity tables must cover the same labels")
        if len(self.intensity_a) < 2:
            raise ValueError("need at least 2 labels")
        for tab in (self.intensity_a, self.intensity_b):
            if len(set(tab)) != len(tab):
                raise ValueError(f"intensity table not injective: {tab}")


def _render(labels, table, smooth, exponent, noise, rng):
    v = np.asarray(table, dtype=np.float64)[labels]
    if exponent is not None:
        lo, hi = v.min(), v.max()
        if hi > lo:
            v = ((v - lo) / (hi - lo)) ** exponent * (hi - lo) + lo
    if smooth > 0:
        v = gaussian_smooth(Volume(v), smooth).data
    if noise > 0:
        v = v + rng.normal(0.0, noise, v.shape)
    return Volume(v)


def gen_phantom_pair(spec: PhantomSpec) -> tuple[Volume, Volume]:
    """Two renderings of one random blob geometry."""
    rng = np.random.default_rng(spec.seed)
    dims = np.array(spec.dims)
    labels = np.zeros(spec.dims, dtype=np.int64)
    grid = np.stack(
        np.meshgrid(*(np.arange(d, dtype=np.float64) for d in spec.dims), indexing="ij"),
        axis=-1,
    )
    n_labels = len(spec.intensity_a)
    for _ in range(spec.n_blobs):
        center = rng.uniform(np.zeros(3), dims - 1.0)
        radius = rng.uniform(*spec.blob_radius)
        label = int(rng.integers(1, n_labels))
        inside = ((grid - center) ** 2).sum(axis=-1) < radius**2
        labels[inside] = label
    a = _render(labels, spec.intensity_a, spec.smooth_a, spec.nonlin_exponent_a,
                spec.noise_sigma, rng)
    b = _render(labels, spec.intensity_b, spec.smooth_b, spec.nonlin_exponent_b,
                spec.noise_sigma, rng)
    return a, b


@dataclass(frozen=True)
class TrialSpec:
    """Recipe for one displaced alignment task."""

    rot_range_deg: float = 30.0
    shift_range_vx: float = 15.0
    block_dims: tuple[int, int, int] = (64, 64, 64)
    interp: str = "tricubic"
    seed: int = 0


def _crop_center(arr, block):
    offsets = tuple((d - b) // 2 for d, b in zip(arr.shape, block))
    slices = tuple(slice(o, o + b) for o, b in zip(offsets, block))
    return arr[slices], offsets


def make_trial(
    a: Volume, b: Volume, tspec: TrialSpec
) -> tuple[tuple[Volume, Mask], tuple[Volume, Mask], RigidTransform]:
    """Warp A by a random rigid transform, crop both; returns the cropped pair
    and the ground truth expressed in the cropped coordinate frame."""
    if any(bd > d for bd, d in zip(tspec.block_dims, a.dims)):
        raise ValueError(
            f"block {tspec.block_dims} does not fit inside volume {a.dims}"
        )
    rng = np.random.default_rng(tspec.seed)
    euler = tuple(rng.uniform(-tspec.rot_range_deg, tspec.rot_range_deg, 3))
    shift = tuple(rng.uniform(-tspec.shift_range_vx, tspec.shift_range_vx, 3))
    center0 = tuple(a.center())
    t0 = RigidTransform(euler, shift, center0)
    ref_full, ref_mask_full = apply_rigid(a, full_mask(a.dims), t0, tspec.interp)

    ref_data, offsets = _crop_center(ref_full.data, tspec.block_dims)
    ref_bits, _ = _crop_center(ref_mask_full.bits, tspec.block_dims)
    flo_data, _ = _crop_center(b.data, tspec.block_dims)
    ref = (Volume(ref_data.copy(), a.spacing), Mask(ref_bits.copy()))
    flo = (Volume(flo_data.copy(), b.spacing), full_mask(tspec.block_dims))
    gt = RigidTransform(
        t0.euler_deg, t0.translation_vx, tuple(c - o for c, o in zip(center0, offsets))
    )
    return ref, flo, gt


def corner_error(t_gt: RigidTransform, t_rec: RigidTransform, block_dims) -> float:
    """Mean Euclidean distance between block corners mapped by both transforms."""
    corners = np.array(
        [p for p in product(*[(0.0, float(n - 1)) for n in block_dims])]
    )
    d = np.linalg.norm(t_gt.map_points(corners) - t_rec.map_points(corners), axis=1)
    return float(d.mean())


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    variant: str
    gt: RigidTransform
    recovered: RigidTransform
    d_e: float
    success: bool
    time_s: float


def derive_seed(*keys) -> int:
    """Stable 64-bit seed from a tuple of integer keys."""
    state = np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]).generate_state(2)
    return int(state[0]) | (int(state[1]) << 32)


def variant_config(base: SearchConfig, variant: str) -> SearchConfig:
    if variant == "squared":
        return replace(base, measure=SQUARED, invert_floating=False)
    if variant == "unsquared":
        return replace(base, measure=UNSQUARED, invert_floating=False)
    if variant == "unsquared-inverted":
        return replace(base, measure=UNSQUARED, invert_floating=True)
    raise ValueError(f"unknown variant {variant!r}")


def run_single_trial(
    trial_index: int,
    master_seed: int,
    pspec: PhantomSpec,
    tspec: TrialSpec,
    pcfg: PyramidConfig,
    base_cfg: SearchConfig,
    variants=("squared",),
) -> list[TrialRecord]:
    """Generate one displaced phantom pair and align it with each variant."""
    pseed = derive_seed(master_seed, trial_index, 0)
    tseed = derive_seed(master_seed, trial_index, 1)
    a, b = gen_phantom_pair(replace(pspec, seed=pseed))
    (ref_v, ref_m), (flo_v, flo_m), gt = make_trial(a, b, replace(tspec, seed=tseed))
    records = []
    for vi, variant in enumerate(variants):
        cfg = variant_config(base_cfg, variant)
        cfg = replace(cfg, rng_seed=derive_seed(master_seed, trial_index, 2, vi))
        t0 = time.perf_counter()
        result = global_search(ref_v, ref_m, flo_v, flo_m, pcfg, cfg)
        elapsed = time.perf_counter() - t0
        d_e = corner_error(gt, result.transform, tspec.block_dims)
        records.append(
            TrialRecord(
                trial=trial_index,
                seed=master_seed,
                variant=variant,
                gt=gt,
                recovered=result.transform,
                d_e=d_e,
                success=d_e < SUCCESS_THRESHOLD_VX,
                time_s=elapsed,
            )
        )
    return records


def run_trials(
    n: int,
    pspec: PhantomSpec,
    tspec: TrialSpec,
    pcfg: PyramidConfig | None = None,
    base_cfg: SearchConfig = SearchConfig(),
    variants=("squared",),
    master_seed: int = 0,
) -> list[TrialRecord]:
    if n < 1:
        raise ValueError("need at least one trial")
    if pcfg is None:
        pcfg = scaled_schedule(tspec.block_dims)
    records = []
    for i in range(n):
        records.extend(
            run_single_trial(i, master_seed, pspec, tspec, pcfg, base_cfg, variants)
        )
    return records


def success_rate(records, threshold: float = SUCCESS_THRESHOLD_VX) -> dict[str, float]:
    """Fraction of trials per variant with d_E below the threshold."""
    out = {}
    for variant in sorted({r.variant for r in records}):
        rs = [r for r in records if r.variant == variant]
        out[variant] = sum(r.d_e < threshold for r in rs) / len(rs)
    return out


def cumulative_curve(records):
    """Success fraction per variant as a function of the error threshold t."""
    ts = np.arange(CURVE_STEP_VX, CURVE_MAX_VX + CURVE_STEP_VX / 2, CURVE_STEP_VX)
    variants = sorted({r.variant for r in records})
    curves = {}
    for variant in variants:
        errs = np.array([r.d_e for r in records if r.variant == variant])
        curves[variant] = np.array([(errs < t).mean() for t in ts])
    return ts, curves


def write_trials_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "trial", "seed", "variant",
                "gt_euler_x", "gt_euler_y", "gt_euler_z",
                "gt_shift_x", "gt_shift_y", "gt_shift_z",
                "rec_euler_x", "rec_euler_y", "rec_euler_z",
                "rec_shift_x", "rec_shift_y", "rec_shift_z",
                "d_E", "success", "time_s",
            ]
        )
        for r in records:
            w.writerow(
                [r.trial, r.seed, r.variant]
                + [repr(v) for v in r.gt.euler_deg]
                + [repr(v) for v in r.gt.translation_vx]
                + [repr(v) for v in r.recovered.euler_deg]
                + [repr(v) for v in r.recovered.translation_vx]
                + [repr(r.d_e), int(r.success), f"{r.time_s:.3f}"]
            )


def write_cumulative_csv(records, path) -> None:
    ts, curves = cumulative_curve(records)
    variants = sorted(curves)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"fraction_{v}" for v in variants])
        for i, t in enumerate(ts):
            w.writerow([repr(float(t))] + [repr(float(curves[v][i])) for v in variants])


# ---------------------------------------------------------------------------
# FFT vs direct runtime benchmark.

DIRECT_SIZE_CAP = 64


def _random_ngf_pair(size: int, seed: int):
    rng = np.random.default_rng(seed)
    cfg = NgfConfig()
    fields = []
    for _ in range(2):
        v = gaussian_smooth(Volume(rng.normal(0, 1, (size, size, size))), 1.0)
        fields.append(normalize(gradient(v, full_mask(v.dims)), cfg))
    return fields[0], fields[1], full_mask((size,) * 3), full_mask((size,) * 3)


def bench_oracle(
    sizes,
    repeats: int = 3,
    gamma: float = 0.5,
    seed: int = 0,
    direct_repeats: int | None = None,
):
    """Median runtimes of the FFT map vs the direct nested-loop map.

    direct_repeats defaults to repeats; lowering it keeps large-size runs
    tractable since the direct method dominates the wall time.  Returns a
    list of (size, t_direct_s, t_fft_s, ratio) rows.
    """
    for size in sizes:
        if size > DIRECT_SIZE_CAP:
            raise ValueError(
                f"size {size} exceeds the direct-method cap {DIRECT_SIZE_CAP}"
            )
    if direct_repeats is None:
        direct_repeats = repeats
    # Trigger JIT compilation outside the timed region.
    wa, wb, wma, wmb = _random_ngf_pair(4, seed)
    csngf_map_direct(wa, wma, wb, wmb, gamma)
    rows = []
    for size in sizes:
        a, b, ma, mb = _random_ngf_pair(size, derive_seed(seed, size))
        t_fft = []
        t_direct = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            csngf_map_fft(a, ma, b, mb, gamma)
            t_fft.append(time.perf_counter() - t0)
        for _ in range(direct_repeats):
            t0 = time.perf_counter()
            csngf_map_direct(a, ma, b, mb, gamma)
            t_direct.append(time.perf_counter() - t0)
        med_f = float(np.median(t_fft))
        med_d = float(np.median(t_direct))
        rows.append((size, med_d, med_f, med_d / med_f))
    return rows


def write_bench_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "t_direct_s", "t_fft_s", "ratio"])
        for size, td, tf, ratio in rows:
            w.writerow([size, repr(td), repr(tf), repr(ratio)])
