"""Dense 3D scalar volumes, binary masks, rigid transforms, and resampling.

Arrays are indexed (x, y, z) with axis 0 the x axis.  On disk the payload is
stored x-fastest (Fortran order), little-endian f32, next to a small JSON
sidecar header.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

_SAMPLE_CHUNK = 1 << 17


@dataclass(frozen=True)
class Volume:
    """A dense 3D scalar grid with voxel spacing."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be 3D and non-empty, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.isfinite(data).all():
            raise ValueError("volume contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def center(self) -> np.ndarray:
        """Geometric center in voxel coordinates, ((nx-1)/2, ...)."""
        return (np.array(self.dims, dtype=np.float64) - 1.0) / 2.0


@dataclass(frozen=True)
class Mask:
    """Binary valid-voxel indicator on the same lattice as a Volume."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.dtype != np.bool_:
            bits = bits != 0
        if bits.ndim != 3:
            raise ValueError(f"mask must be 3D, got shape {bits.shape}")
        if not bits.any():
            raise ValueError("mask is empty (no voxels set)")
        object.__setattr__(self, "bits", bits)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())


def full_mask(dims) -> Mask:
    return Mask(np.ones(tuple(dims), dtype=bool))


def _norm_angle(a: float) -> float:
    """Wrap an angle in degrees to [-180, 180)."""
    return float((a + 180.0) % 360.0 - 180.0)


@dataclass(frozen=True)
class RigidTransform:
    """Rigid map of voxel coordinates: p -> R @ (p + t - c) + c.

    The translation is applied before the rotation, so a displacement found
    on the voxel lattice of a rotated image carries over unchanged.  Angles
    are intrinsic Euler: rotation about x, then the resulting y, then the
    resulting z axis, in degrees.
    """

    euler_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation_vx: tuple[float, float, float] = (0.0, 0.0, 0.0)
    center_vx: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(
            self, "euler_deg", tuple(_norm_angle(a) for a in self.euler_deg)
        )
        object.__setattr__(
            self, "translation_vx", tuple(float(t) for t in self.translation_vx)
        )
        object.__setattr__(self, "center_vx", tuple(float(c) for c in self.center_vx))

    @classmethod
    def identity(cls, center=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(center_vx=tuple(center))

    def rotation_matrix(self) -> np.ndarray:
        return Rotation.from_euler("XYZ", self.euler_deg, degrees=True).as_matrix()

    def map_points(self, pts: np.ndarray) -> np.ndarray:
        """Apply the transform to an (..., 3) array of points."""
        pts = np.asarray(pts, dtype=np.float64)
        t = np.array(self.translation_vx)
        c = np.array(self.center_vx)
        return (pts + t - c) @ self.rotation_matrix().T + c

    def inverse(self) -> "RigidTransform":
        r = Rotation.from_euler("XYZ", self.euler_deg, degrees=True)
        inv = r.inv()
        t_inv = -r.apply(np.array(self.translation_vx))
        return RigidTransform(
            tuple(inv.as_euler("XYZ", degrees=True)),
            tuple(t_inv),
            self.center_vx,
        )


# ---------------------------------------------------------------------------
# File I/O: JSON sidecar header + little-endian raw payloads.

def load_volume(path) -> tuple[Volume, Mask]:
    """Load a volume (and its mask, all-ones if absent) from a header file."""
    path = Path(path)
    header = json.loads(path.read_text())
    dims = tuple(int(d) for d in header["dims"])
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"bad dims in header: {dims}")
    if header.get("dtype", "f32") != "f32":
        raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
    if header.get("order", "x-fastest") != "x-fastest":
        raise ValueError(f"unsupported order {header.get('order')!r}")
    spacing = tuple(header.get("spacing", (1.0, 1.0, 1.0)))
    n = dims[0] * dims[1] * dims[2]

    raw = np.fromfile(path.parent / header["data"], dtype="<f4")
    if raw.size != n:
        raise ValueError(
            f"payload size mismatch: header dims {dims} imply {n} values, got {raw.size}"
        )
    data = raw.reshape(dims, order="F")
    if not np.isfinite(data).all():
        raise ValueError("NaN or Inf in volume payload")

    if "mask" in header and header["mask"]:
        mraw = np.fromfile(path.parent / header["mask"], dtype=np.uint8)
        if mraw.size != n:
            raise ValueError(
                f"payload size mismatch: mask has {mraw.size} bytes, expected {n}"
            )
        mask = Mask(mraw.reshape(dims, order="F") != 0)
    else:
        mask = full_mask(dims)
    return Volume(data, spacing), mask


def save_volume(v: Volume, m: Mask | None, path) -> None:
    """Write a volume (and optional mask) in the sidecar format."""
    path = Path(path)
    if m is not None and m.dims != v.dims:
        raise ValueError(f"mask dims {m.dims} do not match volume dims {v.dims}")
    data_name = path.stem + ".raw"
    header = {
        "dims": list(v.dims),
        "dtype": "f32",
        "order": "x-fastest",
        "spacing": list(v.spacing),
        "data": data_name,
    }
    if m is not None:
        mask_name = path.stem + ".mask.raw"
        header["mask"] = mask_name
        m.bits.astype(np.uint8).ravel(order="F").tofile(path.parent / mask_name)
    v.data.astype("<f4").ravel(order="F").tofile(path.parent / data_name)
    path.write_text(json.dumps(header, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Smoothing and downsampling.

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian of radius ceil(3*sigma), renormalized to sum 1."""
    r = math.ceil(3.0 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(v: Volume, sigma: float) -> Volume:
    """Separable Gaussian smoothing with edge replication at the borders."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return v
    k = gaussian_kernel(sigma)
    out = v.data.astype(np.float64)
    for ax in range(3):
        out = ndimage.correlate1d(out, k, axis=ax, mode="nearest")
    return Volume(out, v.spacing)


def _block_reduce_sum(a: np.ndarray, out_dims, f: int) -> np.ndarray:
    padded = np.zeros(tuple(o * f for o in out_dims), dtype=np.float64)
    padded[: a.shape[0], : a.shape[1], : a.shape[2]] = a
    ox, oy, oz = out_dims
    return padded.reshape(ox, f, oy, f, oz, f).sum(axis=(1, 3, 5))


def downsample(v: Volume, m: Mask, factor: int) -> tuple[Volume, Mask]:
    """Masked block-mean downsampling by an integer factor.

    Output value is the mean over the masked voxels of each factor^3 block;
    the output mask bit is set iff at least half the block's (in-grid) voxels
    are masked.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if m.dims != v.dims:
        raise ValueError("mask dims do not match volume dims")
    if factor == 1:
        return v, m
    out_dims = tuple(-(-d // factor) for d in v.dims)
    bits = m.bits.astype(np.float64)
    wsum = _block_reduce_sum(v.data * m.bits, out_dims, factor)
    cnt = _block_reduce_sum(bits, out_dims, factor)
    occ = _block_reduce_sum(np.ones(v.dims), out_dims, factor)
    with np.errstate(invalid="ignore"):
        vals = np.where(cnt > 0, wsum / np.maximum(cnt, 1.0), 0.0)
    out_bits = 2.0 * cnt >= occ
    spacing = tuple(s * factor for s in v.spacing)
    return Volume(vals, spacing), Mask(out_bits)


# ---------------------------------------------------------------------------
# Interpolation and rigid warping.

def _snap_near_integers(pts):
    """Collapse coordinates within 1e-9 of a lattice point onto it.

    Rotation matrices built from trigonometry carry ~1e-16 roundoff; without
    snapping an exact 90-degree rotation would sample just off-lattice and
    lose validity at the grid border.
    """
    r = np.rint(pts)
    return np.where(np.abs(pts - r) < 1e-9, r, pts)


def _sample_trilinear(data, bits, pts):
    """Vectorized trilinear sampling; returns (values, valid) for (N,3) pts.

    Values are the full 8-corner blend whenever the point is geometrically
    inside the grid (mask only affects validity); out-of-grid samples are
    zero-filled.
    """
    pts = _snap_near_integers(np.asarray(pts, dtype=np.float64))
    dims = np.array(data.shape)
    i0 = np.floor(pts).astype(np.int64)
    frac = pts - i0
    i1 = i0 + (frac > 0)
    geo = (i0 >= 0).all(axis=1) & (i1 <= dims - 1).all(axis=1)
    valid = geo.copy()
    i0c = np.clip(i0, 0, dims - 1)
    i1c = np.clip(i1, 0, dims - 1)
    vals = np.zeros(len(pts), dtype=np.float64)
    for cx, cy, cz in product((0, 1), repeat=3):
        ix = (i1c if cx else i0c)[:, 0]
        iy = (i1c if cy else i0c)[:, 1]
        iz = (i1c if cz else i0c)[:, 2]
        w = (
            (frac[:, 0] if cx else 1.0 - frac[:, 0])
            * (frac[:, 1] if cy else 1.0 - frac[:, 1])
            * (frac[:, 2] if cz else 1.0 - frac[:, 2])
        )
        vals += w * data[ix, iy, iz]
        valid &= bits[ix, iy, iz]
    vals[~geo] = 0.0
    return vals, valid


def _catmull_rom_weights(t):
    """Catmull-Rom basis for the 4 nodes around t in [0, 1)."""
    t2 = t * t
    t3 = t2 * t
    return (
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    )


def _sample_tricubic(data, bits, pts):
    """Vectorized Catmull-Rom sampling with a 4^3 support per point.

    A sample is valid iff every support voxel with nonzero weight lies inside
    the grid and is masked.
    """
    pts = _snap_near_integers(np.asarray(pts, dtype=np.float64))
    dims = np.array(data.shape)
    i0 = np.floor(pts).astype(np.int64)
    frac = pts - i0
    w_axis = [np.stack(_catmull_rom_weights(frac[:, ax]), axis=1) for ax in range(3)]
    idx_axis = []
    ok_axis = []
    for ax in range(3):
        nodes = i0[:, ax, None] + np.arange(-1, 3)[None, :]
        ok_axis.append((nodes >= 0) & (nodes <= dims[ax] - 1))
        idx_axis.append(np.clip(nodes, 0, dims[ax] - 1))
    vals = np.zeros(len(pts), dtype=np.float64)
    valid = np.ones(len(pts), dtype=bool)
    geo = np.ones(len(pts), dtype=bool)
    for kx, ky, kz in product(range(4), repeat=3):
        w = w_axis[0][:, kx] * w_axis[1][:, ky] * w_axis[2][:, kz]
        ix, iy, iz = idx_axis[0][:, kx], idx_axis[1][:, ky], idx_axis[2][:, kz]
        inb = ok_axis[0][:, kx] & ok_axis[1][:, ky] & ok_axis[2][:, kz]
        needed = w != 0.0
        geo &= inb | ~needed
        valid &= (inb & bits[ix, iy, iz]) | ~needed
        vals += np.where(inb, w * data[ix, iy, iz], 0.0)
    vals[~geo] = 0.0
    return vals, valid


def trilinear_sample(v: Volume, m: Mask, p) -> tuple[float, bool]:
    """Sample at a continuous voxel coordinate; invalid outside grid/mask."""
    vals, valid = _sample_trilinear(v.data, m.bits, np.atleast_2d(np.asarray(p, float)))
    return float(vals[0]), bool(valid[0])


_SAMPLERS = {"trilinear": _sample_trilinear, "tricubic": _sample_tricubic}


def apply_rigid(
    v: Volume, m: Mask, transform: RigidTransform, interp: str = "trilinear"
) -> tuple[Volume, Mask]:
    """Warp a volume by a rigid transform using inverse mapping.

    Output voxel x takes the value sampled at transform(x); its mask bit is
    set iff the sample was valid.  Invalid voxels are zero-filled.
    """
    if interp not in _SAMPLERS:
        raise ValueError(f"unknown interpolation {interp!r}")
    sampler = _SAMPLERS[interp]
    dims = v.dims
    grid = np.stack(
        np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij"),
        axis=-1,
    ).reshape(-1, 3)
    out = np.empty(grid.shape[0], dtype=np.float64)
    valid = np.empty(grid.shape[0], dtype=bool)
    for start in range(0, grid.shape[0], _SAMPLE_CHUNK):
        sl = slice(start, start + _SAMPLE_CHUNK)
        pts = transform.map_points(grid[sl])
        out[sl], valid[sl] = sampler(v.data, m.bits, pts)
    data = out.reshape(dims).astype(v.data.dtype)
    return Volume(data, v.spacing), Mask(valid.reshape(dims))
