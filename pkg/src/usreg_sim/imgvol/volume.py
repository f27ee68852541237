"""Volume and image containers with physical-space coordinate algebra.

A volume is a 3D array plus the geometry needed to place every voxel in
millimeter space: per-axis spacing, the physical position of voxel
(0, 0, 0), and three orthonormal axis direction vectors. Voxel (i, j, k)
sits at ``origin + i*s0*a0 + j*s1*a1 + k*s2*a2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .transform import ORTHO_TOL


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Volume3:
    """3D image with physical geometry. Immutable after construction.

    data : ndarray, shape (n0, n1, n2)
    spacing : mm per voxel along each array axis, all > 0
    origin : mm position of voxel (0, 0, 0)
    axes : 3x3, row i is the unit direction of array axis i; rows orthonormal
    """

    data: np.ndarray
    spacing: np.ndarray
    origin: np.ndarray
    axes: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got ndim={data.ndim}")
        spacing = np.asarray(self.spacing, dtype=np.float64)
        origin = np.asarray(self.origin, dtype=np.float64)
        axes = np.asarray(self.axes, dtype=np.float64)
        if spacing.shape != (3,) or origin.shape != (3,) or axes.shape != (3, 3):
            raise ValueError("spacing and origin must be 3-vectors, axes must be 3x3")
        if not np.all(spacing > 0):
            raise ValueError(f"spacing must be strictly positive, got {spacing}")
        if np.abs(axes @ axes.T - np.eye(3)).max() > 1e-7:
            raise ValueError("axis directions must be mutually orthogonal unit vectors")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _freeze(spacing))
        object.__setattr__(self, "origin", _freeze(origin))
        object.__setattr__(self, "axes", _freeze(axes))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @cached_property
    def _index_to_world(self) -> np.ndarray:
        # column i is spacing[i] * axes[i]; p = origin + M @ index
        return (self.axes.T * self.spacing).copy()


@dataclass(frozen=True)
class Image2:
    """2D image with per-axis pixel spacing in mm."""

    data: np.ndarray
    spacing: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"image data must be 2D, got ndim={data.ndim}")
        spacing = np.asarray(self.spacing, dtype=np.float64)
        if spacing.shape != (2,) or not np.all(spacing > 0):
            raise ValueError("image spacing must be a positive 2-vector")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _freeze(spacing))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def require_binary(arr: np.ndarray, name: str = "mask") -> np.ndarray:
    """Validate a {0,1}-valued array and return it as uint8."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must contain only 0 and 1")
        return arr.astype(np.uint8)
    if arr.size and arr.max() > 1:
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr


def voxel_to_physical(vol: Volume3, index) -> np.ndarray:
    """Physical mm position of a voxel index (3,) or batch (..., 3).

    Indices may be fractional but must lie within the array bounds.
    """
    idx = np.asarray(index, dtype=np.float64)
    if idx.shape[-1] != 3:
        raise ValueError("index must have 3 components")
    shape = np.asarray(vol.shape, dtype=np.float64)
    if np.any(idx < 0) or np.any(idx > shape - 1):
        raise IndexError(f"index out of bounds for volume of shape {vol.shape}")
    return vol.origin + (idx * vol.spacing) @ vol.axes


def physical_to_voxel(vol: Volume3, point) -> np.ndarray:
    """Continuous voxel coordinates of a physical point (3,) or batch (..., 3)."""
    pts = np.asarray(point, dtype=np.float64)
    return ((pts - vol.origin) @ vol.axes.T) / vol.spacing


def translate_volume(vol: Volume3, delta) -> Volume3:
    """Shift a volume's physical placement by ``delta`` mm; data is shared."""
    return Volume3(vol.data, vol.spacing, vol.origin + np.asarray(delta, dtype=np.float64), vol.axes)


def centroid(vol: Volume3) -> np.ndarray:
    """Physical mm centroid of the nonzero voxels."""
    idx = np.argwhere(vol.data)
    if idx.shape[0] == 0:
        raise ValueError("centroid of an empty mask is undefined")
    mean_idx = idx.mean(axis=0)
    return vol.origin + (mean_idx * vol.spacing) @ vol.axes


def largest_connected_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest face-connected component of a binary array.

    Connectivity is 4-neighborhood in 2D and 6-neighborhood in 3D. Ties go
    to the component whose first voxel comes earliest in scan order, i.e.
    the smallest lexicographic seed. An empty mask is returned unchanged.
    """
    mask = require_binary(mask)
    labels, n = ndimage.label(mask)
    if n == 0:
        return np.zeros_like(mask)
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    best = int(np.argmax(counts))  # first max = smallest label = earliest seed
    return (labels == best).astype(np.uint8)


def resample_crop(vol: Volume3, target_spacing, target_shape, center) -> Volume3:
    """Resample a volume onto a new grid with the given spacing and shape.

    The output keeps the source axis directions and is centered on
    ``center`` (mm): the mid-point of the output voxel-center lattice lands
    exactly on ``center``. Voxels sampled outside the source extent are 0.
    Integer-typed data is resampled nearest-neighbor, float data trilinear.
    """
    target_spacing = np.asarray(target_spacing, dtype=np.float64)
    target_shape = tuple(int(n) for n in target_shape)
    if len(target_shape) != 3 or any(n < 1 for n in target_shape):
        raise ValueError(f"target_shape must be three positive ints, got {target_shape}")
    if target_spacing.shape != (3,) or not np.all(target_spacing > 0):
        raise ValueError("target_spacing must be a positive 3-vector")
    center = np.asarray(center, dtype=np.float64)

    half = (np.asarray(target_shape, dtype=np.float64) - 1.0) / 2.0
    out_origin = center - (half * target_spacing) @ vol.axes

    # Output axes equal source axes, so the index map is separable per axis:
    # src_i = offset_i + out_i * (target_spacing_i / spacing_i)
    offset = (vol.axes @ (out_origin - vol.origin)) / vol.spacing
    ratio = target_spacing / vol.spacing
    grids = [offset[i] + np.arange(target_shape[i], dtype=np.float64) * ratio[i] for i in range(3)]
    coords = np.meshgrid(*grids, indexing="ij")

    nearest = np.issubdtype(vol.data.dtype, np.integer)
    out = ndimage.map_coordinates(
        vol.data, coords, order=0 if nearest else 1, mode="grid-constant", cval=0.0,
        output=vol.data.dtype if nearest else np.float64,
    )
    if not nearest:
        out = out.astype(vol.data.dtype)
    return Volume3(out, target_spacing, out_origin, vol.axes)


def sample_at_physical(vol: Volume3, points: np.ndarray, nearest: bool) -> np.ndarray:
    """Sample a volume at physical points (..., 3); outside the extent reads 0."""
    pts = np.asarray(points, dtype=np.float64)
    idx = ((pts - vol.origin) @ vol.axes.T) / vol.spacing
    if nearest:
        # round-half-up gather, zero outside; same convention as the
        # interpolated branch but much cheaper for the mask sampling that
        # dominates frame capture
        near = np.floor(idx.reshape(-1, 3) + 0.5).astype(np.int64)
        inside = ((near >= 0) & (near < vol.data.shape)).all(axis=1)
        vals = np.zeros(len(near), dtype=vol.data.dtype)
        sel = near[inside]
        vals[inside] = vol.data[sel[:, 0], sel[:, 1], sel[:, 2]]
        return vals.reshape(pts.shape[:-1])
    vals = ndimage.map_coordinates(
        vol.data, idx.reshape(-1, 3).T, order=1, mode="grid-constant", cval=0.0,
        output=np.float64,
    )
    return vals.reshape(pts.shape[:-1])
