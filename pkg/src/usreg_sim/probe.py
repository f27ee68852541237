"""Virtual robot end-effector and ultrasound imaging model.

The probe is a point transducer that rides on the phantom's skin surface
with a fixed orientation: the image plane is always perpendicular to the
inferior-superior (x) axis, so every captured frame is an axial view.
Capture is pure resampling of the scene volumes; the learned segmentation
networks of the real system are replaced by ground-truth oracles plus a
parametric corruption model.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .imgvol import Image2, sample_at_physical
from .phantom import PhantomScene


@dataclass(frozen=True)
class ProbeParams:
    """Transducer geometry.

    ``image_shape`` is (lateral pixels, depth pixels) and ``pixel_spacing``
    is (lateral, depth) mm per pixel. Lateral coverage must match the
    field-of-view width to within one pixel.
    """

    fov_width: float = 80.0
    fov_depth: float = 80.0
    image_shape: tuple[int, int] = (216, 100)
    pixel_spacing: tuple[float, float] = (80.0 / 216.0, 0.8)

    def __post_init__(self) -> None:
        lx, ly = self.image_shape
        vx, vy = self.pixel_spacing
        if lx < 2 or ly < 2:
            raise ValueError(f"image_shape must be at least 2x2, got {self.image_shape}")
        if vx <= 0 or vy <= 0:
            raise ValueError("pixel_spacing must be positive")
        if self.fov_width <= 0 or self.fov_depth <= 0:
            raise ValueError("field of view must be positive")
        if abs(lx * vx - self.fov_width) > vx:
            raise ValueError(
                f"lateral pixels x spacing ({lx * vx:.3f} mm) must cover "
                f"fov_width ({self.fov_width} mm) to within one pixel"
            )
        if abs(ly * vy - self.fov_depth) > vy:
            raise ValueError(
                f"depth pixels x spacing ({ly * vy:.3f} mm) must cover "
                f"fov_depth ({self.fov_depth} mm) to within one pixel"
            )


@dataclass(frozen=True)
class ProbeState:
    """Transducer center on the body surface.

    Orientation is fixed for an entire run (axial imaging plane), so the
    state is just a position.
    """

    position: np.ndarray

    def __post_init__(self) -> None:
        pos = np.asarray(self.position, dtype=np.float64)
        if pos.shape != (3,):
            raise ValueError(f"probe position must be a 3-vector, got shape {pos.shape}")
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class UltrasoundFrame:
    """One axial capture: intensity image plus the two hidden truth masks.

    ``mask_truth`` samples the full vein annotation and ``branch_truth``
    the junction-local annotation; both share the image grid. Pixel (0, 0)
    sits at ``capture_position - (fov_width/2) * y_hat`` at surface depth,
    the lateral axis runs along +y and the depth axis straight down.
    """

    image: Image2
    mask_truth: Image2
    branch_truth: Image2
    capture_position: np.ndarray
    params: ProbeParams

    def __post_init__(self) -> None:
        pos = np.asarray(self.capture_position, dtype=np.float64)
        if pos.shape != (3,):
            raise ValueError("capture_position must be a 3-vector")
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "capture_position", pos)
        for name in ("mask_truth", "branch_truth"):
            img = getattr(self, name)
            if img.shape != self.image.shape or not np.array_equal(img.spacing, self.image.spacing):
                raise ValueError(f"{name} must share the image grid")

    def pixel_to_physical(self, j: float, k: float) -> np.ndarray:
        """Physical mm point of pixel (j=lateral, k=depth)."""
        vx, vy = self.params.pixel_spacing
        off = np.array([0.0, -self.params.fov_width / 2.0 + j * vx, -k * vy])
        return self.capture_position + off


@dataclass(frozen=True)
class NoiseModel:
    """Parametric corruption standing in for network segmentation errors.

    ``pixel_flip_rate`` is a per-pixel XOR probability, ``spurious_blob_rate``
    the expected count of small false-positive discs per frame with areas
    drawn from ``blob_size`` (pixels), and ``morph_jitter`` the half-range of
    a per-frame dilation/erosion draw. Output is deterministic given the
    seed and the frame being segmented.
    """

    pixel_flip_rate: float = 0.0
    spurious_blob_rate: float = 0.0
    blob_size: tuple[int, int] = (10, 40)
    morph_jitter: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.pixel_flip_rate <= 1.0:
            raise ValueError("pixel_flip_rate must be in [0, 1]")
        if self.spurious_blob_rate < 0:
            raise ValueError("spurious_blob_rate must be nonnegative")
        lo, hi = self.blob_size
        if lo < 1 or hi < lo:
            raise ValueError(f"blob_size must satisfy 1 <= lo <= hi, got {self.blob_size}")
        if self.morph_jitter < 0:
            raise ValueError("morph_jitter must be nonnegative")

    @classmethod
    def zero(cls, seed: int = 0) -> "NoiseModel":
        """No corruption: segmentation equals the oracle exactly."""
        return cls(seed=seed)

    @classmethod
    def default(cls, seed: int = 0) -> "NoiseModel":
        """Calibrated preset: oracle Dice lands in the low-0.8s band."""
        return cls(
            pixel_flip_rate=0.003,
            spurious_blob_rate=1.5,
            blob_size=(10, 30),
            morph_jitter=1,
            seed=seed,
        )

    def is_zero(self) -> bool:
        return (
            self.pixel_flip_rate == 0.0
            and self.spurious_blob_rate == 0.0
            and self.morph_jitter == 0
        )


NOISE_PRESETS = {
    "zero": NoiseModel.zero,
    "default": NoiseModel.default,
}


def initial_contact(scene: PhantomScene) -> ProbeState:
    """Land the probe at the centroid of the body's top-down footprint.

    Stands in for the force-controlled descend-and-touch routine: the
    contact point is the (x, y) centroid of the occupied skin footprint at
    surface height.
    """
    body = scene.ct.data > 0
    footprint = body.any(axis=2)
    idx = np.argwhere(footprint)
    if idx.size == 0:
        raise ValueError("cannot make contact: body footprint is empty")
    center_idx = idx.mean(axis=0)
    anchor = scene.ct.origin + (
        np.array([center_idx[0], center_idx[1], 0.0]) * scene.ct.spacing
    ) @ scene.ct.axes
    z = scene.surface_height(anchor[0], anchor[1])
    if math.isnan(z):
        raise ValueError("footprint centroid is off the skin surface")
    return ProbeState(position=np.array([anchor[0], anchor[1], z]))


def move_to(scene: PhantomScene, x: float, y: float) -> ProbeState:
    """Place the probe on the surface above (x, y)."""
    z = scene.surface_height(x, y)
    if math.isnan(z):
        raise ValueError(f"({x:.1f}, {y:.1f}) is off the skin surface")
    return ProbeState(position=np.array([float(x), float(y), z]))


def capture_grid(position: np.ndarray, params: ProbeParams) -> np.ndarray:
    """Physical positions of every pixel of a frame captured at ``position``."""
    lx, ly = params.image_shape
    vx, vy = params.pixel_spacing
    ys = position[1] - params.fov_width / 2.0 + np.arange(lx) * vx
    zs = position[2] - np.arange(ly) * vy
    pts = np.empty((lx, ly, 3), dtype=np.float64)
    pts[..., 0] = position[0]
    pts[..., 1] = ys[:, None]
    pts[..., 2] = zs[None, :]
    return pts


def _same_grid(a, b) -> bool:
    return (
        a.data.shape == b.data.shape
        and np.array_equal(a.spacing, b.spacing)
        and np.array_equal(a.origin, b.origin)
        and np.array_equal(a.axes, b.axes)
    )


def capture_us(scene: PhantomScene, probe: ProbeState, params: ProbeParams) -> UltrasoundFrame:
    """Image the axial plane through the probe position.

    The intensity image is a trilinear sample of the CT-like volume; the
    truth masks are nearest-neighbor samples of the annotations. Points
    outside the volume read 0.
    """
    pts = capture_grid(probe.position, params)
    spacing = np.asarray(params.pixel_spacing, dtype=np.float64)
    ct = scene.ct
    if _same_grid(ct, scene.hv_annotation) and _same_grid(ct, scene.hv_branch_annotation):
        # the placed volumes share one grid, so one index computation
        # serves the image and both masks (captures dominate sweep time)
        shape = pts.shape[:-1]
        idx = ((pts.reshape(-1, 3) - ct.origin) @ ct.axes.T) / ct.spacing
        image = ndimage.map_coordinates(
            ct.data, idx.T, order=1, mode="grid-constant", cval=0.0, output=np.float64,
        ).reshape(shape)
        near = np.floor(idx + 0.5).astype(np.int64)
        n0, n1, n2 = near[:, 0], near[:, 1], near[:, 2]
        s0, s1, s2 = ct.data.shape
        inside = (
            (n0 >= 0) & (n0 < s0) & (n1 >= 0) & (n1 < s1) & (n2 >= 0) & (n2 < s2)
        )
        sel = near[inside]
        mask = np.zeros(len(near), dtype=np.uint8)
        branch = np.zeros(len(near), dtype=np.uint8)
        mask[inside] = scene.hv_annotation.data[sel[:, 0], sel[:, 1], sel[:, 2]]
        branch[inside] = scene.hv_branch_annotation.data[sel[:, 0], sel[:, 1], sel[:, 2]]
        mask = mask.reshape(shape)
        branch = branch.reshape(shape)
    else:
        image = sample_at_physical(ct, pts, nearest=False)
        mask = sample_at_physical(scene.hv_annotation, pts, nearest=True).astype(np.uint8)
        branch = sample_at_physical(scene.hv_branch_annotation, pts, nearest=True).astype(np.uint8)
    return UltrasoundFrame(
        image=Image2(image, spacing),
        mask_truth=Image2(mask, spacing),
        branch_truth=Image2(branch, spacing),
        capture_position=probe.position,
        params=params,
    )


def _frame_rng(noise: NoiseModel, frame: UltrasoundFrame, tag: str) -> np.random.Generator:
    """Generator keyed on (seed, model tag, capture position, frame shape).

    Re-segmenting the same frame with the same model reproduces the output
    bit for bit, independent of call order, which keeps concurrent trials
    deterministic.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(struct.pack("<q", int(noise.seed)))
    h.update(tag.encode("ascii"))
    quantized = np.round(frame.capture_position * 1000.0).astype(np.int64)
    h.update(quantized.tobytes())
    h.update(struct.pack("<qq", *frame.mask_truth.shape))
    return np.random.default_rng(int.from_bytes(h.digest(), "little"))


def _corrupt(mask: np.ndarray, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    out = mask.astype(bool)
    if noise.morph_jitter > 0:
        j = int(rng.integers(-noise.morph_jitter, noise.morph_jitter + 1))
        if j > 0:
            out = ndimage.binary_dilation(out, iterations=j)
        elif j < 0:
            out = ndimage.binary_erosion(out, iterations=-j)
    if noise.spurious_blob_rate > 0:
        lo, hi = noise.blob_size
        n_blobs = int(rng.poisson(noise.spurious_blob_rate))
        lx, ly = out.shape
        for _ in range(n_blobs):
            area = int(rng.integers(lo, hi + 1))
            cj = int(rng.integers(0, lx))
            ck = int(rng.integers(0, ly))
            r = math.sqrt(area / math.pi)
            jj, kk = np.ogrid[:lx, :ly]
            out |= (jj - cj) ** 2 + (kk - ck) ** 2 <= r * r
    if noise.pixel_flip_rate > 0:
        flips = rng.random(out.shape) < noise.pixel_flip_rate
        out ^= flips
    return out.astype(np.uint8)


def _segment(frame: UltrasoundFrame, truth: Image2, noise: NoiseModel, tag: str) -> Image2:
    if noise.is_zero():
        return replace(truth)
    rng = _frame_rng(noise, frame, tag)
    return Image2(_corrupt(truth.data, noise, rng), truth.spacing)


def segment_full(frame: UltrasoundFrame, noise: NoiseModel) -> Image2:
    """Full-vein segmentation: the truth mask under the corruption model."""
    return _segment(frame, frame.mask_truth, noise, "full")


def segment_branch(frame: UltrasoundFrame, noise: NoiseModel) -> Image2:
    """Junction-local segmentation: the branch truth under the same model."""
    return _segment(frame, frame.branch_truth, noise, "branch")
