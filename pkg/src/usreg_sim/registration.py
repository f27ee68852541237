"""Rigid registration of binary 3D masks.

The solver aligns a moving volume onto a fixed volume by maximizing mutual
information (or overlap dice) of the voxel-value pairs, using a derivative
free coordinate pattern search with shrinking steps, a coarse-to-fine
point pyramid, and seeded jittered restarts. Both volumes carry their own
origin/axes, so all geometry happens in physical millimeters and the
returned transform maps moving-space points into fixed space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imgvol import (
    RigidTransform3,
    Volume3,
    centroid,
    euler_zyx,
    inverse,
    require_binary,
    translation,
)

_OBJECTIVES = ("mutual_information", "negative_dice")


@dataclass(frozen=True)
class RegistrationConfig:
    """Solver knobs.

    ``search_bounds`` is (max |translation| mm per axis, max |rotation| deg
    per Euler angle) relative to the initial transform; ``parameter_tolerance``
    is the (mm, deg) step size below which a level stops refining.
    """

    objective: str = "mutual_information"
    histogram_bins: int = 2
    pyramid_levels: int = 2
    max_iterations: int = 40
    parameter_tolerance: tuple[float, float] = (0.25, 0.25)
    restarts: int = 3
    search_bounds: tuple[float, float] = (20.0, 10.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.objective not in _OBJECTIVES:
            raise ValueError(f"objective must be one of {_OBJECTIVES}, got {self.objective!r}")
        if self.histogram_bins < 2:
            raise ValueError("histogram_bins must be at least 2")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be at least 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if any(t <= 0 for t in self.parameter_tolerance):
            raise ValueError("parameter_tolerance entries must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be nonnegative")
        if any(b <= 0 for b in self.search_bounds):
            raise ValueError("search_bounds entries must be positive")


def _joint_counts(fixed_vals: np.ndarray, moving: Volume3, points: np.ndarray) -> np.ndarray:
    """2x2 joint histogram of fixed values vs moving mask samples at ``points``.

    The moving mask is sampled with trilinear weights and the fractional
    value is split between the two bins (partial-volume weighting), so the
    histogram varies smoothly under sub-voxel motion instead of jumping at
    nearest-neighbor cell borders. Points outside the moving extent are
    dropped (overlap-only statistics). Returns counts [[n00, n01], [n10, n11]].
    """
    idx = ((points - moving.origin) @ moving.axes.T) / moving.spacing
    shape = moving.data.shape
    inside = (
        (idx[:, 0] >= -0.5) & (idx[:, 0] < shape[0] - 0.5)
        & (idx[:, 1] >= -0.5) & (idx[:, 1] < shape[1] - 0.5)
        & (idx[:, 2] >= -0.5) & (idx[:, 2] < shape[2] - 0.5)
    )
    if not inside.any():
        return np.zeros((2, 2), dtype=np.float64)
    data = moving.data
    if data.dtype != np.float64:
        data = data.astype(np.float64)
    frac = ndimage.map_coordinates(
        data, idx[inside].T, order=1, mode="grid-constant", cval=0.0,
    )
    f = fixed_vals[inside].astype(np.int64)
    counts = np.zeros((2, 2), dtype=np.float64)
    counts[:, 1] = np.bincount(f, weights=frac, minlength=2)
    counts[:, 0] = np.bincount(f, minlength=2) - counts[:, 1]
    return counts


def _mi_from_counts(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    pr = p.sum(axis=1, keepdims=True)
    pc = p.sum(axis=0, keepdims=True)
    denom = pr @ pc
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / denom[nz])))


def _dice_from_counts(counts: np.ndarray) -> float:
    n11 = counts[1, 1]
    denom = 2 * n11 + counts[1, 0] + counts[0, 1]
    if denom == 0:
        return 0.0
    return float(2 * n11 / denom)


def mutual_information(
    fixed: Volume3,
    moving: Volume3,
    transform: RigidTransform3,
    bins: int = 2,
    return_overlap: bool = False,
):
    """MI between fixed voxel values and moving values at transform-mapped points.

    ``transform`` maps fixed-space physical points into moving space. Values
    are histogrammed into ``bins`` levels (binary masks use their values
    directly). Empty overlap yields 0.0; pass ``return_overlap`` to also get
    the overlap sample count as the flag.
    """
    if bins < 2:
        raise ValueError("bins must be at least 2")
    shape = fixed.data.shape
    ii, jj, kk = np.meshgrid(*(np.arange(n) for n in shape), indexing="ij")
    idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3).astype(np.float64)
    pts = fixed.origin + (idx * fixed.spacing) @ fixed.axes
    fvals = _quantize(fixed.data.reshape(-1), bins)
    mapped = transform.apply(pts)

    midx = np.rint(((mapped - moving.origin) @ moving.axes.T) / moving.spacing).astype(np.int64)
    mshape = moving.data.shape
    inside = (
        (midx[:, 0] >= 0) & (midx[:, 0] < mshape[0])
        & (midx[:, 1] >= 0) & (midx[:, 1] < mshape[1])
        & (midx[:, 2] >= 0) & (midx[:, 2] < mshape[2])
    )
    n_overlap = int(inside.sum())
    if n_overlap == 0:
        return (0.0, 0) if return_overlap else 0.0
    sel = midx[inside]
    mvals = _quantize(moving.data[sel[:, 0], sel[:, 1], sel[:, 2]], bins)
    pair = bins * fvals[inside].astype(np.int64) + mvals.astype(np.int64)
    counts = np.bincount(pair, minlength=bins * bins).reshape(bins, bins)
    mi = _mi_from_counts(counts)
    return (mi, n_overlap) if return_overlap else mi


def _quantize(values: np.ndarray, bins: int) -> np.ndarray:
    if np.issubdtype(values.dtype, np.integer) and values.size and values.max() < bins:
        return values.astype(np.int64)
    vmin = float(values.min()) if values.size else 0.0
    vmax = float(values.max()) if values.size else 1.0
    if vmax <= vmin:
        return np.zeros(values.shape, dtype=np.int64)
    scaled = (values.astype(np.float64) - vmin) / (vmax - vmin)
    return np.minimum((scaled * bins).astype(np.int64), bins - 1)


def _content_bbox_in_fixed(vol: Volume3, to_fixed: RigidTransform3, fixed: Volume3):
    """Index-space bbox (lo, hi inclusive) of vol's content mapped into fixed."""
    nz = np.argwhere(vol.data > 0)
    pts = vol.origin + (nz.astype(np.float64) * vol.spacing) @ vol.axes
    fidx = ((to_fixed.apply(pts) - fixed.origin) @ fixed.axes.T) / fixed.spacing
    return np.floor(fidx.min(axis=0)).astype(int), np.ceil(fidx.max(axis=0)).astype(int)


def _eval_points(fixed: Volume3, moving: Volume3, inits, pad_vox: np.ndarray, stride: int):
    """Fixed-grid sample lattice covering both contents plus search margin.

    ``inits`` lists candidate moving->fixed transforms whose mapped content
    must stay inside the lattice.
    """
    lo, hi = _content_bbox_in_fixed(fixed, RigidTransform3.identity(), fixed)
    for t in inits:
        lo_m, hi_m = _content_bbox_in_fixed(moving, t, fixed)
        lo = np.minimum(lo, lo_m)
        hi = np.maximum(hi, hi_m)
    lo = lo - pad_vox
    hi = hi + pad_vox
    shape = np.array(fixed.data.shape)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, shape - 1)
    axes_idx = [np.arange(lo[d], hi[d] + 1, stride) for d in range(3)]
    ii, jj, kk = np.meshgrid(*axes_idx, indexing="ij")
    idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
    pts = fixed.origin + (idx.astype(np.float64) * fixed.spacing) @ fixed.axes
    fvals = fixed.data[idx[:, 0], idx[:, 1], idx[:, 2]]
    return pts, fvals


def _theta_map(theta: np.ndarray, center: np.ndarray, init: RigidTransform3):
    """Rotation matrix and translation vector of the candidate transform.

    Raw arrays for the score loop; equivalent to ``_make_transform`` minus
    the per-call transform-object validation.
    """
    rot = euler_zyx(theta[3], theta[4], theta[5])
    a = rot @ init.rotation
    b = rot @ init.translation + (center - rot @ center) + theta[:3]
    return a, b


def _make_transform(theta: np.ndarray, center: np.ndarray, init: RigidTransform3) -> RigidTransform3:
    return RigidTransform3(*_theta_map(theta, center, init))


def _pattern_search(score_fn, theta0, bounds, steps0, tol, max_sweeps, trace=None):
    theta = theta0.copy()
    best = score_fn(theta)
    t_step, r_step = steps0
    sweeps = 0
    while (t_step >= tol[0] or r_step >= tol[1]) and sweeps < max_sweeps:
        improved = False
        for axis in range(6):
            step = t_step if axis < 3 else r_step
            bound = bounds[0] if axis < 3 else bounds[1]
            best_cand = None
            best_cand_score = best
            for sign in (1.0, -1.0):
                cand = theta.copy()
                cand[axis] = float(np.clip(cand[axis] + sign * step, -bound, bound))
                s = score_fn(cand)
                if s > best_cand_score + 1e-12:
                    best_cand, best_cand_score = cand, s
            if best_cand is not None:
                theta, best = best_cand, best_cand_score
                improved = True
        if trace is not None:
            trace.append(best)
        if not improved:
            t_step *= 0.5
            r_step *= 0.5
        sweeps += 1
    return theta, best


def register_rigid(
    fixed: Volume3,
    moving: Volume3,
    init: RigidTransform3 | None = None,
    cfg: RegistrationConfig | None = None,
    return_trace: bool = False,
):
    """Find the rigid map (moving space -> fixed space) maximizing the objective.

    Both masks must be binary, nonempty, and live on grids with identical
    spacing and shape (origins and axes may differ). The result is
    deterministic for a given config; restart ties keep the lowest index.
    Returns (transform, score); with ``return_trace``, also the per-level
    list of best-score-per-sweep traces.
    """
    cfg = cfg or RegistrationConfig()
    init = init or RigidTransform3.identity()
    fdata = require_binary(fixed.data, "fixed mask")
    mdata = require_binary(moving.data, "moving mask")
    if fdata.sum() == 0 or mdata.sum() == 0:
        raise ValueError("cannot register empty masks")
    if fdata.shape != mdata.shape or not np.allclose(fixed.spacing, moving.spacing):
        raise ValueError("volumes must be harmonized to the same shape and spacing")

    center = init.apply(centroid(moving))
    # float view of the moving mask so the score loop skips the cast
    moving_f = Volume3(mdata.astype(np.float64), moving.spacing, moving.origin, moving.axes)
    score_from_counts = (
        _mi_from_counts if cfg.objective == "mutual_information" else _dice_from_counts
    )
    bound_t, bound_r = cfg.search_bounds
    pad = np.ceil(bound_t / fixed.spacing).astype(int) + 2

    rng = np.random.default_rng(cfg.seed)
    jitters = [np.zeros(6)]
    for _ in range(cfg.restarts):
        j = rng.uniform(-0.5, 0.5, size=6)
        jitters.append(j * np.array([bound_t, bound_t, bound_t, bound_r, bound_r, bound_r]))

    traces: list[list[float]] = []
    theta_best = np.zeros(6)
    for level in range(cfg.pyramid_levels):
        stride = 2 ** (cfg.pyramid_levels - 1 - level)
        if level == 0:
            level_pad, inits = pad, [init]
        else:
            # refinement stays near the coarse winner, so shrink the margin
            level_pad = np.minimum(pad, 4)
            inits = [init, _make_transform(theta_best, center, init)]
        pts, fvals = _eval_points(fixed, moving, inits, level_pad, stride)

        def score_fn(theta):
            a, b = _theta_map(theta, center, init)
            return score_from_counts(_joint_counts(fvals, moving_f, (pts - b) @ a))

        coarse = level == 0
        steps0 = (4.0, 3.0) if coarse else (1.0, 1.0)
        trace: list[float] = []
        if coarse:
            best_theta, best_score, found = None, -math.inf, False
            for start in jitters:
                restart_trace: list[float] = []
                th, sc = _pattern_search(
                    score_fn, start, (bound_t, bound_r), steps0,
                    cfg.parameter_tolerance, cfg.max_iterations, restart_trace,
                )
                if sc > best_score:
                    best_theta, best_score, found = th, sc, True
                    trace = restart_trace
            assert found
            theta_best = best_theta
        else:
            # never let refinement end below the plain init: seed the level
            # with whichever of {previous winner, init} scores higher here
            if score_fn(np.zeros(6)) > score_fn(theta_best):
                theta_best = np.zeros(6)
            theta_best, _ = _pattern_search(
                score_fn, theta_best, (bound_t, bound_r), steps0,
                cfg.parameter_tolerance, cfg.max_iterations, trace,
            )
        traces.append(trace)

    final_score = score_fn(theta_best)
    result = _make_transform(theta_best, center, init)
    if return_trace:
        return result, final_score, traces
    return result, final_score


def apply_transform(moving: Volume3, transform: RigidTransform3, like: Volume3) -> Volume3:
    """Resample ``moving`` through the moving->fixed ``transform`` onto ``like``'s grid."""
    shape = like.data.shape
    ii, jj, kk = np.meshgrid(*(np.arange(n) for n in shape), indexing="ij")
    idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3).astype(np.float64)
    pts = like.origin + (idx * like.spacing) @ like.axes
    src = inverse(transform).apply(pts)
    sidx = np.rint(((src - moving.origin) @ moving.axes.T) / moving.spacing).astype(np.int64)
    mshape = moving.data.shape
    inside = (
        (sidx[:, 0] >= 0) & (sidx[:, 0] < mshape[0])
        & (sidx[:, 1] >= 0) & (sidx[:, 1] < mshape[1])
        & (sidx[:, 2] >= 0) & (sidx[:, 2] < mshape[2])
    )
    out = np.zeros(len(idx), dtype=moving.data.dtype)
    sel = sidx[inside]
    out[inside] = moving.data[sel[:, 0], sel[:, 1], sel[:, 2]]
    return Volume3(out.reshape(shape), like.spacing, like.origin, like.axes)
