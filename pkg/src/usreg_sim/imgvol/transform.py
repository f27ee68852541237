"""Rigid transforms between 3D coordinate frames.

A rigid transform is a proper rotation plus a translation; points map as
``p -> R @ p + t``. Rotations must be orthonormal with determinant +1
(reflections are rejected at construction).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RigidTransform3:
    """Proper rigid motion of 3D space: ``apply(p) = rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if tra.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {tra.shape}")
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        if err > 1e-7:
            raise ValueError(f"rotation is not orthonormal (max residual {err:.3e})")
        det = np.linalg.det(rot)
        if det < 0:
            raise ValueError(f"rotation has negative determinant ({det:.6f}); reflections are not rigid")
        object.__setattr__(self, "rotation", _freeze(rot))
        object.__setattr__(self, "translation", _freeze(tra))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map one point (3,) or a batch (..., 3) of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.apply(points)

    @staticmethod
    def identity() -> "RigidTransform3":
        return RigidTransform3(np.eye(3), np.zeros(3))


def translation(delta) -> RigidTransform3:
    """Pure translation by ``delta`` (mm)."""
    return RigidTransform3(np.eye(3), np.asarray(delta, dtype=np.float64))


def compose(outer: RigidTransform3, inner: RigidTransform3) -> RigidTransform3:
    """Transform applying ``inner`` first, then ``outer``."""
    return RigidTransform3(
        outer.rotation @ inner.rotation,
        outer.rotation @ inner.translation + outer.translation,
    )


def inverse(t: RigidTransform3) -> RigidTransform3:
    rot_inv = t.rotation.T
    return RigidTransform3(rot_inv, -rot_inv @ t.translation)


def rotation_z(angle_deg: float) -> np.ndarray:
    """Rotation matrix about +z (yaw), angle in degrees."""
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_zyx(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """Rotation matrix for intrinsic z-y-x Euler angles (degrees)."""
    y, p, r = (math.radians(v) for v in (yaw_deg, pitch_deg, roll_deg))
    cz, sz = math.cos(y), math.sin(y)
    cy, sy = math.cos(p), math.sin(p)
    cx, sx = math.cos(r), math.sin(r)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=np.float64)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=np.float64)
    return rz @ ry @ rx


def rotation_about(rotation: np.ndarray, center, extra_translation=(0.0, 0.0, 0.0)) -> RigidTransform3:
    """Rigid transform rotating about ``center`` then translating by ``extra_translation``.

    ``apply(p) = R @ (p - c) + c + t``; the fixed point of the pure rotation is ``center``.
    """
    c = np.asarray(center, dtype=np.float64)
    t = np.asarray(extra_translation, dtype=np.float64)
    rot = np.asarray(rotation, dtype=np.float64)
    return RigidTransform3(rot, c + t - rot @ c)
