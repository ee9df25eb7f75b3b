"""4DoF pose algebra: translation in R^3 plus rotation about the world z axis.

Every measurement model and residual in the estimator lives on this group
(R^3 x SO(2)). Roll and pitch never appear anywhere in the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), TWO_PI)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def rot_z(yaw: float) -> np.ndarray:
    """3x3 rotation about the z axis by `yaw` radians."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(eq=False)
class Pose4:
    """Rigid transform with 3D translation and yaw-only rotation.

    `t` is meters, `yaw` is radians and is always stored wrapped to (-pi, pi].
    """

    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if self.t.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got shape {self.t.shape}")
        self.yaw = wrap_angle(float(self.yaw))

    def copy(self) -> "Pose4":
        return Pose4(self.t.copy(), self.yaw)

    def as_vec(self) -> np.ndarray:
        """Flatten to [x, y, z, yaw]."""
        return np.array([self.t[0], self.t[1], self.t[2], self.yaw])

    @staticmethod
    def from_vec(v) -> "Pose4":
        v = np.asarray(v, dtype=float)
        return Pose4(v[:3].copy(), float(v[3]))

    def __repr__(self):
        return (f"Pose4(t=[{self.t[0]:.4f}, {self.t[1]:.4f}, {self.t[2]:.4f}], "
                f"yaw={self.yaw:.4f})")


@dataclass(eq=False)
class Tangent4:
    """Local increment: additive translation delta plus yaw delta (unwrapped)."""

    dt: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dyaw: float = 0.0

    def __post_init__(self):
        self.dt = np.asarray(self.dt, dtype=float)
        if self.dt.shape != (3,):
            raise ValueError(f"translation delta must be a 3-vector, got shape {self.dt.shape}")
        self.dyaw = float(self.dyaw)

    def as_vec(self) -> np.ndarray:
        return np.array([self.dt[0], self.dt[1], self.dt[2], self.dyaw])


def identity() -> Pose4:
    return Pose4(np.zeros(3), 0.0)


def compose(a: Pose4, b: Pose4) -> Pose4:
    """a ∘ b: apply b first, then a (matrix product of the homogeneous forms)."""
    return Pose4(rot_z(a.yaw) @ b.t + a.t, wrap_angle(a.yaw + b.yaw))


def inverse(a: Pose4) -> Pose4:
    return Pose4(-(rot_z(-a.yaw) @ a.t), -a.yaw)


def relative(a: Pose4, b: Pose4) -> Pose4:
    """Transform of b expressed in a's frame: inverse(a) ∘ b.

    Both poses must be expressed in the same parent frame.
    """
    return compose(inverse(a), b)


def apply(p: Pose4, point) -> np.ndarray:
    """Map a point from p's frame into the parent frame."""
    return rot_z(p.yaw) @ np.asarray(point, dtype=float) + p.t


def boxplus(p: Pose4, v: Tangent4) -> Pose4:
    """Component-wise additive update; exact on this product group."""
    return Pose4(p.t + v.dt, wrap_angle(p.yaw + v.dyaw))


def boxminus(a: Pose4, b: Pose4) -> Tangent4:
    """Inverse of boxplus in its second argument: boxplus(b, boxminus(a, b)) == a."""
    return Tangent4(a.t - b.t, wrap_angle(a.yaw - b.yaw))


def poses_close(a: Pose4, b: Pose4, atol_t: float = 1e-9, atol_yaw: float = 1e-9) -> bool:
    """True when translations and wrapped yaw difference are within tolerances."""
    return bool(
        np.all(np.abs(a.t - b.t) <= atol_t)
        and abs(wrap_angle(a.yaw - b.yaw)) <= atol_yaw
    )
