"""Residual families for the sliding-window relative pose problem.

Three measurement models enter the cost:
  * distance:  scalar range between two drone positions at one keyframe,
  * detection: 3D position of a target in the observing drone's body frame,
  * vio:       4DoF delta between a drone's consecutive keyframe poses,
               compared against its broadcast odometry delta.

All residuals are weighted by the caller (usually 1/sigma per component) and
yaw components are wrapped so the solver sees a smooth function near +-pi.
"""

from __future__ import annotations

import numpy as np

from swarmrel.geometry import wrap_angle
from swarmrel.nls import ResidualFamily

DEGENERATE_RANGE = 1e-6


def rot_z_batch(yaws: np.ndarray) -> np.ndarray:
    """(B,) yaw angles -> (B, 3, 3) rotation matrices about z."""
    yaws = np.asarray(yaws, dtype=float)
    c, s = np.cos(yaws), np.sin(yaws)
    R = np.zeros(yaws.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    R[..., 2, 2] = 1.0
    return R


def _spin_batch(R: np.ndarray) -> np.ndarray:
    """d/dyaw of Rz(yaw), given Rz(yaw): S @ R with S the planar spin generator."""
    out = np.zeros_like(R)
    out[..., 0, :] = -R[..., 1, :]
    out[..., 1, :] = R[..., 0, :]
    return out


class DistanceResidual(ResidualFamily):
    """r = z_d - ||x_i - x_j||; slots are (drone i pose, drone j pose)."""

    name = "distance"
    dim = 1
    arity = 2

    def evaluate(self, slots, meas):
        diff = slots[0][:, :3] - slots[1][:, :3]
        d = np.linalg.norm(diff, axis=1)
        return (meas[:, 0] - d)[:, None]

    def jacobian(self, slots, meas):
        diff = slots[0][:, :3] - slots[1][:, :3]
        d = np.linalg.norm(diff, axis=1)
        # direction zeroed at (near-)coincident positions; residual itself stays
        safe = np.where(d > DEGENERATE_RANGE, d, 1.0)
        u = np.where((d > DEGENERATE_RANGE)[:, None], diff / safe[:, None], 0.0)
        B = diff.shape[0]
        Ji = np.zeros((B, 1, 4))
        Jj = np.zeros((B, 1, 4))
        Ji[:, 0, :3] = -u
        Jj[:, 0, :3] = u
        return [Ji, Jj]

    def valid_mask(self, slots, meas):
        diff = slots[0][:, :3] - slots[1][:, :3]
        return np.linalg.norm(diff, axis=1) > DEGENERATE_RANGE


class DetectionResidual(ResidualFamily):
    """r = Rz(-yaw_i) (x_j - x_i) - z; slots are (observer pose, target pose)."""

    name = "detection"
    dim = 3
    arity = 2

    def evaluate(self, slots, meas):
        diff = slots[1][:, :3] - slots[0][:, :3]
        Rinv = rot_z_batch(-slots[0][:, 3])
        body = np.einsum("bij,bj->bi", Rinv, diff)
        return body - meas

    def jacobian(self, slots, meas):
        diff = slots[1][:, :3] - slots[0][:, :3]
        Rinv = rot_z_batch(-slots[0][:, 3])
        B = diff.shape[0]
        Jo = np.zeros((B, 3, 4))
        Jt = np.zeros((B, 3, 4))
        Jo[:, :, :3] = -Rinv
        # d/dyaw_i Rz(-yaw_i) = -S Rz(-yaw_i)
        Jo[:, :, 3] = -np.einsum("bij,bj->bi", _spin_batch(Rinv), diff)
        Jt[:, :, :3] = Rinv
        return [Jo, Jt]


class VioResidual(ResidualFamily):
    """Odometry consistency between consecutive keyframe poses of one drone.

    meas is the measured delta [tx, ty, tz, yaw]; slots are (previous pose,
    current pose). The residual is the tangent of inv(z) * (inv(prev) * curr),
    with the yaw component wrapped.
    """

    name = "vio"
    dim = 4
    arity = 2

    def _error_terms(self, slots, meas):
        xa, ya = slots[0][:, :3], slots[0][:, 3]
        xb, yb = slots[1][:, :3], slots[1][:, 3]
        Ra_inv = rot_z_batch(-ya)
        rel_t = np.einsum("bij,bj->bi", Ra_inv, xb - xa)
        Rz_inv = rot_z_batch(-meas[:, 3])
        err_t = np.einsum("bij,bj->bi", Rz_inv, rel_t - meas[:, :3])
        err_yaw = wrap_angle(yb - ya - meas[:, 3])
        return Ra_inv, Rz_inv, err_t, err_yaw

    def evaluate(self, slots, meas):
        _, _, err_t, err_yaw = self._error_terms(slots, meas)
        return np.concatenate([err_t, err_yaw[:, None]], axis=1)

    def jacobian(self, slots, meas):
        xa = slots[0][:, :3]
        xb = slots[1][:, :3]
        Ra_inv, Rz_inv, _, _ = self._error_terms(slots, meas)
        RR = np.einsum("bij,bjk->bik", Rz_inv, Ra_inv)
        B = xa.shape[0]
        Ja = np.zeros((B, 4, 4))
        Jb = np.zeros((B, 4, 4))
        Ja[:, :3, :3] = -RR
        Ja[:, :3, 3] = -np.einsum("bij,bjk,bk->bi", Rz_inv, _spin_batch(Ra_inv), xb - xa)
        Ja[:, 3, 3] = -1.0
        Jb[:, :3, :3] = RR
        Jb[:, 3, 3] = 1.0
        return [Ja, Jb]


DISTANCE = DistanceResidual()
DETECTION = DetectionResidual()
VIO = VioResidual()
