"""Serial-chain geometry: DH forward kinematics, Jacobians, SVD pseudoinverse.

Angles are radians, lengths are meters throughout. Chains use the standard
(distal) Denavit-Hartenberg convention: each link transform is
RotZ(theta + theta_offset) @ TransZ(d) @ TransX(a) @ RotX(alpha).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Raised when chain/joint-vector dimensions or parameters are invalid."""


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation, rotation orthonormal with det +1."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ConfigurationError("rotation must be orthonormal with determinant +1")

    @staticmethod
    def _trusted(rotation: np.ndarray, translation: np.ndarray) -> "RigidTransform":
        # skip the orthonormality check for products of already-valid transforms
        t = object.__new__(RigidTransform)
        object.__setattr__(t, "rotation", rotation)
        object.__setattr__(t, "translation", translation)
        return t

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_rpy(rpy, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Roll/pitch/yaw (radians, x-y-z intrinsic: Rz@Ry@Rx) plus translation."""
        roll, pitch, yaw = (float(v) for v in rpy)
        cr, sr = np.cos(roll), np.sin(roll)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cy, sy = np.cos(yaw), np.sin(yaw)
        rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
        ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        return RigidTransform(rz @ ry @ rx, np.asarray(translation, dtype=float))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform._trusted(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform._trusted(self.rotation @ other.rotation,
                                       self.rotation @ other.translation + self.translation)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation


@dataclass(frozen=True)
class DHLink:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0

    def constant_part(self) -> np.ndarray:
        """TransZ(d) @ TransX(a) @ RotX(alpha), the joint-angle-free factor."""
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        return np.array([
            [1.0, 0.0, 0.0, self.a],
            [0.0, ca, -sa, 0.0],
            [0.0, sa, ca, self.d],
            [0.0, 0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True)
class KinematicChain:
    """DH table plus joint limits, velocity limits and a base pose in world frame."""

    links: tuple
    joint_lower: np.ndarray
    joint_upper: np.ndarray
    vel_limit: np.ndarray
    base_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    joint_names: tuple = ()

    def __post_init__(self):
        links = tuple(self.links)
        lo = np.asarray(self.joint_lower, dtype=float).reshape(-1)
        hi = np.asarray(self.joint_upper, dtype=float).reshape(-1)
        vl = np.asarray(self.vel_limit, dtype=float).reshape(-1)
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "joint_lower", lo)
        object.__setattr__(self, "joint_upper", hi)
        object.__setattr__(self, "vel_limit", vl)
        n = len(links)
        if n < 1:
            raise ConfigurationError("chain needs at least one joint")
        if not (len(lo) == len(hi) == len(vl) == n):
            raise ConfigurationError("joint limit arrays must match link count")
        if np.any(lo >= hi):
            raise ConfigurationError("joint_lower must be strictly below joint_upper")
        if np.any(vl <= 0):
            raise ConfigurationError("velocity limits must be positive")
        # angle-free DH factors, cached once per chain
        object.__setattr__(self, "_const", tuple(l.constant_part() for l in links))

    @property
    def n_joints(self) -> int:
        return len(self.links)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.joint_lower, self.joint_upper)

    def scaled_links(self, link_scale) -> "KinematicChain":
        """Copy of the chain with each link's a and d multiplied by link_scale[i]."""
        s = np.asarray(link_scale, dtype=float).reshape(-1)
        if len(s) != self.n_joints:
            raise ConfigurationError("link_scale length must match link count")
        links = tuple(DHLink(l.a * si, l.alpha, l.d * si, l.theta_offset)
                      for l, si in zip(self.links, s))
        return KinematicChain(links, self.joint_lower, self.joint_upper,
                              self.vel_limit, self.base_pose, self.joint_names)


def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if len(q) != chain.n_joints:
        raise ConfigurationError(
            f"joint vector has length {len(q)}, chain has {chain.n_joints} joints")
    return q


def _rotz4(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([
        [c, -s, 0.0, 0.0],
        [s, c, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def joint_frames(chain: KinematicChain, q) -> list:
    """World-frame 4x4 transforms of the base and every joint frame.

    Returns n+1 matrices; element 0 is the base pose, element i the frame after
    link i. The last entry is the end-effector pose.
    """
    q = _check_q(chain, q)
    frames = [chain.base_pose.matrix()]
    t = frames[0]
    for i, link in enumerate(chain.links):
        t = t @ _rotz4(q[i] + link.theta_offset) @ chain._const[i]
        frames.append(t)
    return frames


def forward_kinematics(chain: KinematicChain, q) -> RigidTransform:
    """End-effector pose in the world frame."""
    m = joint_frames(chain, q)[-1]
    return RigidTransform._trusted(m[:3, :3].copy(), m[:3, 3].copy())


def fk_poses_batch(chain: KinematicChain, qs: np.ndarray) -> np.ndarray:
    """End-effector poses (m, 4, 4) for a batch of joint vectors (m, n).

    Same composition as joint_frames, vectorized over the batch; used by the
    finite-difference Jacobians where dozens of nearby configurations are
    evaluated per control cycle.
    """
    qs = np.asarray(qs, dtype=float)
    if qs.ndim != 2 or qs.shape[1] != chain.n_joints:
        raise ConfigurationError("batch must be (m, n_joints)")
    m = qs.shape[0]
    t = np.broadcast_to(chain.base_pose.matrix(), (m, 4, 4)).copy()
    rot = np.zeros((m, 4, 4))
    rot[:, 2, 2] = 1.0
    rot[:, 3, 3] = 1.0
    for i, link in enumerate(chain.links):
        th = qs[:, i] + link.theta_offset
        c, s = np.cos(th), np.sin(th)
        rot[:, 0, 0] = c
        rot[:, 0, 1] = -s
        rot[:, 1, 0] = s
        rot[:, 1, 1] = c
        t = t @ rot @ chain._const[i]
    return t


def fk_positions_batch(chain: KinematicChain, qs: np.ndarray) -> np.ndarray:
    """End-effector positions (m, 3) for a batch of joint vectors (m, n)."""
    return fk_poses_batch(chain, qs)[:, :3, 3]


def fk_position(chain: KinematicChain, q) -> np.ndarray:
    """End-effector position only (3-vector, world frame)."""
    return joint_frames(chain, q)[-1][:3, 3].copy()


def geometric_jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Positional Jacobian (3 x n): column j is z_{j-1} x (p_ee - p_{j-1})."""
    frames = joint_frames(chain, q)
    p_ee = frames[-1][:3, 3]
    cols = []
    for j in range(chain.n_joints):
        z = frames[j][:3, 2]
        p = frames[j][:3, 3]
        cols.append(np.cross(z, p_ee - p))
    return np.column_stack(cols)


def pseudoinverse(m: np.ndarray, rcond: float = 1e-8) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD, M+ = V S+ U^T.

    Singular values below rcond * max(singular values) are treated as zero,
    which bounds the joint velocities produced near singular poses.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ConfigurationError("pseudoinverse expects a 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise ConfigurationError("pseudoinverse expects finite entries")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m.shape[1], m.shape[0]))
    s_inv = np.where(s > rcond * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return vt.T @ np.diag(s_inv) @ u.T


def pseudoinverse_batch(ms: np.ndarray, rcond: float = 1e-8) -> np.ndarray:
    """pseudoinverse() applied across a (m, r, c) stack in one batched SVD."""
    ms = np.asarray(ms, dtype=float)
    u, s, vt = np.linalg.svd(ms, full_matrices=False)
    s_max = s.max(axis=1, keepdims=True)
    keep = s > rcond * np.where(s_max > 0, s_max, 1.0)
    s_inv = np.where(keep, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return np.einsum("mkj,mk,mik->mji", vt, s_inv, u)
