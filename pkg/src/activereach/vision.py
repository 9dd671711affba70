"""Pinhole cameras mounted on the head end-effector, projection and stereo triangulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import ConfigurationError, RigidTransform

MIN_DEPTH = 1e-6


class IllConditionedError(RuntimeError):
    """Raised when triangulation rays are too close to parallel."""


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose_in_head: RigidTransform

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError("image size must be positive")

    @property
    def principal_point(self) -> np.ndarray:
        return np.array([self.cx, self.cy])


@dataclass(frozen=True)
class CameraRig:
    left: PinholeCamera
    right: PinholeCamera
    baseline: float

    def __post_init__(self):
        if self.baseline <= 0:
            raise ConfigurationError("stereo baseline must be positive")


def project(camera: PinholeCamera, point, world_t_head: RigidTransform):
    """Project a world point through a head-mounted pinhole camera.

    Returns (pixel, valid). valid is False when the point is behind the image
    plane or projects outside the image bounds; the pixel values are still the
    geometric projection when the depth is positive.
    """
    rh, th = world_t_head.rotation, world_t_head.translation
    pose = camera.pose_in_head
    r_wc = rh @ pose.rotation
    t_wc = rh @ pose.translation + th
    p_cam = r_wc.T @ (np.asarray(point, dtype=float) - t_wc)
    z = p_cam[2]
    if z < MIN_DEPTH:
        return np.array([np.nan, np.nan]), False
    u = camera.cx + camera.fx * p_cam[0] / z
    v = camera.cy + camera.fy * p_cam[1] / z
    pixel = np.array([u, v])
    valid = bool(0.0 <= u < camera.width and 0.0 <= v < camera.height)
    return pixel, valid


def project_batch(camera: PinholeCamera, points: np.ndarray,
                  world_t_head: RigidTransform):
    """Project (m, 3) world points; returns (pixels (m, 2), finite (m,), in_view (m,)).

    finite means positive depth (the projection is differentiable there);
    in_view additionally requires the pixel to land inside the image.
    """
    rh, th = world_t_head.rotation, world_t_head.translation
    pose = camera.pose_in_head
    r_wc = rh @ pose.rotation
    t_wc = rh @ pose.translation + th
    p_cam = (np.asarray(points, dtype=float) - t_wc) @ r_wc
    z = p_cam[:, 2]
    finite = z >= MIN_DEPTH
    safe_z = np.where(finite, z, 1.0)
    pixels = np.empty((len(p_cam), 2))
    pixels[:, 0] = camera.cx + camera.fx * p_cam[:, 0] / safe_z
    pixels[:, 1] = camera.cy + camera.fy * p_cam[:, 1] / safe_z
    pixels[~finite] = np.nan
    in_view = finite & (pixels[:, 0] >= 0.0) & (pixels[:, 0] < camera.width) \
        & (pixels[:, 1] >= 0.0) & (pixels[:, 1] < camera.height)
    return pixels, finite, in_view


def project_point_through_poses(camera: PinholeCamera, point,
                                head_poses: np.ndarray):
    """Pixel of one world point seen under (m, 4, 4) head poses.

    Returns (pixels (m, 2), finite (m,)); used by the gaze-chain Jacobian.
    """
    pose = camera.pose_in_head
    rh = head_poses[:, :3, :3]
    th = head_poses[:, :3, 3]
    r_wc = rh @ pose.rotation                      # (m, 3, 3)
    t_wc = np.einsum("mij,j->mi", rh, pose.translation) + th
    diff = np.asarray(point, dtype=float) - t_wc
    p_cam = np.einsum("mji,mj->mi", r_wc, diff)    # R^T (p - t)
    z = p_cam[:, 2]
    finite = z >= MIN_DEPTH
    safe_z = np.where(finite, z, 1.0)
    pixels = np.empty((len(z), 2))
    pixels[:, 0] = camera.cx + camera.fx * p_cam[:, 0] / safe_z
    pixels[:, 1] = camera.cy + camera.fy * p_cam[:, 1] / safe_z
    pixels[~finite] = np.nan
    return pixels, finite


def back_project_ray(camera: PinholeCamera, pixel, world_t_head: RigidTransform):
    """World-frame (origin, unit direction) of the viewing ray through a pixel."""
    world_t_cam = world_t_head.compose(camera.pose_in_head)
    d_cam = np.array([(pixel[0] - camera.cx) / camera.fx,
                      (pixel[1] - camera.cy) / camera.fy,
                      1.0])
    d = world_t_cam.rotation @ d_cam
    return world_t_cam.translation, d / np.linalg.norm(d)


def triangulate(rig: CameraRig, pixel_left, pixel_right,
                world_t_head: RigidTransform) -> np.ndarray:
    """Least-squares intersection of the two back-projected rays (world frame).

    Raises IllConditionedError when the rays are near parallel (no usable
    disparity).
    """
    o1, d1 = back_project_ray(rig.left, pixel_left, world_t_head)
    o2, d2 = back_project_ray(rig.right, pixel_right, world_t_head)
    # minimize |o1 + t1 d1 - (o2 + t2 d2)| over (t1, t2)
    a = np.column_stack([d1, -d2])
    g = a.T @ a
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    if det < 1e-12:
        raise IllConditionedError("stereo rays are near parallel; disparity too small")
    t = np.linalg.solve(g, a.T @ (o2 - o1))
    p1 = o1 + t[0] * d1
    p2 = o2 + t[1] * d2
    return 0.5 * (p1 + p2)
