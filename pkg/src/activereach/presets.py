"""Default chain and camera-rig geometry used by the packaged scenarios.

The numbers approximate an upper-body humanoid at desk scale (link lengths
0.15/0.25/0.25 m, 320x240 cameras); they are declared approximations, and every
experiment is defined relative to whatever chain the scenario config carries.
"""

from __future__ import annotations

import numpy as np

from .kinematics import DHLink, KinematicChain, RigidTransform, forward_kinematics
from .vision import CameraRig, PinholeCamera

D2R = np.pi / 180.0


def default_arm_chain() -> KinematicChain:
    """4-DOF reaching chain: torso_yaw, shoulder_roll, shoulder_yaw, elbow.

    Zero pose: upper arm forward, forearm hanging down; elbow at +90 deg is a
    straight forward reach. World frame: x forward, y left, z up.
    """
    links = (
        DHLink(a=0.0, alpha=np.pi / 2, d=0.15, theta_offset=0.0),
        DHLink(a=0.0, alpha=-np.pi / 2, d=0.0, theta_offset=-np.pi / 2),
        DHLink(a=0.0, alpha=np.pi / 2, d=0.25, theta_offset=0.0),
        DHLink(a=0.25, alpha=0.0, d=0.0, theta_offset=0.0),
    )
    return KinematicChain(
        links=links,
        joint_lower=np.array([-60, -100, -90, 5]) * D2R,
        joint_upper=np.array([60, 35, 90, 110]) * D2R,
        vel_limit=np.array([1.5, 1.5, 1.5, 1.5]),
        base_pose=RigidTransform.identity(),
        joint_names=("torso_yaw", "shoulder_roll", "shoulder_yaw", "elbow"),
    )


def lock_first_joint(chain: KinematicChain, angle: float = 0.0) -> KinematicChain:
    """Drop the first joint, folding its transform at `angle` into the base pose.

    Used for the torso-locked 2D scenarios.
    """
    first = chain.links[0]
    rz = RigidTransform.from_rpy((0.0, 0.0, angle + first.theta_offset))
    cm = first.constant_part()
    const = RigidTransform(cm[:3, :3], cm[:3, 3])
    base = chain.base_pose.compose(rz).compose(const)
    return KinematicChain(
        links=chain.links[1:],
        joint_lower=chain.joint_lower[1:],
        joint_upper=chain.joint_upper[1:],
        vel_limit=chain.vel_limit[1:],
        base_pose=base,
        joint_names=chain.joint_names[1:],
    )


def default_head_chain() -> KinematicChain:
    """3-DOF gaze chain: neck_pitch, neck_yaw, eyes_tilt.

    Base sits 0.42 m above the torso base; the camera rest pose built by
    default_rig() looks forward and 50 deg down toward the arm workspace.
    """
    links = (
        DHLink(a=0.0, alpha=-np.pi / 2, d=0.0, theta_offset=0.0),
        DHLink(a=0.0, alpha=np.pi / 2, d=0.0, theta_offset=0.0),
        DHLink(a=0.05, alpha=0.0, d=0.0, theta_offset=0.0),
    )
    base = RigidTransform.from_rpy((-np.pi / 2, 0.0, 0.0), (0.0, 0.0, 0.42))
    return KinematicChain(
        links=links,
        joint_lower=np.array([-40, -50, -35]) * D2R,
        joint_upper=np.array([40, 50, 35]) * D2R,
        vel_limit=np.array([1.0, 1.0, 1.0]),
        base_pose=base,
        joint_names=("neck_pitch", "neck_yaw", "eyes_tilt"),
    )


def _rest_camera_world(tilt_down: float) -> RigidTransform:
    """World pose of the eye platform center at the head rest configuration."""
    ct, st = np.cos(tilt_down), np.sin(tilt_down)
    z_cam = np.array([ct, 0.0, -st])       # optical axis: forward, tilted down
    x_cam = np.array([0.0, -1.0, 0.0])     # image right
    y_cam = np.cross(z_cam, x_cam)
    rot = np.column_stack([x_cam, y_cam, z_cam])
    return RigidTransform(rot, np.array([0.05, 0.0, 0.42]))


def default_rig(head_chain: KinematicChain | None = None,
                tilt_down_deg: float = 50.0,
                baseline: float = 0.068) -> CameraRig:
    """Stereo rig rigidly mounted on the head end-effector.

    Poses are expressed in the head end-effector frame so the cameras follow
    every head motion; left/right are separated by `baseline` along image-x.
    """
    if head_chain is None:
        head_chain = default_head_chain()
    world_t_ee = forward_kinematics(head_chain, np.zeros(head_chain.n_joints))
    cam0 = _rest_camera_world(tilt_down_deg * D2R)
    ee_t_cam0 = world_t_ee.inverse().compose(cam0)

    def eye(side: float) -> PinholeCamera:
        offset = np.array([side * baseline / 2.0, 0.0, 0.0])  # along image-x
        pose = ee_t_cam0.compose(RigidTransform(np.eye(3), offset))
        return PinholeCamera(fx=257.0, fy=257.0, cx=160.0, cy=120.0,
                             width=320, height=240, pose_in_head=pose)

    return CameraRig(left=eye(-1.0), right=eye(+1.0), baseline=baseline)
