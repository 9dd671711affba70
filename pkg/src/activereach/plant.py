"""Simulated robot: velocity-integrated joints, noisy encoders, synthesized vision.

The plant deliberately owns its own (possibly perturbed) kinematic chains so the
controller's nominal model can disagree with it: link lengths scale per link and
encoders carry additive offsets. All randomness flows from one seeded generator
owned by the caller, so a scenario re-run with the same seed reproduces every
draw bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import PIXEL_2D, STEREO_3D
from .kinematics import ConfigurationError, KinematicChain, fk_position, forward_kinematics
from .vision import CameraRig, IllConditionedError, project, triangulate


@dataclass(frozen=True)
class NoiseSpec:
    encoder_sigma: float = 0.0   # radians
    pixel_sigma: float = 0.0     # pixels, per camera
    visual3d_sigma: float = 0.0  # meters, added to the reconstructed position
    seed: int = 0

    def __post_init__(self):
        if min(self.encoder_sigma, self.pixel_sigma, self.visual3d_sigma) < 0:
            raise ConfigurationError("noise standard deviations must be >= 0")


@dataclass(frozen=True)
class MismatchSpec:
    """Model/plant discrepancy: per-link length scaling and encoder offsets (radians)."""

    link_scale: tuple = ()
    encoder_offset: tuple = ()

    def __post_init__(self):
        for v in (*self.link_scale, *self.encoder_offset):
            if not np.isfinite(v):
                raise ConfigurationError("mismatch entries must be finite")

    def scaled(self, factor: float) -> "MismatchSpec":
        """Mismatch with the same pattern, magnitude multiplied by factor."""
        return MismatchSpec(
            link_scale=tuple(1.0 + factor * (s - 1.0) for s in self.link_scale),
            encoder_offset=tuple(factor * o for o in self.encoder_offset),
        )


@dataclass
class PlantState:
    q_arm: np.ndarray
    q_head: np.ndarray
    marker_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0


class Plant:
    """The simulated world the engine acts on.

    nominal_arm is the controller's model; the plant itself moves a copy with
    mismatched link lengths, and its encoders report q + offset + noise.
    """

    def __init__(self, nominal_arm: KinematicChain, head: KinematicChain,
                 rig: CameraRig, noise: NoiseSpec = NoiseSpec(),
                 mismatch: MismatchSpec = MismatchSpec(),
                 rng: np.random.Generator | None = None):
        self.nominal_arm = nominal_arm
        self.head = head
        self.rig = rig
        self.noise = noise
        self.mismatch = mismatch
        self.rng = rng if rng is not None else np.random.default_rng(noise.seed)
        if mismatch.link_scale:
            self.true_arm = nominal_arm.scaled_links(mismatch.link_scale)
        else:
            self.true_arm = nominal_arm
        self.encoder_offset = np.zeros(nominal_arm.n_joints)
        if mismatch.encoder_offset:
            off = np.asarray(mismatch.encoder_offset, dtype=float)
            if len(off) != nominal_arm.n_joints:
                raise ConfigurationError("encoder_offset length must match arm joints")
            self.encoder_offset = off
        self.state = PlantState(q_arm=np.zeros(nominal_arm.n_joints),
                                q_head=np.zeros(head.n_joints))

    def reset(self, q_arm, q_head, marker_offset=(0.0, 0.0, 0.0)):
        self.state = PlantState(
            q_arm=self.true_arm.clamp(np.asarray(q_arm, dtype=float)),
            q_head=self.head.clamp(np.asarray(q_head, dtype=float)),
            marker_offset=np.asarray(marker_offset, dtype=float).copy(),
        )

    def step(self, a_arm, a_head, dt: float):
        """Integrate clamped joint velocities for one period: q <- clamp(q + a dt)."""
        a_arm = np.clip(np.asarray(a_arm, dtype=float),
                        -self.true_arm.vel_limit, self.true_arm.vel_limit)
        a_head = np.clip(np.asarray(a_head, dtype=float),
                         -self.head.vel_limit, self.head.vel_limit)
        s = self.state
        s.q_arm = self.true_arm.clamp(s.q_arm + a_arm * dt)
        s.q_head = self.head.clamp(s.q_head + a_head * dt)
        s.time += dt
        return s

    def read_arm_encoders(self) -> np.ndarray:
        """s_p = q + offset + N(0, sigma^2), one seeded draw per joint per call."""
        draw = self.rng.standard_normal(self.true_arm.n_joints)
        return self.state.q_arm + self.encoder_offset + self.noise.encoder_sigma * draw

    def read_head_encoders(self) -> np.ndarray:
        draw = self.rng.standard_normal(self.head.n_joints)
        return self.state.q_head + self.noise.encoder_sigma * draw

    def head_pose(self):
        return forward_kinematics(self.head, self.state.q_head)

    def marker_world(self) -> np.ndarray:
        """True marker position: plant forward kinematics plus the marker offset."""
        return fk_position(self.true_arm, self.state.q_arm) + self.state.marker_offset

    def marker_pixel_true(self):
        """Noiseless left-eye projection of the marker (ground truth for metrics)."""
        return project(self.rig.left, self.marker_world(), self.head_pose())

    def observe_marker(self, mode: str):
        """(s_v, valid): the synthesized visual observation of the marker.

        pixel2d: noisy left-eye pixel. stereo3d: both eyes are projected with
        independent pixel noise and triangulated back to 3D. Out-of-view (or
        degenerate stereo) observations return valid=False.
        """
        point = self.marker_world()
        wth = self.head_pose()
        if mode == PIXEL_2D:
            pixel, ok = project(self.rig.left, point, wth)
            draw = self.rng.standard_normal(2)
            if not ok:
                return np.full(2, np.nan), False
            return pixel + self.noise.pixel_sigma * draw, True
        if mode == STEREO_3D:
            pl, ok_l = project(self.rig.left, point, wth)
            pr, ok_r = project(self.rig.right, point, wth)
            draw = self.rng.standard_normal(4)
            draw3 = self.rng.standard_normal(3)
            if not (ok_l and ok_r):
                return np.full(3, np.nan), False
            pl = pl + self.noise.pixel_sigma * draw[:2]
            pr = pr + self.noise.pixel_sigma * draw[2:]
            try:
                p = triangulate(self.rig, pl, pr, wth)
            except IllConditionedError:
                return np.full(3, np.nan), False
            return p + self.noise.visual3d_sigma * draw3, True
        raise ConfigurationError(f"unknown visual mode {mode!r}")

    def observe_marker_noiseless(self):
        """(marker position, visible-in-both-eyes); consumes no random draws.

        Ground truth for metrics and reach detection; identical to the stereo
        reconstruction when pixel noise is zero.
        """
        point = self.marker_world()
        wth = self.head_pose()
        _, ok_l = project(self.rig.left, point, wth)
        _, ok_r = project(self.rig.right, point, wth)
        return point, bool(ok_l and ok_r)

    def observe_point_pixel(self, point):
        """Noiseless left-eye pixel of an arbitrary world point (e.g. the target)."""
        return project(self.rig.left, point, self.head_pose())


@dataclass(frozen=True)
class TargetSchedule:
    """Piecewise-linear 3D target path; clamped to the end waypoints."""

    times: tuple
    points: tuple

    def __post_init__(self):
        if len(self.times) != len(self.points) or not self.times:
            raise ConfigurationError("schedule needs matching, non-empty times/points")
        if any(t1 >= t2 for t1, t2 in zip(self.times, self.times[1:])):
            raise ConfigurationError("schedule times must be strictly increasing")

    @staticmethod
    def static(point) -> "TargetSchedule":
        return TargetSchedule((0.0,), (tuple(float(v) for v in point),))

    def position(self, t: float) -> np.ndarray:
        times = self.times
        pts = [np.asarray(p, dtype=float) for p in self.points]
        if t <= times[0]:
            return pts[0].copy()
        if t >= times[-1]:
            return pts[-1].copy()
        i = int(np.searchsorted(times, t, side="right")) - 1
        w = (t - times[i]) / (times[i + 1] - times[i])
        return (1.0 - w) * pts[i] + w * pts[i + 1]


def prism_vertices(center, size) -> list:
    """The 8 corners of an axis-aligned rectangular prism, a fixed visiting order."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(size, dtype=float) / 2.0
    verts = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                verts.append(c + h * np.array([sx, sy, sz]))
    return verts
