"""Scenario configuration: declarative JSON/TOML files describing a full experiment.

Angles in config files are degrees for human editing and are converted to
radians when the objects are built. A scenario file fully describes both
kinematic chains, the camera rig, controller precisions, plant noise and
mismatch, targets, and the reach criterion, so a (file, seed) pair pins down a
whole experiment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import toml

from .engine import Attractor, GenerativeModel, HeadModel, Precisions, PIXEL_2D, STEREO_3D
from .kinematics import ConfigurationError, DHLink, KinematicChain, RigidTransform
from .plant import MismatchSpec, NoiseSpec, TargetSchedule
from .vision import CameraRig, PinholeCamera

D2R = np.pi / 180.0


def _chain_from_dict(d: dict) -> KinematicChain:
    links = tuple(DHLink(a=row["a"], alpha=row["alpha_deg"] * D2R, d=row["d"],
                         theta_offset=row.get("theta_offset_deg", 0.0) * D2R)
                  for row in d["links"])
    base = d.get("base_pose", {})
    pose = RigidTransform.from_rpy(
        tuple(v * D2R for v in base.get("rpy_deg", (0.0, 0.0, 0.0))),
        base.get("translation", (0.0, 0.0, 0.0)))
    return KinematicChain(
        links=links,
        joint_lower=np.asarray(d["joint_lower_deg"], dtype=float) * D2R,
        joint_upper=np.asarray(d["joint_upper_deg"], dtype=float) * D2R,
        vel_limit=np.asarray(d["vel_limit"], dtype=float),
        base_pose=pose,
        joint_names=tuple(d.get("joint_names", ())),
    )


def _chain_to_dict(c: KinematicChain) -> dict:
    rot = c.base_pose.rotation
    # recover rpy (x-y-z intrinsic) from the rotation matrix
    pitch = -np.arcsin(np.clip(rot[2, 0], -1.0, 1.0))
    roll = np.arctan2(rot[2, 1], rot[2, 2])
    yaw = np.arctan2(rot[1, 0], rot[0, 0])
    return {
        "links": [{"a": l.a, "alpha_deg": l.alpha / D2R, "d": l.d,
                   "theta_offset_deg": l.theta_offset / D2R} for l in c.links],
        "joint_lower_deg": (c.joint_lower / D2R).tolist(),
        "joint_upper_deg": (c.joint_upper / D2R).tolist(),
        "vel_limit": c.vel_limit.tolist(),
        "base_pose": {"rpy_deg": [roll / D2R, pitch / D2R, yaw / D2R],
                      "translation": c.base_pose.translation.tolist()},
        "joint_names": list(c.joint_names),
    }


def _camera_from_dict(d: dict) -> PinholeCamera:
    pose = d["pose_in_head"]
    return PinholeCamera(
        fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
        width=d["width"], height=d["height"],
        pose_in_head=RigidTransform(np.asarray(pose["rotation"], dtype=float),
                                    np.asarray(pose["translation"], dtype=float)))


def _camera_to_dict(c: PinholeCamera) -> dict:
    return {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
            "width": c.width, "height": c.height,
            "pose_in_head": {"rotation": c.pose_in_head.rotation.tolist(),
                             "translation": c.pose_in_head.translation.tolist()}}


@dataclass
class ReachCriterion:
    radius: float          # pixels (pixel2d) or meters (stereo3d)
    units: str             # "px" or "m"
    settle_steps: int = 3

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigurationError("reach radius must be positive")
        if self.settle_steps < 1:
            raise ConfigurationError("settle_steps must be >= 1")


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one experiment run."""

    name: str
    experiment: str                      # reaching2d | noise_sweep | adaptation | comparison | moving_target
    visual_mode: str
    arm_chain: KinematicChain
    head_chain: KinematicChain
    rig: CameraRig
    precisions: Precisions
    attractor_gain: float
    head_precisions: Precisions | None = None
    head_attractor_gain: float = 0.3
    head_tracking: bool = False
    head_static_q: np.ndarray = field(default_factory=lambda: np.zeros(3))
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    mismatch: MismatchSpec = field(default_factory=MismatchSpec)
    seed: int = 0
    trials: int = 1
    max_steps: int = 3000
    reach: ReachCriterion = field(default_factory=lambda: ReachCriterion(5.0, "px"))
    initial_q_arm: np.ndarray = field(default_factory=lambda: np.zeros(4))
    pixel_targets: list = field(default_factory=list)      # 2D experiments
    schedule: TargetSchedule | None = None                 # moving target
    options: dict = field(default_factory=dict)            # experiment-specific knobs

    def arm_model(self) -> GenerativeModel:
        return GenerativeModel(chain=self.arm_chain, visual_mode=self.visual_mode,
                               rig=self.rig, head_chain=self.head_chain)

    def head_model(self) -> HeadModel:
        return HeadModel(chain=self.head_chain, rig=self.rig)

    @staticmethod
    def from_dict(d: dict) -> "ScenarioConfig":
        mode = d["visual_mode"]
        if mode not in (PIXEL_2D, STEREO_3D):
            raise ConfigurationError(f"unknown visual_mode {mode!r}")
        prec = d["precisions"]
        precisions = Precisions(sigma_sp=prec["sigma_sp"], sigma_sv=prec["sigma_sv"],
                                sigma_smu=prec["sigma_smu"],
                                action_gain=prec["action_gain"], dt=prec["dt"])
        head_prec = None
        if "head_precisions" in d:
            hp = d["head_precisions"]
            head_prec = Precisions(sigma_sp=hp["sigma_sp"], sigma_sv=hp.get("sigma_sv", 1.0),
                                   sigma_smu=hp["sigma_smu"],
                                   action_gain=hp["action_gain"], dt=prec["dt"])
        noise = d.get("noise", {})
        mismatch = d.get("mismatch", {})
        reach = d.get("reach", {"radius": 5.0, "units": "px"})
        schedule = None
        if "schedule" in d:
            schedule = TargetSchedule(times=tuple(w["t"] for w in d["schedule"]),
                                      points=tuple(tuple(w["pos"]) for w in d["schedule"]))
        return ScenarioConfig(
            name=d["name"],
            experiment=d["experiment"],
            visual_mode=mode,
            arm_chain=_chain_from_dict(d["arm_chain"]),
            head_chain=_chain_from_dict(d["head_chain"]),
            rig=CameraRig(left=_camera_from_dict(d["rig"]["left"]),
                          right=_camera_from_dict(d["rig"]["right"]),
                          baseline=d["rig"]["baseline"]),
            precisions=precisions,
            attractor_gain=d["attractor_gain"],
            head_precisions=head_prec,
            head_attractor_gain=d.get("head_attractor_gain", 0.3),
            head_tracking=d.get("head_tracking", False),
            head_static_q=np.asarray(d.get("head_static_q_deg", [0, 0, 0]), dtype=float) * D2R,
            noise=NoiseSpec(encoder_sigma=noise.get("encoder_sigma_deg", 0.0) * D2R,
                            pixel_sigma=noise.get("pixel_sigma", 0.0),
                            visual3d_sigma=noise.get("visual3d_sigma", 0.0),
                            seed=d.get("seed", 0)),
            mismatch=MismatchSpec(link_scale=tuple(mismatch.get("link_scale", ())),
                                  encoder_offset=tuple(np.asarray(
                                      mismatch.get("encoder_offset_deg", ()), dtype=float) * D2R)),
            seed=d.get("seed", 0),
            trials=d.get("trials", 1),
            max_steps=d.get("max_steps", 3000),
            reach=ReachCriterion(radius=reach["radius"], units=reach["units"],
                                 settle_steps=reach.get("settle_steps", 3)),
            initial_q_arm=np.asarray(d.get("initial_q_arm_deg",
                                           [0.0] * len(d["arm_chain"]["links"])),
                                     dtype=float) * D2R,
            pixel_targets=[tuple(t) for t in d.get("pixel_targets", [])],
            schedule=schedule,
            options=d.get("options", {}),
        )

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "experiment": self.experiment,
            "visual_mode": self.visual_mode,
            "arm_chain": _chain_to_dict(self.arm_chain),
            "head_chain": _chain_to_dict(self.head_chain),
            "rig": {"left": _camera_to_dict(self.rig.left),
                    "right": _camera_to_dict(self.rig.right),
                    "baseline": self.rig.baseline},
            "precisions": {"sigma_sp": self.precisions.sigma_sp,
                           "sigma_sv": self.precisions.sigma_sv,
                           "sigma_smu": self.precisions.sigma_smu,
                           "action_gain": self.precisions.action_gain,
                           "dt": self.precisions.dt},
            "attractor_gain": self.attractor_gain,
            "head_attractor_gain": self.head_attractor_gain,
            "head_tracking": self.head_tracking,
            "head_static_q_deg": (self.head_static_q / D2R).tolist(),
            "noise": {"encoder_sigma_deg": self.noise.encoder_sigma / D2R,
                      "pixel_sigma": self.noise.pixel_sigma,
                      "visual3d_sigma": self.noise.visual3d_sigma},
            "mismatch": {"link_scale": list(self.mismatch.link_scale),
                         "encoder_offset_deg": [v / D2R for v in self.mismatch.encoder_offset]},
            "seed": self.seed,
            "trials": self.trials,
            "max_steps": self.max_steps,
            "reach": {"radius": self.reach.radius, "units": self.reach.units,
                      "settle_steps": self.reach.settle_steps},
            "initial_q_arm_deg": (self.initial_q_arm / D2R).tolist(),
            "pixel_targets": [list(t) for t in self.pixel_targets],
            "options": self.options,
        }
        if self.head_precisions is not None:
            d["head_precisions"] = {"sigma_sp": self.head_precisions.sigma_sp,
                                    "sigma_smu": self.head_precisions.sigma_smu,
                                    "action_gain": self.head_precisions.action_gain}
        if self.schedule is not None:
            d["schedule"] = [{"t": t, "pos": list(p)}
                             for t, p in zip(self.schedule.times, self.schedule.points)]
        return d


def builtin_scenario_names() -> list:
    files = resources.files("activereach") / "configs"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_scenario(path_or_name: str) -> ScenarioConfig:
    """Load a scenario from a .json/.toml path or a packaged scenario name."""
    p = Path(path_or_name)
    if p.suffix in (".json", ".toml") and p.exists():
        text = p.read_text()
        data = toml.loads(text) if p.suffix == ".toml" else json.loads(text)
        return ScenarioConfig.from_dict(data)
    packaged = resources.files("activereach") / "configs" / f"{path_or_name}.json"
    if packaged.is_file():
        return ScenarioConfig.from_dict(json.loads(packaged.read_text()))
    raise ConfigurationError(
        f"no scenario file {path_or_name!r}; builtin names: {builtin_scenario_names()}")
