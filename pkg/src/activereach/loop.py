"""Closed-loop wiring: plant, arm engine, optional gaze engine, target source.

One ControlLoop.step() advances exactly one control period dt: read sensors,
update beliefs and actions, integrate the plant. Both the experiment harness
and the live session service drive this same loop, so a (config, seed, command
sequence) triple always reproduces the identical trace.
"""

from __future__ import annotations

import numpy as np

from .engine import (Attractor, BeliefState, SensorFrame, StepInfo,
                     step, step_head, PIXEL_2D)
from .kinematics import joint_frames
from .plant import Plant


class ControlLoop:
    def __init__(self, config, seed=None, collect_draw=False):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.plant = Plant(config.arm_chain, config.head_chain, config.rig,
                           noise=config.noise, mismatch=config.mismatch, rng=self.rng)
        self.model = config.arm_model()
        self.head_model = config.head_model()
        self.collect_draw = collect_draw
        self.head_tracking = config.head_tracking
        self.target_world = np.zeros(3)
        self.target_px = np.zeros(2)
        self.step_index = 0
        self.arm_info: StepInfo | None = None
        self.head_info: StepInfo | None = None
        self.reset()

    # --- state management --------------------------------------------------

    def reset(self, q_arm=None, q_head=None):
        cfg = self.config
        q_arm = cfg.initial_q_arm if q_arm is None else np.asarray(q_arm, dtype=float)
        q_head = cfg.head_static_q if q_head is None else np.asarray(q_head, dtype=float)
        self.plant.reset(q_arm, q_head)
        s_p0 = self.plant.read_arm_encoders()
        n = cfg.arm_chain.n_joints
        self.belief = BeliefState(mu=s_p0, mu_prime=np.zeros(n), action=np.zeros(n))
        nh = cfg.head_chain.n_joints
        self.head_belief = BeliefState(mu=self.plant.state.q_head.copy(),
                                       mu_prime=np.zeros(nh), action=np.zeros(nh))
        self.step_index = 0
        self.arm_info = None
        self.head_info = None
        if cfg.schedule is not None:
            self.target_world = cfg.schedule.position(0.0)

    def set_target_world(self, pos):
        self.target_world = np.asarray(pos, dtype=float).reshape(3)

    def set_target_pixels(self, px):
        self.target_px = np.asarray(px, dtype=float).reshape(2)

    def displace_marker(self, offset):
        self.plant.state.marker_offset = np.asarray(offset, dtype=float).reshape(3)

    def set_noise(self, noise):
        self.plant.noise = noise

    def set_precisions(self, precisions):
        self.config.precisions = precisions

    # --- one control period ------------------------------------------------

    def step(self) -> dict:
        cfg = self.config
        t = self.plant.state.time
        if cfg.schedule is not None:
            self.target_world = cfg.schedule.position(t)

        s_p = self.plant.read_arm_encoders()
        s_v, s_v_ok = self.plant.observe_marker(cfg.visual_mode)
        head_q_sensed = self.plant.state.q_head.copy()

        a_head = np.zeros(cfg.head_chain.n_joints)
        target_px, target_px_ok = self.plant.observe_point_pixel(self.target_world)
        if self.head_tracking:
            rho_head = Attractor(target=self.target_world,
                                 gain=cfg.head_attractor_gain if target_px_ok else 0.0,
                                 pixel_target=target_px if target_px_ok else
                                 self.head_model.rig.left.principal_point)
            frame_head = SensorFrame(s_p=head_q_sensed, timestamp=t)
            self.head_belief, self.head_info = step_head(
                self.head_model, self.head_belief, frame_head, rho_head,
                cfg.head_precisions or cfg.precisions)
            a_head = self.head_belief.action

        if cfg.visual_mode == PIXEL_2D:
            rho = Attractor(target=np.append(self.target_px, 0.0), gain=cfg.attractor_gain)
        else:
            rho = Attractor(target=self.target_world, gain=cfg.attractor_gain)
        frame = SensorFrame(s_p=s_p, s_v=s_v if s_v_ok else None, s_v_valid=s_v_ok,
                            timestamp=t, head_q=head_q_sensed)
        self.belief, self.arm_info = step(self.model, self.belief, frame, rho,
                                          cfg.precisions)

        self.plant.step(self.belief.action, a_head, cfg.precisions.dt)
        self.step_index += 1
        return self.record(frame, target_px if target_px_ok else np.full(2, np.nan))

    # --- error & bookkeeping -----------------------------------------------

    def reach_error(self) -> float:
        """Distance to the current target in the reach criterion's space."""
        if self.config.visual_mode == PIXEL_2D:
            px, ok = self.plant.marker_pixel_true()
            return float(np.linalg.norm(px - self.target_px)) if ok else np.inf
        s_v, ok = self.plant.observe_marker_noiseless()
        return float(np.linalg.norm(s_v - self.target_world)) if ok else np.inf

    def record(self, frame: SensorFrame, target_px) -> dict:
        cfg = self.config
        info = self.arm_info
        row = {"time": self.plant.state.time, "step": self.step_index}
        for i in range(cfg.arm_chain.n_joints):
            row[f"q_{i}"] = self.plant.state.q_arm[i]
        for i, v in enumerate(frame.s_p):
            row[f"s_p_{i}"] = v
        nv = self.model.n_v
        for i in range(nv):
            row[f"s_v_{i}"] = frame.s_v[i] if frame.s_v is not None else np.nan
        row["s_v_valid"] = int(frame.s_v_valid)
        for i, v in enumerate(self.belief.mu):
            row[f"mu_{i}"] = v
        for i, v in enumerate(self.belief.mu_prime):
            row[f"mu_prime_{i}"] = v
        for i, v in enumerate(self.belief.action):
            row[f"a_{i}"] = v
        row["F_arm"] = info.free_energy if info else np.nan
        row["F_head"] = self.head_info.free_energy if self.head_info else np.nan
        for i in range(cfg.head_chain.n_joints):
            row[f"q_head_{i}"] = self.plant.state.q_head[i]
        for i, v in enumerate(self.head_belief.mu):
            row[f"mu_head_{i}"] = v
        for i, v in enumerate(self.head_belief.action):
            row[f"a_head_{i}"] = v
        for i in range(3):
            row[f"target_{i}"] = self.target_world[i]
        row["target_px_u"], row["target_px_v"] = target_px
        if cfg.visual_mode == PIXEL_2D:
            row["target_px_u"], row["target_px_v"] = self.target_px
        mpx, mok = self.plant.marker_pixel_true()
        row["marker_px_u"] = mpx[0] if mok else np.nan
        row["marker_px_v"] = mpx[1] if mok else np.nan
        for i, v in enumerate(self.plant.state.marker_offset):
            row[f"marker_offset_{i}"] = v
        row["reach_error"] = self.reach_error()
        if self.collect_draw:
            row["draw"] = self.draw_payload()
        return row

    def columns(self) -> list:
        """Fixed CSV column order for this scenario's trace rows."""
        cfg = self.config
        cols = ["time", "step"]
        n = cfg.arm_chain.n_joints
        cols += [f"q_{i}" for i in range(n)]
        cols += [f"s_p_{i}" for i in range(n)]
        cols += [f"s_v_{i}" for i in range(self.model.n_v)]
        cols += ["s_v_valid"]
        cols += [f"mu_{i}" for i in range(n)]
        cols += [f"mu_prime_{i}" for i in range(n)]
        cols += [f"a_{i}" for i in range(n)]
        cols += ["F_arm", "F_head"]
        nh = cfg.head_chain.n_joints
        cols += [f"q_head_{i}" for i in range(nh)]
        cols += [f"mu_head_{i}" for i in range(nh)]
        cols += [f"a_head_{i}" for i in range(nh)]
        cols += [f"target_{i}" for i in range(3)]
        cols += ["target_px_u", "target_px_v", "marker_px_u", "marker_px_v"]
        cols += [f"marker_offset_{i}" for i in range(3)]
        cols += ["reach_error"]
        return cols

    def draw_payload(self) -> dict:
        """Server-computed geometry for the UI: the client does no physics."""
        info = self.arm_info
        arm_pts = [f[:3, 3].tolist() for f in
                   joint_frames(self.plant.true_arm, self.plant.state.q_arm)]
        head_pts = [f[:3, 3].tolist() for f in
                    joint_frames(self.plant.head, self.plant.state.q_head)]
        marker = self.plant.marker_world()
        wth = self.plant.head_pose()
        from .vision import project
        mpx_l, _ = project(self.plant.rig.left, marker, wth)
        mpx_r, _ = project(self.plant.rig.right, marker, wth)
        tpx, _ = project(self.plant.rig.left, self.target_world, wth)
        predicted = info.g_v.tolist() if info is not None else None
        vis_vel = None
        if info is not None and info.jacobian is not None:
            vis_vel = (info.jacobian @ self.belief.action).tolist()
        gpx = None
        if self.config.visual_mode == PIXEL_2D and info is not None and info.g_v_valid:
            gpx = info.g_v.tolist()
        else:
            model_ee = info.g_v if (info is not None and self.config.visual_mode != PIXEL_2D) else None
            if model_ee is not None:
                p, ok = project(self.plant.rig.left, model_ee, wth)
                gpx = p.tolist() if ok else None
        return {
            "arm_points": arm_pts,
            "head_points": head_pts,
            "marker": marker.tolist(),
            "target": self.target_world.tolist(),
            "predicted": predicted,
            "marker_px": [mpx_l.tolist(), mpx_r.tolist()],
            "target_px": tpx.tolist(),
            "predicted_px": gpx,
            "visual_velocity": vis_vel,
            "image_size": [self.plant.rig.left.width, self.plant.rig.left.height],
        }
