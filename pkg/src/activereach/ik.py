"""Comparison controller: damped-least-squares IK plus open-loop position execution.

The solver iterates on the *nominal* chain; the trajectory is then executed on
the (possibly mismatched) plant with no sensory feedback, which is exactly what
exposes model error in the final marker position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import KinematicChain, fk_position, geometric_jacobian


@dataclass
class IkSolution:
    q_goal: np.ndarray
    residual: float
    iterations: int
    converged: bool


def solve_ik(chain: KinematicChain, target, q_start, damping: float = 0.05,
             tol: float = 1e-5, max_iters: int = 500) -> IkSolution:
    """Damped least squares: q += J^T (J J^T + lambda^2 I)^-1 (target - FK(q)).

    Joint limits are enforced by projection after every iteration. Returns the
    best configuration found with converged=False if tol is never met.
    """
    target = np.asarray(target, dtype=float)
    q = chain.clamp(np.asarray(q_start, dtype=float).copy())
    lam2 = damping * damping
    best_q, best_r = q.copy(), float(np.linalg.norm(target - fk_position(chain, q)))
    if best_r < tol:
        return IkSolution(q_goal=best_q, residual=best_r, iterations=0, converged=True)
    for it in range(1, max_iters + 1):
        err = target - fk_position(chain, q)
        j = geometric_jacobian(chain, q)
        dq = j.T @ np.linalg.solve(j @ j.T + lam2 * np.eye(3), err)
        q = chain.clamp(q + dq)
        r = float(np.linalg.norm(target - fk_position(chain, q)))
        if r < best_r:
            best_q, best_r = q.copy(), r
        if r < tol:
            return IkSolution(q_goal=q, residual=r, iterations=it, converged=True)
    return IkSolution(q_goal=best_q, residual=best_r, iterations=max_iters, converged=False)


def execute_position_trajectory(plant, q_goal, duration: float, dt: float):
    """Open-loop, position-controlled move: linear joint interpolation over duration.

    The plant's joints follow the commanded profile exactly (clamped to joint
    limits); no sensory feedback is used. Returns the list of per-step true
    marker positions so callers can trace the path.
    """
    q_goal = np.asarray(q_goal, dtype=float)
    q_from = plant.state.q_arm.copy()
    steps = max(1, int(round(duration / dt)))
    markers = []
    for k in range(1, steps + 1):
        w = k / steps
        q_cmd = (1.0 - w) * q_from + w * q_goal
        plant.state.q_arm = plant.true_arm.clamp(q_cmd)
        plant.state.time += dt
        markers.append(plant.marker_world())
    return markers
