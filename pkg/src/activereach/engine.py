"""Free-energy perception/action engine for a velocity-controlled chain.

The belief over joint angles mu (with first-order dynamics mu_prime) and the
joint velocity command (action) are all updated by gradient steps on the same
Laplace-encoded energy: a precision-weighted sum of squared prediction errors
from the encoders, the visual observation of the end-effector, and the
attractor-shaped belief dynamics. One `step` consumes one sensor frame and
advances belief and action by a single Euler interval dt.

Visual predictions, their Jacobians, and the dynamics Jacobian are computed by
central finite differences so that every gradient stays exactly consistent
with `free_energy` regardless of the visual mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import (ConfigurationError, KinematicChain, RigidTransform,
                         fk_poses_batch, fk_position, fk_positions_batch,
                         forward_kinematics, pseudoinverse_batch)
from .vision import CameraRig, project, project_batch, project_point_through_poses

PIXEL_2D = "pixel2d"
STEREO_3D = "stereo3d"

FD_STEP = 1e-6


class NumericError(RuntimeError):
    """Raised when an update produces non-finite values; message carries a state dump."""


@dataclass
class BeliefState:
    """Believed joint angles mu, believed joint velocities mu_prime, and the
    velocity command (action), all of length n_joints."""

    mu: np.ndarray
    mu_prime: np.ndarray
    action: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).reshape(-1)
        self.mu_prime = np.asarray(self.mu_prime, dtype=float).reshape(-1)
        self.action = np.asarray(self.action, dtype=float).reshape(-1)
        if not (len(self.mu) == len(self.mu_prime) == len(self.action)):
            raise ConfigurationError("belief vectors must share one length")

    @staticmethod
    def resting(n: int) -> "BeliefState":
        return BeliefState(np.zeros(n), np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class Precisions:
    """Variances of the three likelihood terms plus the action gain and cycle period."""

    sigma_sp: float
    sigma_sv: float
    sigma_smu: float
    action_gain: float
    dt: float

    def __post_init__(self):
        if min(self.sigma_sp, self.sigma_sv, self.sigma_smu) <= 0:
            raise ConfigurationError("variances must be positive")
        if self.dt <= 0 or self.action_gain <= 0:
            raise ConfigurationError("dt and action_gain must be positive")


@dataclass
class Attractor:
    """Causal variables: goal location and gain.

    target holds the goal in visual space (meters in stereo mode; pixel pair in
    the first two entries in pixel mode). pixel_target carries the tracked
    object's observed pixel for the head controller.
    """

    target: np.ndarray
    gain: float
    pixel_target: np.ndarray | None = None

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float).reshape(-1)
        if self.gain < 0:
            raise ConfigurationError("attractor gain must be non-negative")
        if self.pixel_target is not None:
            self.pixel_target = np.asarray(self.pixel_target, dtype=float).reshape(2)


@dataclass(frozen=True)
class GenerativeModel:
    """Nominal kinematics plus camera model defining g_v for one arm chain."""

    chain: KinematicChain
    visual_mode: str
    rig: CameraRig | None = None
    head_chain: KinematicChain | None = None

    def __post_init__(self):
        if self.visual_mode not in (PIXEL_2D, STEREO_3D):
            raise ConfigurationError(f"unknown visual mode {self.visual_mode!r}")
        if self.visual_mode == PIXEL_2D and self.rig is None:
            raise ConfigurationError("pixel mode needs a camera rig")

    @property
    def n_v(self) -> int:
        return 2 if self.visual_mode == PIXEL_2D else 3

    @property
    def n_p(self) -> int:
        return self.chain.n_joints


@dataclass(frozen=True)
class HeadModel:
    """Gaze chain plus the rig it carries; the tracked point comes in via the attractor."""

    chain: KinematicChain
    rig: CameraRig


@dataclass
class SensorFrame:
    """One synchronized reading: encoders s_p, visual observation s_v, validity.

    head_q records the head configuration the image was taken at; pixel-mode
    predictions are evaluated against the same pose.
    """

    s_p: np.ndarray
    s_v: np.ndarray | None = None
    s_v_valid: bool = False
    timestamp: float = 0.0
    head_q: np.ndarray | None = None

    def __post_init__(self):
        self.s_p = np.asarray(self.s_p, dtype=float).reshape(-1)
        if self.s_v is not None:
            self.s_v = np.asarray(self.s_v, dtype=float).reshape(-1)
        if self.head_q is not None:
            self.head_q = np.asarray(self.head_q, dtype=float).reshape(-1)


def head_pose(model: GenerativeModel, head_q) -> RigidTransform:
    if model.head_chain is None or head_q is None:
        return RigidTransform.identity()
    return forward_kinematics(model.head_chain, head_q)


def _predict_posed(model: GenerativeModel, mu, world_t_head):
    """(g_v(mu), valid): valid needs only positive depth, not image bounds.

    An out-of-frame predicted pixel is still a usable geometric prediction (it
    is what lets the attractor pull a wandering belief back into view); only a
    point behind the camera has no projection at all.
    """
    p = fk_position(model.chain, mu)
    if model.visual_mode == STEREO_3D:
        return p, True
    pixel, _ = project(model.rig.left, p, world_t_head)
    return pixel, bool(np.all(np.isfinite(pixel)))


def predict_visual(model: GenerativeModel, mu, head_q=None):
    """g_v(mu): model end-effector position in visual space.

    Stereo mode returns the forward-kinematics position; pixel mode projects it
    through the left camera at the given head configuration. Returns
    (prediction, valid); valid is False when the predicted point lies behind
    the image plane (no projection exists).
    """
    return _predict_posed(model, mu, head_pose(model, head_q))


def _predict_batch(model: GenerativeModel, mus, world_t_head):
    """g_v over a (m, n) batch -> (values (m, n_v), valid (m,))."""
    pts = fk_positions_batch(model.chain, mus)
    if model.visual_mode == STEREO_3D:
        return pts, np.ones(len(pts), dtype=bool)
    pixels, finite, _ = project_batch(model.rig.left, pts, world_t_head)
    return pixels, finite


def _perturbation_stack(mus, h):
    """Rows [c, c+h e_0, c-h e_0, ..., c+h e_{n-1}, c-h e_{n-1}] per center c."""
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    m, n = mus.shape
    k = 2 * n + 1
    stacked = np.repeat(mus, k, axis=0)
    for j in range(n):
        stacked[1 + 2 * j::k, j] += h
        stacked[2 + 2 * j::k, j] -= h
    return stacked, m, n, k


def _eval_bundle(model: GenerativeModel, mus, rho, world_t_head, h=FD_STEP):
    """Per center mu: (g_v, valid, J by central FD, f = capped J+ A).

    All forward evaluations for every center and its 2n perturbations run as
    one batched FK/projection and one batched SVD. Centers with no projection
    (behind the camera) get a zero attractor, hence zero f, without touching
    their Jacobian; a center valid at the middle but undefined at a
    perturbation is a hard error, as that Jacobian would be meaningless.
    """
    stacked, m, n, k = _perturbation_stack(mus, h)
    values, finite = _predict_batch(model, stacked, world_t_head)
    values = values.reshape(m, k, model.n_v)
    finite = finite.reshape(m, k)

    g_v = values[:, 0]
    valid = finite[:, 0]
    if not np.all(finite[valid]):
        raise NumericError("visual prediction undefined near a requested configuration")
    jac = (values[:, 1::2] - values[:, 2::2]) / (2.0 * h)   # (m, n, n_v)
    jac = np.ascontiguousarray(np.swapaxes(jac, 1, 2))       # (m, n_v, n)

    attr = rho.gain * (rho.target[: model.n_v] - g_v)        # (m, n_v)
    f = np.zeros((m, n))
    if np.any(valid) and rho.gain != 0.0:
        pinv = pseudoinverse_batch(np.where(valid[:, None, None], jac, np.eye(model.n_v, n)))
        f = np.einsum("mij,mj->mi", pinv, attr)
        cap = 2.0 * np.linalg.norm(model.chain.vel_limit)
        norms = np.linalg.norm(f, axis=1)
        over = norms > cap
        if np.any(over):
            f[over] *= (cap / norms[over])[:, None]
        f[~valid] = 0.0
    return g_v, valid, jac, f


def visual_jacobian(model: GenerativeModel, mu, head_q=None, h=FD_STEP) -> np.ndarray:
    """d g_v / d mu (n_v x n_p) by central finite differences."""
    wth = head_pose(model, head_q)
    stacked, m, n, k = _perturbation_stack(mu, h)
    values, finite = _predict_batch(model, stacked, wth)
    if not np.all(finite):
        raise NumericError(f"visual prediction undefined near mu={np.asarray(mu)!r}")
    values = values.reshape(k, model.n_v)
    return ((values[1::2] - values[2::2]) / (2.0 * h)).T


def attractor_arm(model: GenerativeModel, mu, rho: Attractor, head_q=None):
    """A(mu, rho) = gain * (target - g_v(mu)); zeros with valid=False when the
    prediction is out of view."""
    value, valid = _predict_posed(model, mu, head_pose(model, head_q))
    if not valid:
        return np.zeros(model.n_v), False
    return rho.gain * (rho.target[: model.n_v] - value), True


def dynamics_f(model: GenerativeModel, mu, rho: Attractor, head_q=None) -> np.ndarray:
    """Believed joint dynamics f(mu, rho): pseudoinverse of the visual Jacobian
    applied to the attractor, norm-capped to twice the velocity-limit norm."""
    wth = head_pose(model, head_q)
    _, _, _, f = _eval_bundle(model, np.atleast_2d(mu), rho, wth)
    return f[0]


@dataclass
class StepInfo:
    """Per-cycle byproducts kept for traces and snapshots."""

    free_energy: float
    g_v: np.ndarray
    g_v_valid: bool
    f: np.ndarray
    jacobian: np.ndarray | None
    used_visual: bool
    residual_p: np.ndarray
    residual_v: np.ndarray | None


def _core(model, belief, frame, rho, precisions, world_t_head, h=FD_STEP):
    """Shared evaluation of predictions, residuals, gradients and energy.

    Centers evaluated in one bundle: row 0 is mu itself, rows 1..2n are the
    mu +- h e_j perturbations whose f values give df/dmu by central FD.
    """
    mu, mu_p = belief.mu, belief.mu_prime
    n = model.n_p
    centers = np.repeat(mu[None, :], 2 * n + 1, axis=0)
    for j in range(n):
        centers[1 + 2 * j, j] += h
        centers[2 + 2 * j, j] -= h
    g_v_all, valid_all, jac_all, f_all = _eval_bundle(model, centers, rho, world_t_head, h)

    g_v, pred_valid, jac, f = g_v_all[0], bool(valid_all[0]), jac_all[0], f_all[0]
    df_dmu = ((f_all[1::2] - f_all[2::2]) / (2.0 * h)).T

    use_visual = bool(frame.s_v_valid and pred_valid and frame.s_v is not None)
    r_p = frame.s_p - mu
    r_v = (frame.s_v - g_v) if use_visual else None
    r_f = mu_p - f

    energy = 0.5 * float(r_p @ r_p) / precisions.sigma_sp \
        + 0.5 * float(r_f @ r_f) / precisions.sigma_smu
    if use_visual:
        energy += 0.5 * float(r_v @ r_v) / precisions.sigma_sv

    grad_visual = np.zeros_like(mu)
    if use_visual:
        grad_visual = jac.T @ r_v / precisions.sigma_sv

    g_mu = r_p / precisions.sigma_sp + grad_visual + df_dmu.T @ r_f / precisions.sigma_smu
    g_mu_prime = (f - mu_p) / precisions.sigma_smu
    g_action = -precisions.dt * (r_p / precisions.sigma_sp + grad_visual)

    info = StepInfo(free_energy=energy, g_v=g_v, g_v_valid=pred_valid, f=f,
                    jacobian=jac if use_visual else None, used_visual=use_visual,
                    residual_p=r_p, residual_v=r_v)
    return g_mu, g_mu_prime, g_action, info


def free_energy(model, belief, frame, rho, precisions, include_constants=False) -> float:
    """Laplace-encoded energy of one frame; log-variance constants excluded by default."""
    wth = head_pose(model, frame.head_q)
    _, _, _, info = _core(model, belief, frame, rho, precisions, wth)
    e = info.free_energy
    if include_constants:
        n_p, n_v = model.n_p, model.n_v
        e += 0.5 * n_p * np.log(2.0 * np.pi * precisions.sigma_sp)
        e += 0.5 * n_p * np.log(2.0 * np.pi * precisions.sigma_smu)
        if info.used_visual:
            e += 0.5 * n_v * np.log(2.0 * np.pi * precisions.sigma_sv)
    return e


def grad_mu(model, belief, frame, rho, precisions) -> np.ndarray:
    """-dF/dmu: encoder pull + visual pull + dynamics-model pull (Jacobians by FD)."""
    wth = head_pose(model, frame.head_q)
    g, _, _, _ = _core(model, belief, frame, rho, precisions, wth)
    return g


def grad_mu_prime(model, belief, frame, rho, precisions) -> np.ndarray:
    """-dF/dmu_prime = (f(mu, rho) - mu_prime) / sigma_smu."""
    wth = head_pose(model, frame.head_q)
    _, g, _, _ = _core(model, belief, frame, rho, precisions, wth)
    return g


def action_sensitivity(model, mu, head_q, precisions):
    """(ds_p/da, ds_v/da) under velocity control over one cycle.

    Joint encoders respond one cycle of integration per unit action with no
    cross-coupling, so ds_p/da = dt * I; the visual channel follows by the
    chain rule, ds_v/da = dt * dg_v/dmu.
    """
    n = model.n_p
    dsp = precisions.dt * np.eye(n)
    dsv = precisions.dt * visual_jacobian(model, mu, head_q)
    return dsp, dsv


def grad_action(model, belief, frame, rho, precisions) -> np.ndarray:
    """-dF/da: sensors are the only channel action reaches, each scaled by dt."""
    wth = head_pose(model, frame.head_q)
    _, _, g, _ = _core(model, belief, frame, rho, precisions, wth)
    return g


def step(model, belief, frame, rho, precisions):
    """One Euler update of (mu, mu_prime, action) from one sensor frame.

    mu        <- mu + dt * (mu_prime - dF/dmu)
    mu_prime  <- mu_prime - dt * dF/dmu_prime
    action    <- clamp(action - dt * k_a * dF/da, +-vel_limit)

    Returns (new BeliefState, StepInfo). Raises NumericError with a state dump
    if any update goes non-finite.
    """
    wth = head_pose(model, frame.head_q)
    g_mu, g_mu_prime, g_action, info = _core(model, belief, frame, rho, precisions, wth)

    dt = precisions.dt
    mu = belief.mu + dt * (belief.mu_prime + g_mu)
    mu_prime = belief.mu_prime + dt * g_mu_prime
    action = belief.action + dt * precisions.action_gain * g_action
    action = np.clip(action, -model.chain.vel_limit, model.chain.vel_limit)

    new = BeliefState(mu, mu_prime, action)
    for name, v in (("mu", mu), ("mu_prime", mu_prime), ("action", action)):
        if not np.all(np.isfinite(v)):
            raise NumericError(
                f"non-finite {name} after update: state mu={belief.mu!r} "
                f"mu_prime={belief.mu_prime!r} action={belief.action!r} "
                f"frame s_p={frame.s_p!r} s_v={frame.s_v!r} rho={rho!r}")
    return new, info


# --- head tracking: same update law with the visual likelihood term absent ---


def attractor_head(rho: Attractor, rig: CameraRig) -> np.ndarray:
    """A_e = gain * (image centre - observed object pixel), left eye."""
    if rho.pixel_target is None:
        return np.zeros(2)
    return rho.gain * (rig.left.principal_point - rho.pixel_target)


def head_visual_jacobian(model: HeadModel, mu_e, point, h=FD_STEP) -> np.ndarray:
    """d(pixel of tracked point)/d(head joints), 2 x n, by central differences."""
    stacked, _, n, _ = _perturbation_stack(mu_e, h)
    poses = fk_poses_batch(model.chain, stacked)
    pixels, finite = project_point_through_poses(model.rig.left, point, poses)
    if not np.all(finite):
        raise NumericError(f"tracked point unprojectable near head config {np.asarray(mu_e)!r}")
    return ((pixels[1::2] - pixels[2::2]) / (2.0 * h)).T


def _head_f_batch(model: HeadModel, mu_es, rho, h=FD_STEP):
    """f_e per head-config row; centers where the point cannot be projected get zeros."""
    mu_es = np.atleast_2d(np.asarray(mu_es, dtype=float))
    m, n = mu_es.shape
    a_e = attractor_head(rho, model.rig)
    if rho.pixel_target is None or not np.any(a_e):
        return np.zeros((m, n))
    stacked, _, _, k = _perturbation_stack(mu_es, h)
    poses = fk_poses_batch(model.chain, stacked)
    pixels, finite = project_point_through_poses(model.rig.left, rho.target, poses)
    pixels = pixels.reshape(m, k, 2)
    usable = np.all(finite.reshape(m, k), axis=1)
    jac = (pixels[:, 1::2] - pixels[:, 2::2]) / (2.0 * h)    # (m, n, 2)
    jac = np.ascontiguousarray(np.swapaxes(jac, 1, 2))
    f = np.zeros((m, n))
    if np.any(usable):
        pinv = pseudoinverse_batch(np.where(usable[:, None, None], jac, np.eye(2, n)))
        f = pinv @ a_e
        cap = 2.0 * np.linalg.norm(model.chain.vel_limit)
        norms = np.linalg.norm(f, axis=1)
        over = norms > cap
        if np.any(over):
            f[over] *= (cap / norms[over])[:, None]
        f[~usable] = 0.0
    return f


def dynamics_f_head(model: HeadModel, mu_e, rho: Attractor) -> np.ndarray:
    """f_e = J_v+ A_e: pixel attractor mapped into head joint velocities."""
    return _head_f_batch(model, mu_e, rho)[0]


def free_energy_head(model: HeadModel, belief, frame, rho, precisions) -> float:
    """Head energy: encoder term plus dynamics term (the eyes carry no marker)."""
    r_p = frame.s_p - belief.mu
    r_f = belief.mu_prime - dynamics_f_head(model, belief.mu, rho)
    return 0.5 * float(r_p @ r_p) / precisions.sigma_sp \
        + 0.5 * float(r_f @ r_f) / precisions.sigma_smu


def step_head(model: HeadModel, belief, frame, rho, precisions, h=FD_STEP):
    """One Euler update for the gaze chain; mirrors `step` without s_v terms."""
    n = model.chain.n_joints
    centers = np.repeat(belief.mu[None, :], 2 * n + 1, axis=0)
    for j in range(n):
        centers[1 + 2 * j, j] += h
        centers[2 + 2 * j, j] -= h
    f_all = _head_f_batch(model, centers, rho, h)
    f_e = f_all[0]
    df = ((f_all[1::2] - f_all[2::2]) / (2.0 * h)).T

    r_p = frame.s_p - belief.mu
    r_f = belief.mu_prime - f_e
    g_mu = r_p / precisions.sigma_sp + df.T @ r_f / precisions.sigma_smu
    g_mu_prime = (f_e - belief.mu_prime) / precisions.sigma_smu
    g_action = -precisions.dt * r_p / precisions.sigma_sp

    dt = precisions.dt
    mu = belief.mu + dt * (belief.mu_prime + g_mu)
    mu_prime = belief.mu_prime + dt * g_mu_prime
    action = belief.action + dt * precisions.action_gain * g_action
    action = np.clip(action, -model.chain.vel_limit, model.chain.vel_limit)

    new = BeliefState(mu, mu_prime, action)
    if not all(np.all(np.isfinite(v)) for v in (mu, mu_prime, action)):
        raise NumericError(f"non-finite head update from belief {belief!r}")
    energy = 0.5 * float(r_p @ r_p) / precisions.sigma_sp \
        + 0.5 * float(r_f @ r_f) / precisions.sigma_smu
    info = StepInfo(free_energy=energy, g_v=np.zeros(2), g_v_valid=False, f=f_e,
                    jacobian=None, used_visual=False, residual_p=r_p, residual_v=None)
    return new, info
