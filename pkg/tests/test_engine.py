import numpy as np
import pytest

from activereach.engine import (Attractor, BeliefState, GenerativeModel,
                                HeadModel, NumericError, Precisions,
                                SensorFrame, action_sensitivity, attractor_arm,
                                attractor_head, dynamics_f, dynamics_f_head,
                                free_energy, free_energy_head, grad_action,
                                grad_mu, grad_mu_prime, head_visual_jacobian,
                                predict_visual, step, step_head,
                                visual_jacobian, PIXEL_2D, STEREO_3D)
from activereach.kinematics import (RigidTransform, fk_position,
                                    forward_kinematics, geometric_jacobian,
                                    pseudoinverse)
from activereach.presets import default_arm_chain, default_head_chain, default_rig
from activereach.vision import CameraRig, PinholeCamera, project

from test_kinematics import planar_two_link


def overhead_rig():
    """Stereo pair at z=1.2 looking straight down on the x-y plane, world-posed."""
    rot = np.array([[1.0, 0.0, 0.0],
                    [0.0, -1.0, 0.0],
                    [0.0, 0.0, -1.0]])

    def cam(x):
        pose = RigidTransform(rot, np.array([x, 0.0, 1.2]))
        return PinholeCamera(fx=300.0, fy=300.0, cx=160.0, cy=120.0,
                             width=320, height=240, pose_in_head=pose)

    return CameraRig(left=cam(0.2), right=cam(0.3), baseline=0.1)


def planar_pixel_model():
    return GenerativeModel(chain=planar_two_link(), visual_mode=PIXEL_2D,
                           rig=overhead_rig())


def arm_stereo_model():
    return GenerativeModel(chain=default_arm_chain(), visual_mode=STEREO_3D)


def head_model():
    head = default_head_chain()
    return HeadModel(chain=head, rig=default_rig(head))


PREC = Precisions(sigma_sp=1.0, sigma_sv=1.0, sigma_smu=5.0, action_gain=1.0, dt=0.01)


def frame_at(model, q, rho=None, head_q=None, mu=None):
    """Noiseless frame taken with the plant exactly at q."""
    value, ok = predict_visual(model, q, head_q)
    return SensorFrame(s_p=np.asarray(q, float), s_v=value, s_v_valid=ok, head_q=head_q)


# --- predictions ---------------------------------------------------------


def test_predict_stereo_equals_fk():
    model = arm_stereo_model()
    rng = np.random.default_rng(0)
    mu = rng.uniform(model.chain.joint_lower, model.chain.joint_upper)
    value, ok = predict_visual(model, mu)
    assert ok
    assert np.allclose(value, fk_position(model.chain, mu), atol=1e-15)


def test_predict_pixel_matches_composition_oracle():
    model = planar_pixel_model()
    rng = np.random.default_rng(1)
    for _ in range(20):
        mu = rng.uniform(-1.0, 1.0, size=2)
        value, ok = predict_visual(model, mu)
        expected, _ = project(model.rig.left, fk_position(model.chain, mu),
                              RigidTransform.identity())
        # prediction validity = a projection exists (positive depth)
        assert ok == bool(np.all(np.isfinite(expected)))
        if ok:
            assert np.max(np.abs(value - expected)) < 1e-12


def test_predict_pixel_on_optical_axis():
    model = planar_pixel_model()
    # solve a planar config whose end-effector sits under the left camera (x=0.2, y=0)
    # two-link: q1 such that fk=(0.2, 0): cos solution
    l1, l2 = 0.3, 0.2
    x = 0.2
    c2 = (x**2 - l1**2 - l2**2) / (2 * l1 * l2)
    q2 = np.arccos(np.clip(c2, -1, 1))
    q1 = -np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    mu = np.array([q1, q2])
    assert np.allclose(fk_position(model.chain, mu)[:2], [0.2, 0.0], atol=1e-9)
    value, ok = predict_visual(model, mu)
    assert ok
    assert np.allclose(value, [160.0, 120.0], atol=1e-6)


# --- visual jacobian ------------------------------------------------------


def test_visual_jacobian_stereo_matches_geometric():
    model = arm_stereo_model()
    rng = np.random.default_rng(2)
    for _ in range(10):
        mu = rng.uniform(model.chain.joint_lower, model.chain.joint_upper)
        j_fd = visual_jacobian(model, mu)
        j_geo = geometric_jacobian(model.chain, mu)
        assert np.max(np.abs(j_fd - j_geo)) < 1e-5


def test_visual_jacobian_five_point_oracle():
    model = planar_pixel_model()
    rng = np.random.default_rng(3)
    h = 1e-3

    def five_point(mu, j):
        dq = np.zeros(2)
        dq[j] = h
        f = lambda m: predict_visual(model, m)[0]
        return (-f(mu + 2 * dq) + 8 * f(mu + dq) - 8 * f(mu - dq) + f(mu - 2 * dq)) / (12 * h)

    for _ in range(10):
        mu = rng.uniform(-0.8, 0.8, size=2)
        if not predict_visual(model, mu)[1]:
            continue
        j_fd = visual_jacobian(model, mu)
        oracle = np.column_stack([five_point(mu, j) for j in range(2)])
        assert np.max(np.abs(j_fd - oracle)) < 1e-5


# --- attractor and dynamics ----------------------------------------------


def test_attractor_equilibrium_and_linearity():
    model = arm_stereo_model()
    mu = np.array([0.1, -0.4, 0.2, 0.9])
    g_v, _ = predict_visual(model, mu)
    a0, ok = attractor_arm(model, mu, Attractor(target=g_v, gain=1.0))
    assert ok and np.allclose(a0, 0.0, atol=1e-15)

    target = g_v + np.array([0.1, 0.0, 0.0])
    a1, _ = attractor_arm(model, mu, Attractor(target=target, gain=1.0))
    a2, _ = attractor_arm(model, mu, Attractor(target=target, gain=2.0))
    assert np.allclose(a1, [0.1, 0.0, 0.0], atol=1e-12)
    assert np.allclose(a2, 2.0 * a1, atol=1e-12)


def test_dynamics_zero_attractor():
    model = arm_stereo_model()
    mu = np.array([0.0, -0.5, 0.1, 1.0])
    g_v, _ = predict_visual(model, mu)
    f = dynamics_f(model, mu, Attractor(target=g_v, gain=0.7))
    assert np.allclose(f, 0.0, atol=1e-12)


def test_dynamics_square_inverse_oracle():
    model = planar_pixel_model()
    mu = np.array([0.3, 0.8])
    rho = Attractor(target=np.array([180.0, 100.0, 0.0]), gain=0.05)
    j = visual_jacobian(model, mu)
    g_v, _ = predict_visual(model, mu)
    expected = np.linalg.solve(j, rho.gain * (rho.target[:2] - g_v))
    assert np.allclose(dynamics_f(model, mu, rho), expected, atol=1e-9)


def test_dynamics_least_squares_property():
    model = arm_stereo_model()
    rng = np.random.default_rng(4)
    for _ in range(10):
        mu = rng.uniform(model.chain.joint_lower * 0.6, model.chain.joint_upper * 0.6)
        g_v, _ = predict_visual(model, mu)
        rho = Attractor(target=g_v + rng.uniform(-0.05, 0.05, 3), gain=0.3)
        f = dynamics_f(model, mu, rho)
        j = visual_jacobian(model, mu)
        a, _ = attractor_arm(model, mu, rho)
        assert np.max(np.abs(j @ f - a)) < 1e-6


# --- free energy and gradients --------------------------------------------


def equilibrium_state(model, q, gain=0.5):
    g_v, ok = predict_visual(model, q)
    rho = Attractor(target=g_v, gain=gain)
    belief = BeliefState(mu=q, mu_prime=np.zeros(model.n_p), action=np.zeros(model.n_p))
    frame = SensorFrame(s_p=q, s_v=g_v, s_v_valid=ok)
    return belief, frame, rho


def test_free_energy_zero_at_equilibrium():
    model = arm_stereo_model()
    q = np.array([0.2, -0.3, 0.0, 1.0])
    belief, frame, rho = equilibrium_state(model, q)
    assert free_energy(model, belief, frame, rho, PREC) == pytest.approx(0.0, abs=1e-18)


def test_free_energy_encoder_only_residual():
    model = arm_stereo_model()
    q = np.array([0.2, -0.3, 0.0, 1.0])
    belief, frame, rho = equilibrium_state(model, q)
    r = np.array([0.1, -0.2, 0.05, 0.0])
    frame2 = SensorFrame(s_p=q + r, s_v=frame.s_v, s_v_valid=False)
    # attractor at g_v and mu untouched: only the encoder term remains
    got = free_energy(model, belief, frame2, rho, PREC)
    assert got == pytest.approx(0.5 * float(r @ r), rel=1e-12)


def random_state(model, rng, rho_scale):
    lo, hi = model.chain.joint_lower, model.chain.joint_upper
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    while True:
        mu = mid + rng.uniform(-0.55, 0.55, model.n_p) * half
        q = mu + rng.normal(0, 0.05, model.n_p)
        s_v, ok = predict_visual(model, q)
        g_mu, ok2 = predict_visual(model, mu)
        if not (ok and ok2):
            continue
        belief = BeliefState(mu=mu, mu_prime=rng.normal(0, 0.1, model.n_p),
                             action=rng.normal(0, 0.1, model.n_p))
        frame = SensorFrame(s_p=q + rng.normal(0, 0.02, model.n_p),
                            s_v=s_v + rng.normal(0, rho_scale * 0.1, model.n_v),
                            s_v_valid=True)
        rho = Attractor(target=g_mu + rng.uniform(-rho_scale, rho_scale, model.n_v)
                        if model.n_v == 3 else
                        np.append(g_mu + rng.uniform(-rho_scale, rho_scale, 2), 0.0),
                        gain=rng.uniform(0.1, 0.6))
        return belief, frame, rho


def fd_grad_free_energy(model, belief, frame, rho, prec, which, h=1e-6):
    base = BeliefState(belief.mu.copy(), belief.mu_prime.copy(), belief.action.copy())
    g = np.zeros(model.n_p)
    for j in range(model.n_p):
        for sign in (+1, -1):
            b = BeliefState(base.mu.copy(), base.mu_prime.copy(), base.action.copy())
            if which == "mu":
                b.mu[j] += sign * h
            else:
                b.mu_prime[j] += sign * h
            val = free_energy(model, b, frame, rho, prec)
            g[j] += sign * val
    return g / (2 * h)


@pytest.mark.parametrize("make_model,rho_scale", [(arm_stereo_model, 0.05),
                                                  (planar_pixel_model, 30.0)])
def test_gradients_match_finite_differences(make_model, rho_scale):
    model = make_model()
    rng = np.random.default_rng(8)
    for _ in range(20):
        belief, frame, rho = random_state(model, rng, rho_scale)
        g = grad_mu(model, belief, frame, rho, PREC)
        fd = -fd_grad_free_energy(model, belief, frame, rho, PREC, "mu")
        assert np.max(np.abs(g - fd)) < 1e-5 * max(1.0, np.max(np.abs(fd)))

        gp = grad_mu_prime(model, belief, frame, rho, PREC)
        fdp = -fd_grad_free_energy(model, belief, frame, rho, PREC, "mu_prime")
        assert np.max(np.abs(gp - fdp)) < 1e-5 * max(1.0, np.max(np.abs(fdp)))


def test_grad_mu_zero_at_equilibrium():
    model = arm_stereo_model()
    q = np.array([0.1, -0.2, 0.3, 0.8])
    belief, frame, rho = equilibrium_state(model, q)
    assert np.allclose(grad_mu(model, belief, frame, rho, PREC), 0.0, atol=1e-12)


def test_grad_mu_visual_term_vanishes_at_huge_variance():
    model = arm_stereo_model()
    rng = np.random.default_rng(9)
    belief, frame, rho = random_state(model, rng, 0.05)
    huge = Precisions(sigma_sp=1.0, sigma_sv=1e12, sigma_smu=5.0, action_gain=1.0, dt=0.01)
    g = grad_mu(model, belief, frame, rho, huge)
    frame_blind = SensorFrame(s_p=frame.s_p, s_v=None, s_v_valid=False)
    g_blind = grad_mu(model, belief, frame_blind, rho, huge)
    assert np.max(np.abs(g - g_blind)) < 1e-9


def test_grad_mu_prime_sign_and_equilibrium():
    model = arm_stereo_model()
    q = np.array([0.1, -0.2, 0.3, 0.8])
    belief, frame, rho = equilibrium_state(model, q)
    assert np.allclose(grad_mu_prime(model, belief, frame, rho, PREC), 0.0, atol=1e-15)
    rho2 = Attractor(target=rho.target + np.array([0.05, 0.0, 0.0]), gain=0.5)
    f = dynamics_f(model, belief.mu, rho2)
    belief.mu_prime = f - np.abs(f) - 0.01  # strictly below f componentwise
    g = grad_mu_prime(model, belief, frame, rho2, PREC)
    assert np.all(g > 0)


# --- action ---------------------------------------------------------------


def test_action_sensitivity_shapes_and_values():
    model = arm_stereo_model()
    mu = np.array([0.1, -0.4, 0.2, 0.9])
    dsp, dsv = action_sensitivity(model, mu, None, PREC)
    assert np.allclose(dsp, 0.01 * np.eye(4), atol=1e-15)
    assert np.allclose(dsv, 0.01 * visual_jacobian(model, mu), atol=1e-12)


def test_action_sensitivity_one_step_plant_oracle():
    model = arm_stereo_model()
    q = np.array([0.1, -0.4, 0.2, 0.9])
    a = np.array([0.1, -0.05, 0.08, 0.06])
    _, dsv = action_sensitivity(model, q, None, PREC)
    before, _ = predict_visual(model, q)
    after, _ = predict_visual(model, q + a * PREC.dt)
    predicted = dsv @ a
    assert np.linalg.norm((after - before) - predicted) < 1e-6


def test_grad_action_zero_at_equilibrium():
    model = arm_stereo_model()
    q = np.array([0.1, -0.2, 0.3, 0.8])
    belief, frame, rho = equilibrium_state(model, q)
    assert np.allclose(grad_action(model, belief, frame, rho, PREC), 0.0, atol=1e-15)


def test_grad_action_sign_one_joint():
    # single-joint arm: belief pulled ahead of the encoders toward the target
    chain = planar_two_link(0.3, 0.2)
    model = GenerativeModel(chain=chain, visual_mode=STEREO_3D)
    q = np.array([0.0, 0.5])
    mu = q + np.array([0.1, 0.0])  # belief ahead on joint 1
    belief = BeliefState(mu=mu, mu_prime=np.zeros(2), action=np.zeros(2))
    frame = SensorFrame(s_p=q, s_v=None, s_v_valid=False)
    rho = Attractor(target=fk_position(chain, mu), gain=0.5)
    g = grad_action(model, belief, frame, rho, PREC)
    assert g[0] > 0  # drives q toward mu, reducing (s_p - mu)
    assert abs(g[1]) < 1e-15


def test_action_descent_property():
    model = arm_stereo_model()
    rng = np.random.default_rng(10)
    plant_chain = model.chain
    for _ in range(5):
        belief, frame, rho = random_state(model, rng, 0.05)
        q = frame.s_p.copy()  # noiseless plant at the encoder reading
        frame = SensorFrame(s_p=q, s_v=fk_position(plant_chain, q), s_v_valid=True)
        f0 = free_energy(model, belief, frame, rho, PREC)
        a = PREC.dt * grad_action(model, belief, frame, rho, PREC)
        q2 = q + a * PREC.dt
        frame2 = SensorFrame(s_p=q2, s_v=fk_position(plant_chain, q2), s_v_valid=True)
        f1 = free_energy(model, belief, frame2, rho, PREC)
        if np.linalg.norm(a) > 1e-12:
            assert f1 < f0


# --- step -----------------------------------------------------------------


def test_step_fixed_point():
    model = arm_stereo_model()
    q = np.array([0.15, -0.25, 0.05, 0.9])
    belief, frame, rho = equilibrium_state(model, q)
    new, info = step(model, belief, frame, rho, PREC)
    assert np.allclose(new.mu, belief.mu, atol=1e-15)
    assert np.allclose(new.mu_prime, belief.mu_prime, atol=1e-15)
    assert np.allclose(new.action, belief.action, atol=1e-15)
    assert info.free_energy == pytest.approx(0.0, abs=1e-18)


def test_step_matches_hand_composed_euler():
    model = arm_stereo_model()
    rng = np.random.default_rng(11)
    belief, frame, rho = random_state(model, rng, 0.05)
    g_mu = grad_mu(model, belief, frame, rho, PREC)
    g_mu_p = grad_mu_prime(model, belief, frame, rho, PREC)
    g_a = grad_action(model, belief, frame, rho, PREC)
    expected_mu = belief.mu + PREC.dt * (belief.mu_prime + g_mu)
    expected_mu_p = belief.mu_prime + PREC.dt * g_mu_p
    expected_a = np.clip(belief.action + PREC.dt * PREC.action_gain * g_a,
                         -model.chain.vel_limit, model.chain.vel_limit)
    new, _ = step(model, belief, frame, rho, PREC)
    assert np.max(np.abs(new.mu - expected_mu)) < 1e-12
    assert np.max(np.abs(new.mu_prime - expected_mu_p)) < 1e-12
    assert np.max(np.abs(new.action - expected_a)) < 1e-12


def test_step_clamps_action():
    model = arm_stereo_model()
    q = np.zeros(4)
    belief = BeliefState(mu=q + 5.0, mu_prime=np.zeros(4), action=np.zeros(4))
    frame = SensorFrame(s_p=q, s_v=None, s_v_valid=False)
    rho = Attractor(target=np.array([0.3, 0.0, 0.0]), gain=0.2)
    prec = Precisions(sigma_sp=1e-6, sigma_sv=1.0, sigma_smu=5.0, action_gain=1e6, dt=0.01)
    new, _ = step(model, belief, frame, rho, prec)
    assert np.all(np.abs(new.action) <= model.chain.vel_limit + 1e-15)


def test_step_raises_on_non_finite():
    model = arm_stereo_model()
    belief = BeliefState(mu=np.zeros(4), mu_prime=np.zeros(4), action=np.zeros(4))
    frame = SensorFrame(s_p=np.full(4, np.inf), s_v=None, s_v_valid=False)
    rho = Attractor(target=np.array([0.3, 0.0, 0.0]), gain=0.2)
    with pytest.raises(NumericError):
        step(model, belief, frame, rho, PREC)


# --- head ops --------------------------------------------------------------


def test_attractor_head_trivials():
    hm = head_model()
    center = hm.rig.left.principal_point
    rho = Attractor(target=np.array([0.3, 0.0, 0.0]), gain=1.0, pixel_target=center)
    assert np.allclose(attractor_head(rho, hm.rig), 0.0, atol=1e-15)
    rho2 = Attractor(target=rho.target, gain=1.0, pixel_target=center + [10.0, 0.0])
    assert np.allclose(attractor_head(rho2, hm.rig), [-10.0, 0.0], atol=1e-12)
    rho3 = Attractor(target=rho.target, gain=2.0, pixel_target=center + [10.0, 0.0])
    assert np.allclose(attractor_head(rho3, hm.rig), [-20.0, 0.0], atol=1e-12)


def test_head_dynamics_least_squares():
    hm = head_model()
    point = np.array([0.3, 0.05, -0.05])
    mu_e = np.zeros(3)
    px, ok = project(hm.rig.left, point, forward_kinematics(hm.chain, mu_e))
    assert ok
    rho = Attractor(target=point, gain=0.5, pixel_target=px + np.array([15.0, -8.0]))
    f_e = dynamics_f_head(hm, mu_e, rho)
    j = head_visual_jacobian(hm, mu_e, point)
    a_e = attractor_head(rho, hm.rig)
    assert np.max(np.abs(j @ f_e - a_e)) < 1e-5


def test_head_zero_attractor_zero_f():
    hm = head_model()
    point = np.array([0.3, 0.05, -0.05])
    px, _ = project(hm.rig.left, point, forward_kinematics(hm.chain, np.zeros(3)))
    rho = Attractor(target=point, gain=0.0, pixel_target=px)
    assert np.allclose(dynamics_f_head(hm, np.zeros(3), rho), 0.0, atol=1e-15)


def test_head_closed_loop_centers_target():
    """Noiseless gaze loop: pixel error to image centre shrinks monotonically."""
    hm = head_model()
    point = np.array([0.35, 0.12, 0.05])
    prec = Precisions(sigma_sp=1.0, sigma_sv=1.0, sigma_smu=0.05, action_gain=5.0, dt=0.01)
    q = np.zeros(3)
    belief = BeliefState(mu=q.copy(), mu_prime=np.zeros(3), action=np.zeros(3))
    center = hm.rig.left.principal_point
    errs = []
    for _ in range(1500):
        px, ok = project(hm.rig.left, point, forward_kinematics(hm.chain, q))
        assert ok
        errs.append(np.linalg.norm(px - center))
        rho = Attractor(target=point, gain=0.3, pixel_target=px)
        frame = SensorFrame(s_p=q.copy())
        belief, _ = step_head(hm, belief, frame, rho, prec)
        q = hm.chain.clamp(q + belief.action * prec.dt)
    errs = np.array(errs)
    tail = errs[100:]
    assert np.all(np.diff(tail) < 1e-9)
    assert errs[-1] < 2.0


def test_step_head_equilibrium():
    hm = head_model()
    point = np.array([0.3, 0.0, -0.02])
    # find the pixel at rest; gain 0 so dynamics vanish -> pure fixed point
    q = np.zeros(3)
    px, _ = project(hm.rig.left, point, forward_kinematics(hm.chain, q))
    rho = Attractor(target=point, gain=0.0, pixel_target=px)
    belief = BeliefState(mu=q, mu_prime=np.zeros(3), action=np.zeros(3))
    frame = SensorFrame(s_p=q)
    new, info = step_head(hm, belief, frame, rho, PREC)
    assert np.allclose(new.mu, belief.mu, atol=1e-15)
    assert info.free_energy == pytest.approx(0.0, abs=1e-18)


def test_free_energy_head_matches_sum_of_squares():
    hm = head_model()
    rng = np.random.default_rng(12)
    q = rng.uniform(hm.chain.joint_lower / 2, hm.chain.joint_upper / 2)
    mu = q + rng.normal(0, 0.05, 3)
    point = np.array([0.32, 0.03, -0.04])
    px, _ = project(hm.rig.left, point, forward_kinematics(hm.chain, q))
    rho = Attractor(target=point, gain=0.4, pixel_target=px)
    belief = BeliefState(mu=mu, mu_prime=rng.normal(0, 0.05, 3), action=np.zeros(3))
    frame = SensorFrame(s_p=q)
    f_e = dynamics_f_head(hm, mu, rho)
    expected = 0.5 * np.sum((q - mu) ** 2) / PREC.sigma_sp \
        + 0.5 * np.sum((belief.mu_prime - f_e) ** 2) / PREC.sigma_smu
    assert free_energy_head(hm, belief, frame, rho, PREC) == pytest.approx(expected, rel=1e-12)
