import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handgrid import quat
from handgrid.handspec import ActuatorParams, JointLimits
from handgrid.kinematics import palm_frame, tree_for
from handgrid.physics import (
    ContactParams,
    CubeState,
    HandContactFrame,
    PalmPlaneWorld,
    PhysicsConfig,
    SimState,
    _capped_friction,
    _joint_torque,
    actuator_torque,
    contact_forces,
    detect_contacts,
    hand_contact_frame,
    initial_state,
    step_cube,
    step_joints,
    step_sim,
)

from conftest import chain_model

G = np.array([0.0, 0.0, -9.81])
EDGE, MASS = 0.065, 0.095


def cube_at(pos, q=quat.IDENTITY, v=None, w=None):
    return CubeState.uniform(EDGE, MASS, pos, q, v, w)


def flat_plane():
    z = np.array([0.0, 0.0, 1.0])
    return PalmPlaneWorld(np.zeros(3), z, np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), None)


def single_proxy(center, radius, dof=0):
    return HandContactFrame(
        centers=np.array([center], dtype=float),
        radii=np.array([radius], dtype=float),
        ancestors=np.zeros((1, dof), dtype=bool),
        joint_pos=np.zeros((dof, 3)),
        joint_axis=np.zeros((dof, 3)),
        qdot=np.zeros(dof),
        joint_mass=np.ones(dof),
    )


# -- actuator ------------------------------------------------------------------

ACT = ActuatorParams(3.0, 0.1, 0.01, 0.001)


def test_torque_zero_at_equilibrium():
    assert actuator_torque(ACT, JointLimits(-1, 1, 5, 0.5), 0.3, 0.0, 0.3) == 0.0


def test_torque_clamped_to_effort():
    act = ActuatorParams(3.0, 0.1, 0.0, 0.001)
    assert actuator_torque(act, JointLimits(-2, 2, 5, 0.5), 0.0, 0.0, 1.0) == 0.5


def test_torque_hand_computed():
    tau = actuator_torque(ACT, JointLimits(-2, 2, 5, 10.0), 0.0, 0.5, 0.1)
    assert tau == pytest.approx(3.0 * 0.1 - 0.1 * 0.5 - 0.01, abs=1e-15)
    assert tau == pytest.approx(0.24, abs=1e-15)


@settings(max_examples=500, deadline=None)
@given(
    q=st.floats(-10, 10),
    qd=st.floats(-100, 100),
    qt=st.floats(-10, 10),
    effort=st.floats(1e-3, 5),
)
def test_torque_bounded(q, qd, qt, effort):
    assert abs(actuator_torque(ACT, JointLimits(-1, 1, 1, effort), q, qd, qt)) <= effort


# -- joints --------------------------------------------------------------------


def test_joints_rest_unchanged(model):
    q = np.asarray(model.pose("init_flat"), dtype=float)
    q2, qd2 = step_joints(model, q, np.zeros(model.dof), q, None, 1 / 120)
    np.testing.assert_array_equal(q2, q)
    np.testing.assert_array_equal(qd2, 0.0)


def test_constant_torque_recurrence():
    m = chain_model(velocity=1e9, lo=-1e9, hi=1e9, effort=1e9)
    free = dataclasses.replace(m.joints[0], actuator=ActuatorParams(0.0, 0.0, 0.0, 0.001))
    m = dataclasses.replace(m, joints=(free,))
    tau, dt = 0.02, 1 / 120
    inertia = free.inertia + free.actuator.armature
    a = tau / inertia
    q, qd = np.zeros(1), np.zeros(1)
    for n in range(1, 241):
        q, qd = step_joints(m, q, qd, q, np.array([tau]), dt)
        assert qd[0] == pytest.approx(n * dt * a, rel=1e-12)
        assert q[0] == pytest.approx(dt * dt * a * n * (n + 1) / 2, rel=1e-12)


def test_velocity_limit_pins_allegro(models):
    m = models["allegro_like"]
    tree = tree_for(m)
    q = tree.lo.copy()
    qd = np.zeros(m.dof)
    hit = np.zeros(m.dof, dtype=bool)
    for _ in range(6):
        q, qd = step_joints(m, q, qd, tree.hi, None, 1 / 120)
        hit |= qd == 6.28
        assert np.all(np.abs(qd) <= 6.28)
    assert hit.all()


def test_joint_dimension_mismatch(model):
    with pytest.raises(ValueError):
        step_joints(model, np.zeros(model.dof + 1), np.zeros(model.dof), np.zeros(model.dof), None, 0.01)


def test_limit_fuzz_million_substeps(model):
    """10^3 batched joint states x 10^3 substeps with random targets and loads."""
    tree = tree_for(model)
    rng = np.random.default_rng(hash(model.name) % 2**32)
    n = 1000
    q = rng.uniform(tree.lo, tree.hi, (n, tree.dof))
    qd = rng.uniform(-tree.velocity_limit, tree.velocity_limit, (n, tree.dof))
    for _ in range(1000):
        targets = rng.uniform(tree.lo - 1.0, tree.hi + 1.0, (n, tree.dof))
        ext = rng.normal(0.0, 0.5, (n, tree.dof))
        tau = _joint_torque(tree, q, qd, np.clip(targets, tree.lo, tree.hi))
        assert np.all(np.abs(tau) <= tree.effort_limit)
        q, qd = step_joints(model, q, qd, np.clip(targets, tree.lo, tree.hi), ext, 1 / 120)
        assert np.all(np.abs(qd) <= tree.velocity_limit)
        assert np.all((q >= tree.lo) & (q <= tree.hi))


# -- cube ----------------------------------------------------------------------


def test_cube_inertia_uniform():
    c = cube_at([0, 0, 0])
    np.testing.assert_allclose(c.inertia, MASS * EDGE**2 / 6)
    assert c.half_extent == EDGE / 2


def test_cube_unchanged_without_loads():
    c = cube_at([0.1, 0.2, 0.3])
    c2 = step_cube(c, None, np.zeros(3), 0.01)
    np.testing.assert_array_equal(c2.position, c.position)
    np.testing.assert_array_equal(c2.orientation, c.orientation)


def test_free_fall_matches_discrete_closed_form():
    dt = 1 / 120
    c = cube_at([0.0, 0.0, 1.0])
    for n in range(1, 601):
        c = step_cube(c, None, G, dt)
        assert c.linear_velocity[2] == pytest.approx(n * dt * G[2], rel=1e-13)
        assert c.position[2] == pytest.approx(1.0 + dt * dt * G[2] * n * (n + 1) / 2, rel=1e-13, abs=1e-13)
    assert c.position[0] == 0.0 and c.position[1] == 0.0


def test_free_spin_about_principal_axis():
    w = 2.5
    dt = 1 / 120
    c = cube_at([0, 0, 0], w=[0.0, 0.0, w])
    for _ in range(120):
        c = step_cube(c, None, np.zeros(3), dt)
    angle = 2 * math.atan2(c.orientation[3], c.orientation[0])
    assert angle == pytest.approx(w * 1.0, abs=1e-6)


def test_constant_torque_spin_recurrence():
    dt, tau = 1 / 120, 1e-4
    c = cube_at([0, 0, 0])
    alpha = tau / c.inertia[2]
    for n in range(1, 121):
        c = step_cube(c, (np.zeros(3), np.array([0.0, 0.0, tau])), np.zeros(3), dt)
    assert c.angular_velocity[2] == pytest.approx(120 * dt * alpha, rel=1e-12)
    angle = 2 * math.atan2(c.orientation[3], c.orientation[0])
    assert angle == pytest.approx(dt * dt * alpha * 120 * 121 / 2, rel=1e-9)


def test_step_sim_free_fall_without_contact(model):
    cube = cube_at([5.0, 5.0, 5.0])
    state = initial_state(model, cube)
    cfg = PhysicsConfig()
    out = step_sim(model, state, state.q, cfg)
    ref = cube
    for _ in range(cfg.substeps_per_control):
        ref = step_cube(ref, None, cfg.gravity, cfg.dt)
    np.testing.assert_array_equal(out.cube.position, ref.position)
    np.testing.assert_array_equal(out.q, state.q)
    assert out.time == pytest.approx(cfg.control_dt)


# -- contacts ------------------------------------------------------------------


def test_no_overlap_zero_wrench():
    hand = single_proxy([0.0, 0.0, 0.2], 0.01)
    res = contact_forces(hand, None, cube_at([0, 0, 0]), ContactParams())
    np.testing.assert_array_equal(res.force, 0.0)
    np.testing.assert_array_equal(res.torque, 0.0)
    assert len(res.points) == 0


def test_five_newton_contact():
    e = EDGE / 2
    hand = single_proxy([0.0, 0.0, e + 0.01 - 0.001], 0.01)  # 1 mm overlap on the +z face
    res = contact_forces(hand, None, cube_at([0, 0, 0]), ContactParams(5000.0, 50.0))
    np.testing.assert_allclose(res.force, [0.0, 0.0, -5.0], atol=1e-12)
    np.testing.assert_allclose(res.normals[0], [0.0, 0.0, -1.0])


def test_plane_contact_depth():
    e = EDGE / 2
    cube = cube_at([0.0, 0.0, e - 0.002])
    pts, nrm, dep, _ = detect_contacts(None, flat_plane(), cube)
    assert len(pts) == 4
    np.testing.assert_allclose(dep, 0.002)
    res = contact_forces(None, flat_plane(), cube, ContactParams())
    np.testing.assert_allclose(res.force, [0, 0, 4 * 5000 * 0.002], rtol=1e-12)


def test_friction_cap_vectorized():
    rng = np.random.default_rng(3)
    n = 100_000
    slip = rng.normal(size=(n, 3)) * 10 ** rng.uniform(-6, 1, (n, 1))
    fn = rng.uniform(0, 20, n)
    mu = 1.0
    ft = _capped_friction(slip, fn, mu, 100.0)
    assert np.all(np.linalg.norm(ft, axis=1) <= mu * fn * (1 + 1e-12))
    # opposes slip
    assert np.all(np.einsum("ij,ij->i", ft, slip) <= 0)


@pytest.mark.parametrize("dt", [0.0, 1 / 120])
def test_friction_cone_random_states(dt):
    rng = np.random.default_rng(11)
    params = ContactParams(tangential_friction_coefficient=0.7)
    e = EDGE / 2
    for _ in range(500):
        q = quat.normalize(rng.normal(size=4))
        cube = cube_at(
            rng.normal(0, 0.002, 3) + [0, 0, e],
            q,
            v=rng.normal(0, 0.5, 3),
            w=rng.normal(0, 5, 3),
        )
        hand = HandContactFrame(
            centers=cube.position + rng.normal(0, 0.03, (6, 3)),
            radii=np.full(6, 0.012),
            ancestors=np.zeros((6, 0), dtype=bool),
            joint_pos=np.zeros((0, 3)),
            joint_axis=np.zeros((0, 3)),
            qdot=np.zeros(0),
            joint_mass=np.zeros(0),
        )
        res = contact_forces(hand, flat_plane(), cube, params, dt=dt, cube_force=MASS * G)
        for f, n in zip(res.forces, res.normals):
            fn = f @ n
            assert fn >= -1e-12
            assert np.linalg.norm(f - fn * n) <= 0.7 * fn + 1e-9


def _one_joint_hand(rng):
    """Random single revolute joint whose child carries a proxy touching the cube."""
    axis = quat.normalize(rng.normal(size=3).tolist() + [0.0])[:3]
    axis = axis / np.linalg.norm(axis)
    origin = rng.normal(0, 0.05, 3)
    return axis, origin


def test_action_reaction_balance():
    rng = np.random.default_rng(5)
    e = EDGE / 2
    for dt in (0.0, 1 / 120):
        for _ in range(200):
            cube = cube_at(rng.normal(0, 0.01, 3), quat.normalize(rng.normal(size=4)), rng.normal(0, 0.2, 3), rng.normal(0, 2, 3))
            axis, origin = _one_joint_hand(rng)
            centers = cube.position + rng.normal(0, 1, (4, 3)) * (e + 0.005) / np.sqrt(3) * 1.2
            hand = HandContactFrame(
                centers=centers,
                radii=np.full(4, 0.012),
                ancestors=np.ones((4, 1), dtype=bool),
                joint_pos=origin[None],
                joint_axis=axis[None],
                qdot=rng.normal(0, 1, 1),
                joint_mass=np.array([0.002]),
            )
            res = contact_forces(hand, None, cube, ContactParams(), dt=dt, cube_force=MASS * G, joint_torque=np.zeros(1))
            if len(res.points) == 0:
                continue
            # cube wrench is the sum of per-contact forces and their moments
            np.testing.assert_allclose(res.force, res.forces.sum(0), atol=1e-12)
            r = res.points - cube.position
            np.testing.assert_allclose(res.torque, np.cross(r, res.forces).sum(0), atol=1e-12)
            # the hand receives the opposite wrench: about the joint axis
            expected = -axis @ (res.torque + np.cross(cube.position - origin, res.force))
            assert abs(res.joint_torque[0] - expected) < 1e-9


def test_ancestor_mask_limits_reaction(models):
    m = models["isyhand"]
    q = np.asarray(m.pose("init_flat"), dtype=float)
    hand = hand_contact_frame(m, q, np.zeros(m.dof))
    tree = tree_for(m)
    tip = [i for i, li in enumerate(tree.proxy_link) if tree.link_names[li] == "index_distal"][-1]
    small = 0.01  # narrow enough to touch only this fingertip
    c = hand.centers[tip] + [0.0, 0.0, small / 2 + hand.radii[tip] - 0.001]
    res = contact_forces(hand, None, CubeState.uniform(small, 0.01, c), ContactParams())
    assert len(res.points) == 1
    moved = set(np.nonzero(res.joint_torque)[0])
    allowed = set(np.nonzero(tree.ancestors[tree.proxy_link[tip]])[0])
    assert moved and moved <= allowed


# -- whole-system --------------------------------------------------------------


def test_rest_on_plane_settles():
    params = ContactParams()
    e = EDGE / 2
    cube = cube_at([0, 0, e + 0.005])
    dt = 1 / 120
    for _ in range(240):
        res = contact_forces(None, flat_plane(), cube, params, dt=dt, cube_force=MASS * G)
        cube = step_cube(cube, res.wrench, G, dt)
    assert e - cube.position[2] < 0.002
    assert np.linalg.norm(cube.linear_velocity) < 1e-3


def test_resting_cube_on_isyhand_palm(models):
    m = models["isyhand"]
    cfg = PhysicsConfig()
    q0 = np.asarray(m.pose("init_flat"), dtype=float)
    frame = palm_frame(m, q0)
    start = frame.apply(np.array([0.0, -0.05, EDGE / 2 + 0.003]))
    state = initial_state(m, cube_at(start), q0)
    steps_per_s = round(1 / cfg.control_dt)
    for _ in range(2 * steps_per_s):
        state = step_sim(m, state, q0, cfg)
    energies = [state.cube.energy(cfg.gravity)]
    for _ in range(5 * steps_per_s):
        state = step_sim(m, state, q0, cfg)
        energies.append(state.cube.energy(cfg.gravity))
    energies = np.array(energies)
    # no energy gain: never above any earlier value by more than 1e-4 J
    assert np.max(energies - np.minimum.accumulate(energies)) <= 1e-4
    hand = hand_contact_frame(m, state.q, state.qdot)
    from handgrid.physics import palm_plane_world

    _, _, depths, _ = detect_contacts(hand, palm_plane_world(m), state.cube)
    assert len(depths) > 0 and depths.max() < 0.002
    assert np.linalg.norm(state.cube.linear_velocity) < 0.01


def test_step_sim_deterministic(models):
    m = models["leap_like"]
    cfg = PhysicsConfig()
    rng = np.random.default_rng(1)
    tree = tree_for(m)
    actions = rng.uniform(tree.lo, tree.hi, (30, m.dof))

    def run():
        q0 = np.asarray(m.pose("init_flat"), dtype=float)
        s = initial_state(m, cube_at(palm_frame(m, q0).apply([0, -0.03, 0.04])), q0)
        for a in actions:
            s = step_sim(m, s, a, cfg)
        return s

    a, b = run(), run()
    for f in ("q", "qdot"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    assert a.cube.position.tobytes() == b.cube.position.tobytes()
    assert a.cube.orientation.tobytes() == b.cube.orientation.tobytes()


def test_sim_state_limits_respected_with_contact(models):
    m = models["isyhand"]
    cfg = PhysicsConfig()
    tree = tree_for(m)
    rng = np.random.default_rng(2)
    q0 = np.asarray(m.pose("init_flat"), dtype=float)
    s = initial_state(m, cube_at(palm_frame(m, q0).apply([0, -0.02, 0.04])), q0)
    for _ in range(60):
        s = step_sim(m, s, rng.uniform(tree.lo, tree.hi), cfg)
        assert np.all(np.abs(s.qdot) <= tree.velocity_limit)
        assert np.all((s.q >= tree.lo) & (s.q <= tree.hi))
        assert np.all(np.abs(s.effort) <= tree.effort_limit)
        assert quat.is_unit(s.cube.orientation)


def test_config_validation():
    with pytest.raises(ValueError):
        PhysicsConfig(dt=0.0)
    with pytest.raises(ValueError):
        PhysicsConfig(substeps_per_control=0)
    with pytest.raises(ValueError):
        ContactParams(normal_stiffness=0.0)
    with pytest.raises(ValueError):
        ContactParams(restitution=1.5)
