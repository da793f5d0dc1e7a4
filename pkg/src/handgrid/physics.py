"""Deterministic fixed-step hand/cube simulation.

Each joint is a decoupled 1-DoF system (effective link inertia + armature)
driven by a clamped PD actuator. The cube is a free rigid body. Contacts are
penalty springs between link sphere proxies (and the palm plane) and the cube.

Contact forces are evaluated linearly-implicitly over the substep: the
normal spring/damper and the viscous branch of friction are taken at the
end-of-step velocities of the cube and of every joint, solved as one small
linear system. With ``dt=0`` this reduces to the explicit penalty law
``f_n = k*depth + c*closing_speed``. The solved per-contact forces are then
applied by plain semi-implicit Euler in ``step_joints`` and ``step_cube``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from handgrid import quat
from handgrid.kinematics import tree_for

MAX_CONTACT_ITERS = 16


@dataclass(frozen=True)
class CubeState:
    position: np.ndarray
    orientation: np.ndarray
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray
    half_extent: float
    mass: float
    inertia: np.ndarray

    @classmethod
    def uniform(cls, edge, mass, position, orientation=quat.IDENTITY, linear_velocity=None, angular_velocity=None):
        i = mass * edge**2 / 6.0
        return cls(
            position=np.asarray(position, dtype=float),
            orientation=quat.normalize(orientation),
            linear_velocity=np.zeros(3) if linear_velocity is None else np.asarray(linear_velocity, dtype=float),
            angular_velocity=np.zeros(3) if angular_velocity is None else np.asarray(angular_velocity, dtype=float),
            half_extent=0.5 * edge,
            mass=float(mass),
            inertia=np.full(3, i),
        )

    def rotation_matrix(self):
        return quat_matrix(self.orientation)

    def world_inertia(self):
        r = self.rotation_matrix()
        return r @ np.diag(self.inertia) @ r.T

    def energy(self, gravity):
        """Kinetic plus gravitational potential energy (J)."""
        ke = 0.5 * self.mass * self.linear_velocity @ self.linear_velocity
        ke += 0.5 * self.angular_velocity @ self.world_inertia() @ self.angular_velocity
        return float(ke - self.mass * np.dot(np.asarray(gravity), self.position))


@dataclass(frozen=True)
class SimState:
    q: np.ndarray
    qdot: np.ndarray
    cube: CubeState
    time: float = 0.0
    effort: np.ndarray | None = None


@dataclass(frozen=True)
class ContactParams:
    normal_stiffness: float = 5000.0
    normal_damping: float = 50.0
    tangential_friction_coefficient: float = 1.0
    restitution: float = 0.0
    # viscous slope of the capped Coulomb law (N s/m)
    slip_damping: float = 100.0

    def __post_init__(self):
        if not self.normal_stiffness > 0:
            raise ValueError("normal_stiffness must be > 0")
        if self.normal_damping < 0 or self.tangential_friction_coefficient < 0 or self.slip_damping < 0:
            raise ValueError("damping and friction must be >= 0")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must be in [0, 1]")


@dataclass(frozen=True)
class PhysicsConfig:
    dt: float = 1.0 / 120.0
    substeps_per_control: int = 4
    gravity: tuple = (0.0, 0.0, -9.81)
    contact: ContactParams = field(default_factory=ContactParams)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if int(self.substeps_per_control) != self.substeps_per_control or self.substeps_per_control < 1:
            raise ValueError("substeps_per_control must be an integer >= 1")

    @property
    def control_dt(self):
        return self.dt * self.substeps_per_control


def quat_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


# -- joints ------------------------------------------------------------------


def actuator_torque(params, limits, q, qdot, q_target):
    """Clamped PD torque with dry friction; ``|tau| <= limits.effort`` always."""
    tau = params.stiffness * (q_target - q) - params.damping * qdot - params.friction * np.sign(qdot)
    return np.clip(tau, -limits.effort, limits.effort)


def _joint_torque(tree, q, qdot, targets):
    tau = tree.stiffness * (targets - q) - tree.damping * qdot - tree.friction * np.sign(qdot)
    return np.clip(tau, -tree.effort_limit, tree.effort_limit)


def step_joints(model, q, qdot, targets, external_torque, dt):
    """One semi-implicit Euler substep for every joint; broadcasts over batch axes."""
    tree = tree_for(model)
    q = tree.check(q)
    qdot = tree.check(qdot)
    targets = tree.check(targets)
    ext = np.zeros_like(q) if external_torque is None else tree.check(external_torque)
    tau = _joint_torque(tree, q, qdot, targets)
    accel = (tau + ext) / (tree.inertia + tree.armature)
    qdot_new = np.clip(qdot + dt * accel, -tree.velocity_limit, tree.velocity_limit)
    q_new = np.clip(q + dt * qdot_new, tree.lo, tree.hi)
    return q_new, qdot_new


# -- cube --------------------------------------------------------------------


def step_cube(cube, wrench, gravity, dt):
    """Semi-implicit Euler for the cube; ``wrench = (force, torque about center)``."""
    force, torque = (np.zeros(3), np.zeros(3)) if wrench is None else (np.asarray(wrench[0]), np.asarray(wrench[1]))
    v = cube.linear_velocity + dt * (force / cube.mass + np.asarray(gravity, dtype=float))
    iw = cube.world_inertia()
    w = cube.angular_velocity
    w = w + dt * np.linalg.solve(iw, torque - quat.cross(w, iw @ w))
    x = cube.position + dt * v
    rot = quat.normalize(quat.mul(quat.from_rotvec(w * dt), cube.orientation))
    return replace(cube, position=x, orientation=rot, linear_velocity=v, angular_velocity=w)


# -- contacts ----------------------------------------------------------------


@dataclass(frozen=True)
class HandContactFrame:
    """World-frame hand geometry needed by the contact model at one instant."""

    centers: np.ndarray  # (P, 3)
    radii: np.ndarray  # (P,)
    ancestors: np.ndarray  # (P, dof) joints that move each proxy
    joint_pos: np.ndarray  # (dof, 3)
    joint_axis: np.ndarray  # (dof, 3)
    qdot: np.ndarray  # (dof,)
    joint_mass: np.ndarray  # (dof,) effective inertia + armature

    @property
    def dof(self):
        return len(self.qdot)


@dataclass(frozen=True)
class PalmPlaneWorld:
    point: np.ndarray
    normal: np.ndarray
    u: np.ndarray
    v: np.ndarray
    half_extents: tuple | None  # None: unbounded


@dataclass(frozen=True)
class ContactResult:
    force: np.ndarray  # on the cube
    torque: np.ndarray  # on the cube, about its center
    joint_torque: np.ndarray  # reaction torques on the hand joints
    points: np.ndarray  # (C, 3)
    forces: np.ndarray  # (C, 3) force on the cube at each point
    normals: np.ndarray  # (C, 3) unit normal pushing the cube

    @property
    def wrench(self):
        return self.force, self.torque


def hand_contact_frame(model, q, qdot, base=None):
    tree = tree_for(model)
    pos, rot, jpos, jaxis = tree.fk_arrays(q, base)
    return HandContactFrame(
        centers=tree.proxies_world(pos, rot),
        radii=tree.proxy_radius,
        ancestors=tree.ancestors[tree.proxy_link],
        joint_pos=jpos,
        joint_axis=jaxis,
        qdot=np.asarray(qdot, dtype=float),
        joint_mass=tree.inertia + tree.armature,
    )


def palm_plane_world(model, base=None):
    """The model's palm plane in the world (attached to the fixed root link)."""
    if model.palm_plane is None:
        return None
    t = np.zeros(3) if base is None else np.asarray(base.translation, dtype=float)
    r = quat.IDENTITY if base is None else base.rotation
    return PalmPlaneWorld(
        point=t + quat.rotate(r, model.palm_plane.center),
        normal=quat.rotate(r, [0.0, 0.0, 1.0]),
        u=quat.rotate(r, [1.0, 0.0, 0.0]),
        v=quat.rotate(r, [0.0, 1.0, 0.0]),
        half_extents=tuple(model.palm_plane.half_extents),
    )


_CORNERS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)


def detect_contacts(hand, plane, cube):
    """Return (points, normals, depths, ancestor rows) of all overlapping pairs.

    Normals point along the push on the cube. Sphere contacts use the closest
    point on the box surface; plane contacts use penetrating box corners.
    """
    e = cube.half_extent
    rmat = cube.rotation_matrix()
    pts, nrm, dep, anc = [], [], [], []
    dof = 0 if hand is None else hand.dof
    if hand is not None and len(hand.radii):
        rel = hand.centers - cube.position
        local = rel @ rmat
        clamped = np.clip(local, -e, e)
        d = local - clamped
        dist = np.sqrt(np.einsum("ij,ij->i", d, d))
        outside = dist > 1e-12
        margins = e - np.abs(local)
        depth = np.where(outside, hand.radii - dist, hand.radii + margins.min(axis=1))
        hit = np.nonzero(depth > 0)[0]
        for k in hit:
            if outside[k]:
                n_local = d[k] / dist[k]
                p_local = clamped[k]
            else:
                ax = int(np.argmin(margins[k]))
                s = 1.0 if local[k, ax] >= 0 else -1.0
                n_local = np.zeros(3)
                n_local[ax] = s
                p_local = local[k].copy()
                p_local[ax] = s * e
            pts.append(cube.position + rmat @ p_local)
            nrm.append(-(rmat @ n_local))
            dep.append(depth[k])
            anc.append(hand.ancestors[k])
    if plane is not None:
        verts = cube.position + (e * _CORNERS) @ rmat.T
        rel = verts - plane.point
        height = rel @ plane.normal
        ok = (height < 0) & (height > -e)
        if plane.half_extents is not None:
            ok &= (np.abs(rel @ plane.u) <= plane.half_extents[0]) & (np.abs(rel @ plane.v) <= plane.half_extents[1])
        for k in np.nonzero(ok)[0]:
            pts.append(verts[k])
            nrm.append(np.asarray(plane.normal, dtype=float))
            dep.append(-height[k])
            anc.append(np.zeros(dof, dtype=bool))
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, dof), dtype=bool)
    return np.array(pts), np.array(nrm), np.array(dep), np.array(anc, dtype=bool).reshape(len(pts), dof)


def _skew(r):
    z = np.zeros(r.shape[:-1])
    return np.stack(
        [
            np.stack([z, -r[..., 2], r[..., 1]], -1),
            np.stack([r[..., 2], z, -r[..., 0]], -1),
            np.stack([-r[..., 1], r[..., 0], z], -1),
        ],
        -2,
    )


def _velocity_jacobian(hand, cube, points, anc):
    """G (C, 3, dof+6): relative velocity (cube minus hand) at each point."""
    c = len(points)
    dof = 0 if hand is None else hand.dof
    g = np.zeros((c, 3, dof + 6))
    if dof:
        lever = points[:, None, :] - hand.joint_pos[None, :, :]
        cols = quat.cross(hand.joint_axis[None, :, :], lever) * anc[:, :, None]
        g[:, :, :dof] = -np.transpose(cols, (0, 2, 1))
    g[:, :, dof : dof + 3] = np.eye(3)
    g[:, :, dof + 3 :] = -_skew(points - cube.position)
    return g


def contact_forces(hand, plane, cube, params, dt=0.0, cube_force=None, joint_torque=None):
    """Penalty contact forces on the cube and reaction torques on the joints.

    ``hand`` is a HandContactFrame (or None), ``plane`` a PalmPlaneWorld (or
    None). With ``dt == 0`` forces are the explicit penalty law at the current
    velocities. With ``dt > 0`` they are evaluated at the end-of-substep
    velocities implied by applying them together with the known non-contact
    loads ``cube_force`` (default zero) and ``joint_torque`` (default zero).
    """
    points, normals, depths, anc = detect_contacts(hand, plane, cube)
    dof = 0 if hand is None else hand.dof
    n_c = len(points)
    if n_c == 0:
        return ContactResult(np.zeros(3), np.zeros(3), np.zeros(dof), points, np.zeros((0, 3)), normals)

    k = params.normal_stiffness
    mu = params.tangential_friction_coefficient
    kt = params.slip_damping
    g = _velocity_jacobian(hand, cube, points, anc)
    z = np.concatenate([np.zeros(dof) if hand is None else hand.qdot, cube.linear_velocity, cube.angular_velocity])
    u = np.einsum("cij,j->ci", g, z)
    s = np.einsum("ci,ci->c", u, normals)
    damping = np.where(s > 0, params.normal_damping * (1.0 - params.restitution), params.normal_damping)
    proj = np.eye(3)[None] - normals[:, :, None] * normals[:, None, :]

    if dt == 0.0:
        fn = np.maximum(k * depths - damping * s, 0.0)
        slip = np.einsum("cij,cj->ci", proj, u)
        ft = _capped_friction(slip, fn, mu, kt)
        forces = normals * fn[:, None] + ft
    else:
        forces = _implicit_forces(hand, cube, params, dt, g, z, normals, depths, damping, proj, cube_force, joint_torque)

    rel = points - cube.position
    joint_tau = np.zeros(dof)
    if dof:
        lever = points[:, None, :] - hand.joint_pos[None, :, :]
        # reaction -f at each point acting on every ancestor joint axis
        moment = quat.cross(lever, -forces[:, None, :])
        joint_tau = np.einsum("cjk,jk,cj->j", moment, hand.joint_axis, anc.astype(float))
    return ContactResult(
        force=forces.sum(axis=0),
        torque=quat.cross(rel, forces).sum(axis=0),
        joint_torque=joint_tau,
        points=points,
        forces=forces,
        normals=normals,
    )


def _capped_friction(slip, fn, mu, kt):
    speed = np.linalg.norm(slip, axis=1)
    mag = np.minimum(mu * fn, kt * speed)
    with np.errstate(invalid="ignore", divide="ignore"):
        direction = np.where(speed[:, None] > 1e-15, slip / np.where(speed > 0, speed, 1.0)[:, None], 0.0)
    return -mag[:, None] * direction


def _implicit_forces(hand, cube, params, dt, g, z, normals, depths, damping, proj, cube_force, joint_torque):
    """Per-contact forces consistent with the end-of-substep velocities.

    Active-set loop: every contact starts active and sticking (viscous
    friction); contacts pulling the cube are released and contacts whose
    viscous friction leaves the cone switch to sliding with a fixed direction
    and magnitude mu * f_n (f_n still implicit). Both sets only shrink, so
    the loop terminates.
    """
    dof = 0 if hand is None else hand.dof
    k = params.normal_stiffness
    mu = params.tangential_friction_coefficient
    kt = params.slip_damping
    size = dof + 6
    mass = np.zeros((size, size))
    if dof:
        mass[np.arange(dof), np.arange(dof)] = hand.joint_mass
    mass[dof : dof + 3, dof : dof + 3] = cube.mass * np.eye(3)
    iw = cube.world_inertia()
    mass[dof + 3 :, dof + 3 :] = iw
    known = np.zeros(size)
    if dof and joint_torque is not None:
        known[:dof] = joint_torque
    if cube_force is not None:
        known[dof : dof + 3] = cube_force
    w = cube.angular_velocity
    known[dof + 3 :] = -quat.cross(w, iw @ w)
    rhs0 = mass @ z + dt * known

    n_c = len(depths)
    active = np.ones(n_c, dtype=bool)
    sticking = np.ones(n_c, dtype=bool)
    slide_dir = np.zeros((n_c, 3))
    gn = np.einsum("cij,ci->cj", g, normals)  # n^T G
    gain = damping + dt * k
    gt = np.einsum("cij,cjk->cik", proj, g)  # P G
    z_new = z
    for _ in range(MAX_CONTACT_ITERS):
        st = active & sticking
        sl = active & ~sticking
        a = mass + dt * (gn[active].T * gain[active]) @ gn[active]
        rhs = rhs0 + dt * (k * depths[active]) @ gn[active]
        if st.any():
            gts = gt[st].reshape(-1, size)
            a += dt * kt * gts.T @ gts
        if sl.any():
            gd = np.einsum("cij,ci->cj", g[sl], slide_dir[sl])
            a -= dt * mu * (gd.T * gain[sl]) @ gn[sl]
            rhs -= dt * mu * (k * depths[sl]) @ gd
        z_new = np.linalg.solve(a, rhs)
        fn = k * depths - gain * (gn @ z_new)
        drop = active & (fn < 0)
        if drop.any():
            active &= ~drop
            continue
        slip = gt[st] @ z_new
        speed = np.linalg.norm(slip, axis=1)
        over = kt * speed > mu * fn[st] * (1.0 + 1e-9) + 1e-15
        if not over.any():
            break
        idx = np.nonzero(st)[0][over]
        sticking[idx] = False
        slide_dir[idx] = slip[over] / speed[over][:, None]
    fn = np.where(active, np.maximum(k * depths - gain * (gn @ z_new), 0.0), 0.0)
    slip = np.einsum("cij,j->ci", gt, z_new)
    ft = np.where(sticking[:, None], -kt * slip, -mu * fn[:, None] * slide_dir) * active[:, None]
    # guard the friction cone against solver round-off
    ft_mag = np.linalg.norm(ft, axis=1)
    scale = np.where(ft_mag > mu * fn, mu * fn / np.where(ft_mag > 0, ft_mag, 1.0), 1.0)
    return normals * fn[:, None] + ft * scale[:, None]


# -- full step ---------------------------------------------------------------


def substep(model, state, targets, cfg, base=None, plane=None):
    """One physics substep with the joint targets held fixed."""
    tree = tree_for(model)
    dt = cfg.dt
    gravity = np.asarray(cfg.gravity, dtype=float)
    tau = _joint_torque(tree, state.q, state.qdot, targets)
    hand = hand_contact_frame(model, state.q, state.qdot, base)
    if plane is None:
        plane = palm_plane_world(model, base)
    contact = contact_forces(
        hand, plane, state.cube, cfg.contact, dt=dt, cube_force=state.cube.mass * gravity, joint_torque=tau
    )
    q, qdot = step_joints(model, state.q, state.qdot, targets, contact.joint_torque, dt)
    cube = step_cube(state.cube, contact.wrench, gravity, dt)
    return SimState(q=q, qdot=qdot, cube=cube, time=state.time + dt, effort=tau), contact


def step_sim(model, state, action, cfg, base=None):
    """Advance one control step: ``cfg.substeps_per_control`` substeps at fixed targets."""
    tree = tree_for(model)
    targets = np.clip(tree.check(action), tree.lo, tree.hi)
    plane = palm_plane_world(model, base)
    for _ in range(int(cfg.substeps_per_control)):
        state, _ = substep(model, state, targets, cfg, base, plane)
    return state


def initial_state(model, cube, q=None):
    tree = tree_for(model)
    q = np.asarray(model.pose("init_flat") if q is None else q, dtype=float)
    q = np.clip(tree.check(q), tree.lo, tree.hi)
    return SimState(q=q, qdot=np.zeros(tree.dof), cube=cube, time=0.0, effort=np.zeros(tree.dof))
