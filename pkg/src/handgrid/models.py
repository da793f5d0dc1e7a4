"""Builtin hand models: ISyHand, its flat-palm ablation and Allegro/LEAP proxies.

All hands lie palm-up: +z is the palm normal, +y points from the wrist to
the fingertips and +x toward the thumb. Finger flexion is positive about the
local +x axis so fingers curl up off the palm. Geometry is reconstructed from
the published outer dimensions (ISyHand 255 x 130 x 38 mm) and is coarse for
the two reference hands; every number lives in the emitted spec document.
"""

import math

import numpy as np

from handgrid import quat
from handgrid.handspec import (
    ActuatorParams,
    HandModel,
    JointLimits,
    JointSpec,
    LinkSpec,
    PalmPlane,
    Proxy,
)

# unified joint simulation parameters shared by every hand
ACTUATOR = ActuatorParams(stiffness=3.0, damping=0.1, friction=0.01, armature=0.001)

# ISyHand motors: XL330 (finger flexion), XC330 (ab/adduction, palm, thumb rotation)
XL = (5.90, 0.52)
XC = (5.50, 0.93)
ALLEGRO = (6.28, 0.5)
LEAP = (8.48, 0.95)

X = (1.0, 0.0, 0.0)
Y = (0.0, 1.0, 0.0)
NEG_Y = (0.0, -1.0, 0.0)
Z = (0.0, 0.0, 1.0)
NO_ROT = (1.0, 0.0, 0.0, 0.0)


def _zrot(deg):
    q = quat.from_axis_angle(np.array(Z), math.radians(deg))
    return tuple(float(c) for c in q)


class _Builder:
    def __init__(self, name, palm_joint, surface, plane):
        self.name = name
        self.palm_joint = palm_joint
        self.surface = surface
        self.plane = plane
        self.links = []
        self.joints = []

    def link(self, name, mass, proxies):
        self.links.append(LinkSpec(name, mass, tuple(Proxy(tuple(c), r) for c, r in proxies)))

    def joint(self, name, parent, child, xyz, axis, lo, hi, motor, quat_=NO_ROT):
        vel, eff = motor
        self.joints.append(
            JointSpec(
                name=name,
                parent=parent,
                child=child,
                origin_xyz=tuple(float(v) for v in xyz),
                origin_quat=quat_,
                axis=axis,
                limits=JointLimits(lo, hi, vel, eff),
                actuator=ACTUATOR,
            )
        )

    def phalanx(self, name, length, radius, mass, n=3):
        """Link extending along local +y with ``n`` spheres."""
        step = length / n
        self.link(name, mass, [((0.0, step * (k + 0.5), 0.0), radius) for k in range(n)])

    def build(self):
        model = HandModel(
            name=self.name,
            links=tuple(self.links),
            joints=tuple(self.joints),
            palm_origin_joint=self.palm_joint,
            palm_surface_height=self.surface,
            palm_plane=self.plane,
            poses={},
        )
        model = _with_inertia(model)
        flat = {j.name: min(max(0.0, j.limits.lo), j.limits.hi) for j in model.joints}
        return HandModel(
            name=model.name,
            links=model.links,
            joints=model.joints,
            palm_origin_joint=model.palm_origin_joint,
            palm_surface_height=model.palm_surface_height,
            palm_plane=model.palm_plane,
            poses={"init_flat": flat},
        )


def _with_inertia(model):
    """Fill each joint's effective link inertia from its subtree at the flat pose.

    Every link is treated as a point mass at its proxy centroid; the inertia is
    sum(m * d_perp^2) over links moved by the joint, rounded to 1e-7.
    """
    from handgrid.kinematics import KinematicTree

    tree = KinematicTree(model)
    q0 = np.clip(np.zeros(tree.dof), tree.lo, tree.hi)
    pos, rot, jpos, jaxis = tree.fk_arrays(q0)
    centroids = []
    for li, link in enumerate(model.links):
        local = np.mean([p.center for p in link.proxies], axis=0) if link.proxies else np.zeros(3)
        centroids.append(pos[li] + quat.rotate(rot[li], local))
    joints = []
    for k, j in enumerate(model.joints):
        total = 0.0
        for li, link in enumerate(model.links):
            if tree.ancestors[li, k]:
                d = centroids[li] - jpos[k]
                d_perp = d - np.dot(d, jaxis[k]) * jaxis[k]
                total += link.mass * float(np.dot(d_perp, d_perp))
        joints.append(
            JointSpec(
                j.name, j.parent, j.child, j.origin_xyz, j.origin_quat, j.axis, j.limits, j.actuator,
                inertia=round(total, 7),
            )
        )
    return HandModel(
        model.name, model.links, tuple(joints), model.palm_origin_joint,
        model.palm_surface_height, model.palm_plane, model.poses,
    )


# ISyHand -------------------------------------------------------------------

ISY_AXIS_DEPTH = 0.011  # joint axes sit this far below the palm surface
ISY_MCP_Y = 0.105
ISY_FINGER_X = {"index": 0.036, "middle": 0.0, "ring": -0.036}
ISY_PALM_JOINT_X = 0.018
ISY_R = 0.011


def _isy_finger(b, finger, parent, xyz):
    b.joint(f"{finger}_abd", parent, f"{finger}_base", xyz, Z, -0.35, 0.35, XC)
    b.link(f"{finger}_base", 0.025, [((0.0, 0.0075, 0.0), ISY_R), ((0.008, 0.0075, 0.0), 0.008), ((-0.008, 0.0075, 0.0), 0.008)])
    b.joint(f"{finger}_mcp", f"{finger}_base", f"{finger}_proximal", (0.0, 0.015, 0.0), X, -0.30, 1.60, XL)
    b.phalanx(f"{finger}_proximal", 0.050, ISY_R, 0.022)
    b.joint(f"{finger}_pip", f"{finger}_proximal", f"{finger}_middle", (0.0, 0.050, 0.0), X, -0.10, 1.70, XL)
    b.phalanx(f"{finger}_middle", 0.040, ISY_R, 0.020)
    b.joint(f"{finger}_dip", f"{finger}_middle", f"{finger}_distal", (0.0, 0.040, 0.0), X, -0.10, 1.60, XL)
    b.phalanx(f"{finger}_distal", 0.045, ISY_R, 0.012)


def _isy_thumb(b):
    # thumb adapter fixed at 30 degrees outward; the chain starts with a roll joint
    b.joint("thumb_rot", "palm", "thumb_base", (0.047, 0.028, -ISY_AXIS_DEPTH), Y, -0.20, 1.80, XC, _zrot(-30.0))
    b.link("thumb_base", 0.025, [((0.0, 0.010, 0.0), ISY_R), ((0.0, 0.020, 0.0), 0.009), ((0.006, 0.010, 0.0), 0.008)])
    b.joint("thumb_mcp", "thumb_base", "thumb_proximal", (0.0, 0.020, 0.0), X, -0.30, 1.60, XL)
    b.phalanx("thumb_proximal", 0.045, ISY_R, 0.022)
    b.joint("thumb_pip", "thumb_proximal", "thumb_middle", (0.0, 0.045, 0.0), X, -0.10, 1.70, XL)
    b.phalanx("thumb_middle", 0.035, ISY_R, 0.020)
    b.joint("thumb_dip", "thumb_middle", "thumb_distal", (0.0, 0.035, 0.0), X, -0.10, 1.60, XL)
    b.phalanx("thumb_distal", 0.040, ISY_R, 0.012)


def _isy_palm_proxies():
    # lower palm below the articulated side panels; spheres flush with the surface
    r = 0.012
    z = -r
    return [((-0.040, 0.015, z), r), ((-0.040, 0.040, z), r), ((0.030, 0.012, z), r), ((-0.012, 0.012, z), r)]


def _isy_side_proxies(sign):
    # local frame at the palm joint; panel extends outward along sign * x
    r = 0.012
    return [((sign * dx, dy, -r + ISY_AXIS_DEPTH), r) for dx in (0.010, 0.030) for dy in (-0.015, 0.015)]


ISY_PLANE = PalmPlane(center=(0.0, 0.0525, 0.0), half_extents=(ISY_PALM_JOINT_X, 0.0525))


def isyhand():
    b = _Builder("isyhand", "middle_abd", ISY_AXIS_DEPTH, ISY_PLANE)
    b.link("palm", 0.150, _isy_palm_proxies())
    inner_xyz = (ISY_PALM_JOINT_X, 0.075, -ISY_AXIS_DEPTH)
    outer_xyz = (-ISY_PALM_JOINT_X, 0.075, -ISY_AXIS_DEPTH)
    b.joint("palm_inner", "palm", "palm_index_side", inner_xyz, NEG_Y, -0.20, 0.80, XC)
    b.link("palm_index_side", 0.040, _isy_side_proxies(+1.0))
    b.joint("palm_outer", "palm", "palm_ring_side", outer_xyz, Y, -0.20, 0.80, XC)
    b.link("palm_ring_side", 0.040, _isy_side_proxies(-1.0))
    mcp = lambda f: (ISY_FINGER_X[f], ISY_MCP_Y, -ISY_AXIS_DEPTH)  # noqa: E731
    rel = lambda f, o: tuple(a - c for a, c in zip(mcp(f), o))  # noqa: E731
    _isy_finger(b, "index", "palm_index_side", rel("index", inner_xyz))
    _isy_finger(b, "middle", "palm", mcp("middle"))
    _isy_finger(b, "ring", "palm_ring_side", rel("ring", outer_xyz))
    _isy_thumb(b)
    return b.build()


def isyhand_flat():
    """ISyHand with the two palm joints removed and the side panels fused into the palm."""
    b = _Builder("isyhand_flat", "middle_abd", ISY_AXIS_DEPTH, ISY_PLANE)
    inner_xyz = np.array((ISY_PALM_JOINT_X, 0.075, -ISY_AXIS_DEPTH))
    outer_xyz = np.array((-ISY_PALM_JOINT_X, 0.075, -ISY_AXIS_DEPTH))
    fused = list(_isy_palm_proxies())
    fused += [(tuple(inner_xyz + np.array(c)), r) for c, r in _isy_side_proxies(+1.0)]
    fused += [(tuple(outer_xyz + np.array(c)), r) for c, r in _isy_side_proxies(-1.0)]
    b.link("palm", 0.230, fused)
    for finger in ("index", "middle", "ring"):
        _isy_finger(b, finger, "palm", (ISY_FINGER_X[finger], ISY_MCP_Y, -ISY_AXIS_DEPTH))
    _isy_thumb(b)
    return b.build()


# Allegro-like ------------------------------------------------------------------

AL_DEPTH = 0.012
AL_R = 0.0125
AL_MCP_Y = 0.095
AL_FINGER_X = {"index": 0.0454, "middle": 0.0, "ring": -0.0454}


def allegro_like():
    plane = PalmPlane(center=(0.0, 0.0475, 0.0), half_extents=(0.055, 0.0475))
    b = _Builder("allegro_like", "middle_j0", AL_DEPTH, plane)
    r = 0.012
    b.link("palm", 0.40, [((x, y, -r), r) for x in (-0.04, 0.04) for y in (0.02, 0.07)])
    for finger in ("index", "middle", "ring"):
        _allegro_finger(b, finger, (AL_FINGER_X[finger], AL_MCP_Y, -AL_DEPTH))
    b.joint("thumb_j0", "palm", "thumb_base", (0.055, 0.025, -AL_DEPTH), Y, 0.263, 1.396, ALLEGRO, _zrot(-35.0))
    b.link("thumb_base", 0.035, [((0.0, 0.008, 0.0), AL_R), ((0.008, 0.008, 0.0), 0.009), ((-0.008, 0.008, 0.0), 0.009)])
    b.joint("thumb_j1", "thumb_base", "thumb_link1", (0.0, 0.016, 0.0), Z, -0.105, 1.163, ALLEGRO)
    b.phalanx("thumb_link1", 0.018, AL_R, 0.030, n=2)
    b.joint("thumb_j2", "thumb_link1", "thumb_link2", (0.0, 0.018, 0.0), X, -0.189, 1.644, ALLEGRO)
    b.phalanx("thumb_link2", 0.051, AL_R, 0.038)
    b.joint("thumb_j3", "thumb_link2", "thumb_tip", (0.0, 0.051, 0.0), X, -0.162, 1.719, ALLEGRO)
    b.phalanx("thumb_tip", 0.059, AL_R, 0.035)
    return b.build()


def _allegro_finger(b, finger, xyz):
    b.joint(f"{finger}_j0", "palm", f"{finger}_base", xyz, Z, -0.47, 0.47, ALLEGRO)
    b.link(f"{finger}_base", 0.010, [((0.0, 0.008, 0.0), AL_R), ((0.008, 0.008, 0.0), 0.009), ((-0.008, 0.008, 0.0), 0.009)])
    b.joint(f"{finger}_j1", f"{finger}_base", f"{finger}_link1", (0.0, 0.0164, 0.0), X, -0.196, 1.61, ALLEGRO)
    b.phalanx(f"{finger}_link1", 0.054, AL_R, 0.065)
    b.joint(f"{finger}_j2", f"{finger}_link1", f"{finger}_link2", (0.0, 0.054, 0.0), X, -0.174, 1.709, ALLEGRO)
    b.phalanx(f"{finger}_link2", 0.0384, AL_R, 0.035)
    b.joint(f"{finger}_j3", f"{finger}_link2", f"{finger}_tip", (0.0, 0.0384, 0.0), X, -0.227, 1.618, ALLEGRO)
    b.phalanx(f"{finger}_tip", 0.0567, AL_R, 0.035)


# LEAP-like ---------------------------------------------------------------------

LP_DEPTH = 0.013
LP_R = 0.013
LP_MCP_Y = 0.100
LP_FINGER_X = {"index": 0.046, "middle": 0.0, "ring": -0.046}


def leap_like():
    """Coarse LEAP proxy: flexion precedes ab/adduction at the MCP."""
    plane = PalmPlane(center=(0.0, 0.050, 0.0), half_extents=(0.060, 0.050))
    b = _Builder("leap_like", "middle_mcp_fwd", LP_DEPTH, plane)
    r = 0.013
    b.link("palm", 0.30, [((x, y, -r), r) for x in (-0.045, 0.045) for y in (0.02, 0.075)])
    for finger in ("index", "middle", "ring"):
        _leap_finger(b, finger, (LP_FINGER_X[finger], LP_MCP_Y, -LP_DEPTH))
    b.joint("thumb_pip_side", "palm", "thumb_base", (0.058, 0.030, -LP_DEPTH), Y, -0.349, 2.094, LEAP, _zrot(-30.0))
    b.link("thumb_base", 0.040, [((0.0, 0.009, 0.0), LP_R), ((0.008, 0.009, 0.0), 0.01), ((-0.008, 0.009, 0.0), 0.01)])
    b.joint("thumb_pip", "thumb_base", "thumb_link1", (0.0, 0.018, 0.0), Z, -0.47, 2.443, LEAP)
    b.phalanx("thumb_link1", 0.030, LP_R, 0.040, n=2)
    b.joint("thumb_dip", "thumb_link1", "thumb_link2", (0.0, 0.030, 0.0), X, -1.20, 1.90, LEAP)
    b.phalanx("thumb_link2", 0.050, LP_R, 0.040)
    b.joint("thumb_tip_joint", "thumb_link2", "thumb_tip", (0.0, 0.050, 0.0), X, -1.34, 1.88, LEAP)
    b.phalanx("thumb_tip", 0.060, LP_R, 0.030)
    return b.build()


def _leap_finger(b, finger, xyz):
    b.joint(f"{finger}_mcp_fwd", "palm", f"{finger}_base", xyz, X, -0.314, 2.23, LEAP)
    b.link(f"{finger}_base", 0.040, [((0.0, 0.009, 0.0), LP_R), ((0.009, 0.009, 0.0), 0.01), ((-0.009, 0.009, 0.0), 0.01)])
    b.joint(f"{finger}_mcp_side", f"{finger}_base", f"{finger}_link1", (0.0, 0.018, 0.0), Z, -1.047, 1.047, LEAP)
    b.phalanx(f"{finger}_link1", 0.038, LP_R, 0.040)
    b.joint(f"{finger}_pip", f"{finger}_link1", f"{finger}_link2", (0.0, 0.038, 0.0), X, -0.506, 1.885, LEAP)
    b.phalanx(f"{finger}_link2", 0.036, LP_R, 0.035)
    b.joint(f"{finger}_dip", f"{finger}_link2", f"{finger}_tip", (0.0, 0.036, 0.0), X, -0.366, 2.042, LEAP)
    b.phalanx(f"{finger}_tip", 0.055, LP_R, 0.030)


BUILDERS = {
    "isyhand": isyhand,
    "isyhand_flat": isyhand_flat,
    "allegro_like": allegro_like,
    "leap_like": leap_like,
}

_CACHE = {}


def build_all():
    if not _CACHE:
        for name, fn in BUILDERS.items():
            _CACHE[name] = fn()
    return dict(_CACHE)
