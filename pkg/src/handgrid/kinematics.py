"""Forward kinematics, joint clamping and collision-proxy placement.

Poses are quaternion-based and renormalized after every composition. All
functions accept joint vectors with leading batch axes, ``q.shape == (..., dof)``.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from handgrid import quat


@dataclass(frozen=True)
class Transform:
    translation: np.ndarray
    rotation: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), quat.IDENTITY.copy())

    @classmethod
    def from_xyz_quat(cls, xyz, q=(1.0, 0.0, 0.0, 0.0)):
        return cls(np.asarray(xyz, dtype=float), quat.normalize(q))

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        t = self.translation + quat.rotate(self.rotation, other.translation)
        r = quat.normalize(quat.mul(self.rotation, other.rotation))
        return Transform(t, r)

    def apply(self, points):
        return self.translation + quat.rotate(self.rotation, points)

    def inverse(self):
        r = quat.conj(self.rotation)
        return Transform(-quat.rotate(r, self.translation), r)


class KinematicTree:
    """Array form of a HandModel used by FK and the physics stepper."""

    def __init__(self, model):
        self.model = model
        self.link_names = [link.name for link in model.links]
        self.link_index = {n: i for i, n in enumerate(self.link_names)}
        self.root = self.link_index[model.root_link]
        joints = model.joints
        self.dof = len(joints)
        self.parent = np.array([self.link_index[j.parent] for j in joints], dtype=int)
        self.child = np.array([self.link_index[j.child] for j in joints], dtype=int)
        self.origin_xyz = np.array([j.origin_xyz for j in joints], dtype=float).reshape(-1, 3)
        self.origin_quat = quat.normalize(np.array([j.origin_quat for j in joints], dtype=float).reshape(-1, 4))
        self.axis = np.array([j.axis for j in joints], dtype=float).reshape(-1, 3)
        self.lo = np.array([j.limits.lo for j in joints], dtype=float)
        self.hi = np.array([j.limits.hi for j in joints], dtype=float)
        self.velocity_limit = np.array([j.limits.velocity for j in joints], dtype=float)
        self.effort_limit = np.array([j.limits.effort for j in joints], dtype=float)
        self.stiffness = np.array([j.actuator.stiffness for j in joints], dtype=float)
        self.damping = np.array([j.actuator.damping for j in joints], dtype=float)
        self.friction = np.array([j.actuator.friction for j in joints], dtype=float)
        self.armature = np.array([j.actuator.armature for j in joints], dtype=float)
        self.inertia = np.array([j.inertia for j in joints], dtype=float)

        # joint that creates each link (-1 for root)
        joint_of_link = np.full(len(self.link_names), -1, dtype=int)
        joint_of_link[self.child] = np.arange(self.dof)
        self.joint_of_link = joint_of_link
        depth = {self.root: 0}
        pending = list(range(self.dof))
        levels = []
        while pending:
            ready = [k for k in pending if self.parent[k] in depth]
            if not ready:
                raise ValueError(f"model '{model.name}' joints do not form a tree")
            for k in ready:
                depth[self.child[k]] = depth[self.parent[k]] + 1
            levels.append(np.array(ready, dtype=int))
            pending = [k for k in pending if k not in ready]
        self.levels = levels
        ident = np.all(np.abs(self.origin_quat - quat.IDENTITY) < 1e-15, axis=1)
        self.level_plain_origin = [bool(ident[idx].all()) for idx in levels]

        # ancestors[l, j]: joint j moves link l
        anc = np.zeros((len(self.link_names), self.dof), dtype=bool)
        for li in range(len(self.link_names)):
            node = li
            while joint_of_link[node] >= 0:
                j = joint_of_link[node]
                anc[li, j] = True
                node = self.parent[j]
        self.ancestors = anc

        centers, radii, owner = [], [], []
        for li, link in enumerate(model.links):
            for p in link.proxies:
                centers.append(p.center)
                radii.append(p.radius)
                owner.append(li)
        self.proxy_center = np.array(centers, dtype=float).reshape(-1, 3)
        self.proxy_radius = np.array(radii, dtype=float)
        self.proxy_link = np.array(owner, dtype=int)

    def check(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape[-1:] != (self.dof,):
            raise ValueError(f"joint vector has shape {q.shape}, expected (..., {self.dof}) for '{self.model.name}'")
        return q

    def fk_arrays(self, q, base=None):
        """Return (link_pos, link_quat, joint_pos, joint_axis) in the world frame."""
        q = self.check(q)
        batch = q.shape[:-1]
        n_links = len(self.link_names)
        link_pos = np.empty(batch + (n_links, 3))
        link_quat = np.empty(batch + (n_links, 4))
        joint_pos = np.empty(batch + (self.dof, 3))
        joint_axis = np.empty(batch + (self.dof, 3))
        if base is None:
            link_pos[..., self.root, :] = 0.0
            link_quat[..., self.root, :] = quat.IDENTITY
        else:
            link_pos[..., self.root, :] = base.translation
            link_quat[..., self.root, :] = quat.normalize(base.rotation)
        for idx, plain in zip(self.levels, self.level_plain_origin):
            pp = link_pos[..., self.parent[idx], :]
            pq = link_quat[..., self.parent[idx], :]
            jp = pp + quat.rotate(pq, self.origin_xyz[idx])
            jq = pq if plain else quat.normalize(quat.mul(pq, self.origin_quat[idx]))
            spin = quat.from_axis_angle(self.axis[idx], q[..., idx])
            link_pos[..., self.child[idx], :] = jp
            link_quat[..., self.child[idx], :] = quat.normalize(quat.mul(jq, spin))
            joint_pos[..., idx, :] = jp
            joint_axis[..., idx, :] = quat.rotate(jq, self.axis[idx])
        return link_pos, link_quat, joint_pos, joint_axis

    def proxies_world(self, link_pos, link_quat):
        owner = self.proxy_link
        return link_pos[..., owner, :] + quat.rotate(link_quat[..., owner, :], self.proxy_center)


_TREES = {}


def tree_for(model):
    """Compiled KinematicTree for ``model`` (cached per model object)."""
    key = id(model)
    hit = _TREES.get(key)
    if hit is not None and hit[0]() is model:
        return hit[1]
    tree = KinematicTree(model)
    _TREES[key] = (weakref.ref(model), tree)
    return tree


def forward_kinematics(model, q, base=None):
    """World pose of every link: child = parent ∘ joint origin ∘ rotation(axis, q_i)."""
    tree = tree_for(model)
    pos, rot, _, _ = tree.fk_arrays(q, base)
    return {name: Transform(pos[..., i, :], rot[..., i, :]) for i, name in enumerate(tree.link_names)}


def clamp_joint_targets(model, q):
    tree = tree_for(model)
    q = tree.check(q)
    return np.minimum(np.maximum(q, tree.lo), tree.hi)


def collision_proxies_world(model, q, base=None):
    """List of (link name, world center, radius) for every sphere proxy."""
    tree = tree_for(model)
    pos, rot, _, _ = tree.fk_arrays(q, base)
    centers = tree.proxies_world(pos, rot)
    return [
        (tree.link_names[li], centers[..., k, :], float(tree.proxy_radius[k]))
        for k, li in enumerate(tree.proxy_link)
    ]


def palm_frame(model, q, base=None):
    """Frame at the palm-origin joint axis center, lifted to the palm surface.

    Orientation follows the joint's parent link, so at the flat pose with an
    identity base the z-axis is world-up.
    """
    tree = tree_for(model)
    try:
        j = model.joint(model.palm_origin_joint)
    except KeyError:
        raise ValueError(f"palm_origin_joint '{model.palm_origin_joint}' missing from '{model.name}'") from None
    pos, rot, _, _ = tree.fk_arrays(q, base)
    parent = tree.link_index[j.parent]
    local = np.asarray(j.origin_xyz, dtype=float) + np.array([0.0, 0.0, model.palm_surface_height])
    parent_pose = Transform(pos[..., parent, :], rot[..., parent, :])
    return Transform(parent_pose.apply(local), parent_pose.rotation)
