"""Hand-model descriptions: types, JSON parsing/serialization and validation.

A hand-spec document is UTF-8 JSON::

    {"name": ..., "palm_origin_joint": ...,
     "links": [{"name", "mass", "proxies": [{"center": [x, y, z], "radius"}]}],
     "joints": [{"name", "parent", "child",
                 "origin": {"xyz": [...], "quat": [w, x, y, z]},
                 "axis": [...],
                 "limits": {"lo", "hi", "velocity", "effort"},
                 "actuator": {"stiffness", "damping", "friction", "armature"}}]}

Optional keys: ``palm_surface_height`` (m above the palm-origin joint axis),
``palm_plane`` ({"center": [x, y, z], "half_extents": [hx, hy]} in the root
link frame, normal +z), ``poses`` ({pose: {joint: angle}}) and per-joint
``inertia`` (effective link inertia about the joint axis, kg m^2).
SI units throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

AXIS_TOL = 1e-9
DEFAULT_LINK_INERTIA = 1e-5


class HandSpecError(ValueError):
    """Semantic problems with a hand model; ``diagnostics`` lists each one."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class HandSpecSyntaxError(HandSpecError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f"line {line} column {column}: " if line is not None else ""
        super().__init__([f"syntax error: {where}{message}"])


@dataclass(frozen=True)
class ActuatorParams:
    stiffness: float
    damping: float
    friction: float
    armature: float


@dataclass(frozen=True)
class JointLimits:
    lo: float
    hi: float
    velocity: float
    effort: float


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: str
    child: str
    origin_xyz: tuple
    origin_quat: tuple
    axis: tuple
    limits: JointLimits
    actuator: ActuatorParams
    inertia: float = DEFAULT_LINK_INERTIA


@dataclass(frozen=True)
class Proxy:
    center: tuple
    radius: float


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float
    proxies: tuple = ()


@dataclass(frozen=True)
class PalmPlane:
    center: tuple
    half_extents: tuple


@dataclass(frozen=True, eq=True)
class HandModel:
    name: str
    links: tuple
    joints: tuple
    palm_origin_joint: str
    palm_surface_height: float = 0.0
    palm_plane: PalmPlane | None = None
    poses: dict = field(default_factory=dict)

    @property
    def dof(self):
        return len(self.joints)

    @property
    def joint_names(self):
        return [j.name for j in self.joints]

    def joint(self, name):
        for j in self.joints:
            if j.name == name:
                return j
        raise KeyError(name)

    def link(self, name):
        for link in self.links:
            if link.name == name:
                return link
        raise KeyError(name)

    @property
    def root_link(self):
        children = {j.child for j in self.joints}
        roots = [link.name for link in self.links if link.name not in children]
        if len(roots) != 1:
            raise HandSpecError([f"model '{self.name}': expected one root link, found {roots}"])
        return roots[0]

    def pose(self, name="init_flat"):
        """Joint vector for a named pose; unnamed joints sit at 0 clipped into limits."""
        values = self.poses.get(name, {})
        out = []
        for j in self.joints:
            v = values.get(j.name, 0.0)
            out.append(min(max(v, j.limits.lo), j.limits.hi))
        return out


def _finite(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _norm(v):
    return math.sqrt(sum(c * c for c in v))


def validate_model(model):
    """Return a list of human-readable diagnostics; empty means the model is valid."""
    diags = []
    link_names = [link.name for link in model.links]
    seen = set()
    for name in link_names:
        if name in seen:
            diags.append(f"link '{name}': duplicate name")
        seen.add(name)
    for link in model.links:
        if not _finite(link.mass) or link.mass < 0:
            diags.append(f"link '{link.name}': mass must be finite and >= 0")
        for k, p in enumerate(link.proxies):
            if len(p.center) != 3 or not all(_finite(c) for c in p.center):
                diags.append(f"link '{link.name}' proxy {k}: center must be a finite 3-vector")
            if not _finite(p.radius) or p.radius <= 0:
                diags.append(f"link '{link.name}' proxy {k}: radius must be > 0")

    seen = set()
    links = set(link_names)
    parent_of = {}
    for j in model.joints:
        tag = f"joint '{j.name}'"
        if j.name in seen:
            diags.append(f"{tag}: duplicate name")
        seen.add(j.name)
        if j.parent not in links:
            diags.append(f"{tag}: dangling parent '{j.parent}'")
        if j.child not in links:
            diags.append(f"{tag}: dangling child '{j.child}'")
        if j.child in parent_of:
            diags.append(f"{tag}: link '{j.child}' has multiple parent joints")
        parent_of[j.child] = j.parent
        if len(j.axis) != 3 or not all(_finite(c) for c in j.axis) or abs(_norm(j.axis) - 1.0) > AXIS_TOL:
            diags.append(f"{tag}: non-unit axis {list(j.axis)}")
        if len(j.origin_xyz) != 3 or not all(_finite(c) for c in j.origin_xyz):
            diags.append(f"{tag}: origin xyz must be a finite 3-vector")
        if (
            len(j.origin_quat) != 4
            or not all(_finite(c) for c in j.origin_quat)
            or abs(_norm(j.origin_quat) - 1.0) > AXIS_TOL
        ):
            diags.append(f"{tag}: non-unit origin quaternion {list(j.origin_quat)}")
        lim = j.limits
        if not all(_finite(v) for v in (lim.lo, lim.hi, lim.velocity, lim.effort)):
            diags.append(f"{tag}: limits must be finite")
        else:
            if not lim.lo < lim.hi:
                diags.append(f"{tag}: position limits need lo < hi")
            if lim.velocity <= 0:
                diags.append(f"{tag}: velocity limit must be > 0")
            if lim.effort <= 0:
                diags.append(f"{tag}: effort limit must be > 0")
        act = j.actuator
        values = (act.stiffness, act.damping, act.friction, act.armature)
        if not all(_finite(v) and v >= 0 for v in values):
            diags.append(f"{tag}: actuator parameters must be finite and >= 0")
        elif act.stiffness <= 0:
            diags.append(f"{tag}: actuated joint needs stiffness > 0")
        if not _finite(j.inertia) or j.inertia < 0:
            diags.append(f"{tag}: inertia must be finite and >= 0")
        elif _finite(act.armature) and j.inertia + act.armature <= 0:
            diags.append(f"{tag}: effective inertia (inertia + armature) must be > 0")

    roots = [name for name in link_names if name not in parent_of]
    if not roots:
        diags.append(f"model '{model.name}': missing root link")
    elif len(set(roots)) > 1:
        diags.append(f"model '{model.name}': multiple root links {sorted(set(roots))}")
    for start in parent_of:
        node, steps = start, 0
        while node in parent_of and steps <= len(parent_of):
            node = parent_of[node]
            steps += 1
        if steps > len(parent_of):
            diags.append(f"link '{start}': cycle in joint tree")
            break

    if model.palm_origin_joint not in seen:
        diags.append(f"model '{model.name}': palm_origin_joint '{model.palm_origin_joint}' not among joints")
    if not _finite(model.palm_surface_height):
        diags.append(f"model '{model.name}': palm_surface_height must be finite")
    if model.palm_plane is not None:
        pp = model.palm_plane
        if len(pp.center) != 3 or not all(_finite(c) for c in pp.center):
            diags.append("palm_plane: center must be a finite 3-vector")
        if len(pp.half_extents) != 2 or not all(_finite(c) and c > 0 for c in pp.half_extents):
            diags.append("palm_plane: half_extents must be two positive numbers")
    by_name = {j.name: j for j in model.joints}
    for pose, values in model.poses.items():
        for jname, v in values.items():
            if jname not in by_name:
                diags.append(f"pose '{pose}': unknown joint '{jname}'")
            elif not _finite(v) or not by_name[jname].limits.lo <= v <= by_name[jname].limits.hi:
                diags.append(f"pose '{pose}': joint '{jname}' value {v} outside limits")
    return diags


# -- JSON document <-> model -------------------------------------------------


def _req(obj, key, path):
    if not isinstance(obj, dict):
        raise HandSpecError([f"{path}: expected an object"])
    if key not in obj:
        raise HandSpecError([f"{path}: missing required key '{key}'"])
    return obj[key]


def _num(obj, key, path):
    v = _req(obj, key, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise HandSpecError([f"{path}.{key}: expected a number, got {v!r}"])
    return float(v)


def _vec(value, n, path):
    if not isinstance(value, list) or len(value) != n:
        raise HandSpecError([f"{path}: expected a list of {n} numbers"])
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise HandSpecError([f"{path}: expected numbers, got {v!r}"])
    return tuple(float(v) for v in value)


def _str(obj, key, path):
    v = _req(obj, key, path)
    if not isinstance(v, str) or not v:
        raise HandSpecError([f"{path}.{key}: expected a non-empty string"])
    return v


def model_from_dict(doc):
    """Build a model from a decoded document without validating invariants."""
    links = []
    raw_links = _req(doc, "links", "$")
    if not isinstance(raw_links, list):
        raise HandSpecError(["$.links: expected an array"])
    for i, raw in enumerate(raw_links):
        path = f"$.links[{i}]"
        proxies = []
        raw_proxies = raw.get("proxies", []) if isinstance(raw, dict) else None
        if not isinstance(raw_proxies, list):
            raise HandSpecError([f"{path}.proxies: expected an array"])
        for k, p in enumerate(raw_proxies):
            ppath = f"{path}.proxies[{k}]"
            proxies.append(Proxy(_vec(_req(p, "center", ppath), 3, ppath + ".center"), _num(p, "radius", ppath)))
        links.append(LinkSpec(_str(raw, "name", path), _num(raw, "mass", path), tuple(proxies)))

    joints = []
    raw_joints = _req(doc, "joints", "$")
    if not isinstance(raw_joints, list):
        raise HandSpecError(["$.joints: expected an array"])
    for i, raw in enumerate(raw_joints):
        path = f"$.joints[{i}]"
        origin = _req(raw, "origin", path)
        lim = _req(raw, "limits", path)
        act = _req(raw, "actuator", path)
        inertia = _num(raw, "inertia", path) if isinstance(raw, dict) and "inertia" in raw else DEFAULT_LINK_INERTIA
        joints.append(
            JointSpec(
                name=_str(raw, "name", path),
                parent=_str(raw, "parent", path),
                child=_str(raw, "child", path),
                origin_xyz=_vec(_req(origin, "xyz", path + ".origin"), 3, path + ".origin.xyz"),
                origin_quat=_vec(_req(origin, "quat", path + ".origin"), 4, path + ".origin.quat"),
                axis=_vec(_req(raw, "axis", path), 3, path + ".axis"),
                limits=JointLimits(
                    _num(lim, "lo", path + ".limits"),
                    _num(lim, "hi", path + ".limits"),
                    _num(lim, "velocity", path + ".limits"),
                    _num(lim, "effort", path + ".limits"),
                ),
                actuator=ActuatorParams(
                    _num(act, "stiffness", path + ".actuator"),
                    _num(act, "damping", path + ".actuator"),
                    _num(act, "friction", path + ".actuator"),
                    _num(act, "armature", path + ".actuator"),
                ),
                inertia=inertia,
            )
        )

    plane = None
    if "palm_plane" in doc:
        raw = doc["palm_plane"]
        plane = PalmPlane(
            _vec(_req(raw, "center", "$.palm_plane"), 3, "$.palm_plane.center"),
            _vec(_req(raw, "half_extents", "$.palm_plane"), 2, "$.palm_plane.half_extents"),
        )
    poses = {}
    raw_poses = doc.get("poses", {})
    if not isinstance(raw_poses, dict):
        raise HandSpecError(["$.poses: expected an object"])
    for pname, values in raw_poses.items():
        if not isinstance(values, dict):
            raise HandSpecError([f"$.poses.{pname}: expected an object"])
        poses[pname] = {k: _num(values, k, f"$.poses.{pname}") for k in values}
    height = _num(doc, "palm_surface_height", "$") if "palm_surface_height" in doc else 0.0
    return HandModel(
        name=_str(doc, "name", "$"),
        links=tuple(links),
        joints=tuple(joints),
        palm_origin_joint=_str(doc, "palm_origin_joint", "$"),
        palm_surface_height=height,
        palm_plane=plane,
        poses=poses,
    )


def parse_hand_spec(text):
    """Parse and validate a hand-spec JSON document.

    Raises HandSpecSyntaxError (with line/column) on malformed JSON and
    HandSpecError listing diagnostics on any invariant violation.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise HandSpecSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise HandSpecError(["$: top level must be an object"])
    model = model_from_dict(doc)
    diags = validate_model(model)
    if diags:
        raise HandSpecError(diags)
    return model


def model_to_dict(model):
    doc = {
        "name": model.name,
        "palm_origin_joint": model.palm_origin_joint,
        "palm_surface_height": model.palm_surface_height,
    }
    if model.palm_plane is not None:
        doc["palm_plane"] = {
            "center": list(model.palm_plane.center),
            "half_extents": list(model.palm_plane.half_extents),
        }
    doc["links"] = [
        {
            "name": link.name,
            "mass": link.mass,
            "proxies": [{"center": list(p.center), "radius": p.radius} for p in link.proxies],
        }
        for link in model.links
    ]
    doc["joints"] = [
        {
            "name": j.name,
            "parent": j.parent,
            "child": j.child,
            "origin": {"xyz": list(j.origin_xyz), "quat": list(j.origin_quat)},
            "axis": list(j.axis),
            "limits": {"lo": j.limits.lo, "hi": j.limits.hi, "velocity": j.limits.velocity, "effort": j.limits.effort},
            "actuator": {
                "stiffness": j.actuator.stiffness,
                "damping": j.actuator.damping,
                "friction": j.actuator.friction,
                "armature": j.actuator.armature,
            },
            "inertia": j.inertia,
        }
        for j in model.joints
    ]
    if model.poses:
        doc["poses"] = {name: dict(values) for name, values in model.poses.items()}
    return doc


def serialize_hand_spec(model):
    return json.dumps(model_to_dict(model), indent=2) + "\n"


def builtin_models():
    """The four compared hands keyed isyhand, isyhand_flat, allegro_like, leap_like."""
    from handgrid.models import build_all

    return build_all()


def load_hand(name_or_path):
    """Resolve a builtin model name or read a hand-spec file."""
    models = builtin_models()
    if name_or_path in models:
        return models[name_or_path]
    with open(name_or_path, encoding="utf-8") as fh:
        return parse_hand_spec(fh.read())
