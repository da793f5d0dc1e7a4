"""In-hand cube reorientation: reset/step, observations, reward and success counting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from handgrid import quat
from handgrid.kinematics import palm_frame, tree_for
from handgrid.physics import CubeState, initial_state, step_sim

CELL_BOUND = 1.0
ANGVEL_OBS_SCALE = 0.2


class GoalSequenceExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardCoefficients:
    rotation_scale: float = 1.0
    rotation_eps: float = 0.1
    distance_scale: float = -10.0
    action_penalty: float = -0.0002
    reach_bonus: float = 250.0
    fall_penalty: float = 0.0


@dataclass(frozen=True)
class TaskConfig:
    cell_xy: tuple = (0.0, 0.0)
    cube_edge: float = 0.065
    cube_mass: float = 0.095
    z_offset: float = 0.005
    success_tolerance: float = 0.1
    fall_distance: float = 0.24
    episode_length: int = 600
    reward: RewardCoefficients = field(default_factory=RewardCoefficients)

    def __post_init__(self):
        if not self.success_tolerance > 0:
            raise ValueError("success_tolerance must be > 0")
        if not self.episode_length > 0:
            raise ValueError("episode_length must be > 0")
        if not self.cube_edge > 0:
            raise ValueError("cube_edge must be > 0")

    @property
    def half_diagonal(self):
        return self.cube_edge * math.sqrt(3.0) / 2.0

    @property
    def cube_height(self):
        """Initial and target cube-center height above the palm surface."""
        return self.half_diagonal + self.z_offset


@dataclass(frozen=True)
class GoalState:
    target_orientation: np.ndarray
    target_position: np.ndarray


@dataclass(frozen=True)
class RewardTerms:
    rotation_term: float
    distance_term: float
    action_term: float
    bonus_term: float
    fall_term: float

    @property
    def total(self):
        return self.rotation_term + self.distance_term + self.action_term + self.bonus_term + self.fall_term


@dataclass
class EpisodeState:
    sim: object
    goal: GoalState
    rng: np.random.Generator
    consecutive_successes: int = 0
    steps_elapsed: int = 0
    prev_action: np.ndarray | None = None
    goal_queue: list | None = None
    done: bool = False


def goal_from_angles(theta_y, theta_x):
    """Rotation about y by ``theta_y`` followed by a rotation about x by ``theta_x``."""
    qy = quat.from_axis_angle(np.array([0.0, 1.0, 0.0]), theta_y)
    qx = quat.from_axis_angle(np.array([1.0, 0.0, 0.0]), theta_x)
    return quat.normalize(quat.mul(qx, qy))


def sample_goal_orientation(rng):
    theta_y = rng.uniform(-math.pi, math.pi)
    theta_x = rng.uniform(-math.pi, math.pi)
    return goal_from_angles(theta_y, theta_x)


def rot_dist(qa, qb):
    """Geodesic angle between two unit quaternions (sign-invariant), in [0, pi]."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    for q in (qa, qb):
        if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > 1e-6):
            raise ValueError("rot_dist expects unit quaternions")
    # chord form: accurate near 0 and pi, exactly symmetric in its arguments
    s = np.where(np.sum(qa * qb, axis=-1, keepdims=True) < 0, -1.0, 1.0)
    out = 4.0 * np.arctan2(np.linalg.norm(qa - s * qb, axis=-1), np.linalg.norm(qa + s * qb, axis=-1))
    return float(out) if out.ndim == 0 else out


def _next_goal(state):
    if state.goal_queue is None:
        return sample_goal_orientation(state.rng)
    if not state.goal_queue:
        raise GoalSequenceExhausted("fixed goal sequence exhausted; raise goals_per_episode")
    return np.asarray(state.goal_queue.pop(0), dtype=float)


def reset(model, config, seed, goal_sequence=None, initial_orientation=None):
    """Start an episode at the configured grid cell.

    Joints start at the model's ``init_flat`` pose; the cube starts above its
    target position. Orientations come from the seeded rng, or from
    ``initial_orientation``/``goal_sequence`` in evaluation mode.
    """
    x, y = (float(v) for v in config.cell_xy)
    if abs(x) > CELL_BOUND or abs(y) > CELL_BOUND:
        raise ValueError(f"grid cell {config.cell_xy} outside +/-{CELL_BOUND} m")
    rng = np.random.default_rng(seed)
    q0 = np.asarray(model.pose("init_flat"), dtype=float)
    palm = palm_frame(model, q0)
    target = palm.apply(np.array([x, y, config.cube_height]))
    if initial_orientation is None:
        initial_orientation = sample_goal_orientation(rng)
    cube = CubeState.uniform(config.cube_edge, config.cube_mass, target, initial_orientation)
    state = EpisodeState(
        sim=initial_state(model, cube, q0),
        goal=None,
        rng=rng,
        prev_action=q0.copy(),
        goal_queue=None if goal_sequence is None else [np.asarray(g, dtype=float) for g in goal_sequence],
    )
    state.goal = GoalState(_next_goal(state), target)
    return state, observe(state, state.prev_action, model)


def observe(state, prev_action, model):
    """Flat observation of length ``4 * dof + 21``.

    Order: joint positions scaled to [-1, 1] by their limits, joint velocities
    over velocity limits, actuator efforts over effort limits, cube position
    relative to its target, cube orientation, cube linear velocity, scaled cube
    angular velocity, goal orientation, cube-to-goal rotation, previous joint
    targets scaled like the positions.
    """
    tree = tree_for(model)
    sim = state.sim
    span = tree.hi - tree.lo
    scaled_q = 2.0 * (sim.q - tree.lo) / span - 1.0
    effort = np.zeros(tree.dof) if sim.effort is None else sim.effort
    cube = sim.cube
    goal = state.goal.target_orientation
    rel = quat.mul(cube.orientation, quat.conj(goal))
    return np.concatenate(
        [
            scaled_q,
            sim.qdot / tree.velocity_limit,
            effort / tree.effort_limit,
            cube.position - state.goal.target_position,
            cube.orientation,
            cube.linear_velocity,
            ANGVEL_OBS_SCALE * cube.angular_velocity,
            goal,
            rel,
            2.0 * (np.asarray(prev_action, dtype=float) - tree.lo) / span - 1.0,
        ]
    )


def observation_size(model):
    return 4 * model.dof + 21


def _flags(sim, goal, config):
    dist = float(np.linalg.norm(sim.cube.position - goal.target_position))
    angle = rot_dist(sim.cube.orientation, goal.target_orientation)
    fell = dist > config.fall_distance
    return angle, dist, fell, (angle < config.success_tolerance) and not fell


def compute_reward(prev, next_, action, goal, config):
    """Shaped reward for the transition ``prev -> next_`` and its separate terms."""
    c = config.reward
    angle, dist, fell, success = _flags(next_, goal, config)
    a = np.asarray(action, dtype=float)
    terms = RewardTerms(
        rotation_term=c.rotation_scale / (angle + c.rotation_eps),
        distance_term=c.distance_scale * dist,
        action_term=c.action_penalty * float(a @ a),
        bonus_term=c.reach_bonus if success else 0.0,
        fall_term=c.fall_penalty if fell else 0.0,
    )
    return terms.total, terms


def check_success_and_resample(state, config):
    """Count a success and move to the next goal orientation when within tolerance."""
    cube = state.sim.cube
    if rot_dist(cube.orientation, state.goal.target_orientation) < config.success_tolerance:
        state.consecutive_successes += 1
        state.goal = GoalState(_next_goal(state), state.goal.target_position)
    return state


def step(state, action, model, physics_cfg, task_cfg):
    """One control step. Returns (observation, reward, terminated, truncated, info)."""
    tree = tree_for(model)
    targets = np.clip(tree.check(action), tree.lo, tree.hi)
    prev = state.sim
    state.sim = step_sim(model, prev, targets, physics_cfg)
    state.steps_elapsed += 1
    reward, terms = compute_reward(prev, state.sim, targets, state.goal, task_cfg)
    _, _, fell, success = _flags(state.sim, state.goal, task_cfg)
    if success:
        check_success_and_resample(state, task_cfg)
    state.prev_action = targets
    terminated = fell
    truncated = (not terminated) and state.steps_elapsed >= task_cfg.episode_length
    state.done = terminated or truncated
    info = {
        "terms": terms,
        "consecutive_successes": state.consecutive_successes,
        "success": success,
        "fell": fell,
    }
    return observe(state, targets, model), reward, terminated, truncated, info


# -- goal sequence files -------------------------------------------------------


def write_goal_csv(path, goals):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "w", "x", "y", "z"])
        for i, g in enumerate(np.asarray(goals, dtype=float)):
            w.writerow([i] + [repr(float(v)) for v in g])


def read_goal_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["index"]))
    return np.array([[float(r[k]) for k in ("w", "x", "y", "z")] for r in rows])
