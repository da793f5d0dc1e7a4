"""Environment adapters used by the trainer.

Both environments take normalized actions in [-1, 1]^act_dim and return
``(obs, reward, terminated, truncated, info)`` with ``info["consecutive_successes"]``.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from handgrid import task
from handgrid.kinematics import tree_for
from handgrid.physics import PhysicsConfig


def scale_action(a, lo, hi):
    """Map [-1, 1] to [lo, hi] affinely, clipping out-of-range inputs."""
    a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
    return lo + 0.5 * (a + 1.0) * (hi - lo)


class CubeEnv:
    """Single cube-reorientation episode stream for one hand and grid cell."""

    def __init__(self, model, task_cfg, physics_cfg=None, initial_orientation=None, goals=None):
        self.model = model
        self.task_cfg = task_cfg
        self.physics_cfg = physics_cfg or PhysicsConfig()
        self.initial_orientation = initial_orientation
        self.goals = goals
        tree = tree_for(model)
        self.lo, self.hi = tree.lo, tree.hi
        self.obs_dim = task.observation_size(model)
        self.act_dim = model.dof
        self.state = None

    def reset(self, seed=0):
        self.state, obs = task.reset(
            self.model, self.task_cfg, seed, goal_sequence=self.goals, initial_orientation=self.initial_orientation
        )
        return obs

    def step(self, action):
        targets = scale_action(action, self.lo, self.hi)
        return task.step(self.state, targets, self.model, self.physics_cfg, self.task_cfg)


@dataclasses.dataclass(frozen=True)
class ReachConfig:
    link_lengths: tuple = (0.5, 0.5)
    tracking_gain: float = 0.5
    reward_length_scale: float = 0.25
    episode_length: int = 16


class ReachEnv:
    """Planar 2-link arm that must bring its tip to a random goal; no cube, no contact.

    Actions are joint position targets in [-pi, pi]; each step the joints close
    ``tracking_gain`` of the remaining gap (a first-order servo). The reward
    ``exp(-distance / reward_length_scale)`` is positive, so returns are comparable
    as ratios.
    """

    obs_dim = 8
    act_dim = 2

    def __init__(self, cfg=None):
        self.cfg = cfg or ReachConfig()
        self.q = np.zeros(2)
        self.goal = np.zeros(2)
        self.t = 0

    def _tip(self, q):
        l1, l2 = self.cfg.link_lengths
        return np.array(
            [l1 * math.cos(q[0]) + l2 * math.cos(q[0] + q[1]), l1 * math.sin(q[0]) + l2 * math.sin(q[0] + q[1])]
        )

    def _obs(self):
        tip = self._tip(self.q)
        return np.concatenate([np.cos(self.q), np.sin(self.q), self.goal, self.goal - tip])

    def reset(self, seed=0):
        rng = np.random.default_rng(seed)
        self.q = rng.uniform(-math.pi, math.pi, 2)
        self.goal = self._tip(rng.uniform(-math.pi, math.pi, 2))
        self.t = 0
        return self._obs()

    def step(self, action):
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        self.q = self.q + self.cfg.tracking_gain * (math.pi * a - self.q)
        self.t += 1
        dist = float(np.linalg.norm(self._tip(self.q) - self.goal))
        reward = math.exp(-dist / self.cfg.reward_length_scale)
        truncated = self.t >= self.cfg.episode_length
        return self._obs(), reward, False, truncated, {"consecutive_successes": 0, "distance": dist}
