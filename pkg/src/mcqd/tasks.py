"""Evaluation tasks: genome -> (fitness, observation matrix).

The main task is a planar two-legged walker on procedurally generated,
mildly uneven terrain.  It is not a rigid-body simulation; it is a cheap
surrogate with the same interface properties a learned-descriptor search
interacts with: stochastic terrain per episode, explicit episode averaging,
a fixed observation-matrix shape, a reward mixing progress, stability, a
torque cost and a fall penalty, and named channels covering every hardcoded
descriptor (displacement, body angle, joint angles, torques, contacts).

All dynamics are vectorized over the episodes of one evaluation and fully
deterministic given (genome, seed sequence).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigurationError, Evaluation, StructuralError


@dataclass(frozen=True)
class TaskDefinition:
    """Static description of a task, shared by all evaluations of a run."""

    name: str
    genome_dim: int
    genome_bounds: tuple[float, float]
    n_obs_channels: int
    n_timepoints: int
    obs_averaging_window: int
    episodes_per_eval: int
    fitness_bounds: tuple[float, float]
    channel_names: tuple[str, ...]
    # per-channel normalization bounds used by hardcoded descriptors
    channel_fd_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def episode_steps(self) -> int:
        return self.n_timepoints * self.obs_averaging_window

    def channel_index(self, name: str) -> int:
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise ConfigurationError(f"task {self.name!r} has no channel {name!r}")


class Task:
    definition: TaskDefinition

    def evaluate(self, genome: np.ndarray, seed_seq: np.random.SeedSequence) -> Evaluation:
        raise NotImplementedError

    def evaluate_many(self, genomes, seed_seqs) -> list[Evaluation]:
        """Batch evaluation; must give the same results as one-by-one calls."""
        return [self.evaluate(g, ss) for g, ss in zip(genomes, seed_seqs)]


class SurrogateWalkerTask(Task):
    """Planar segmented walker with torque-controlled hips and knees.

    The body is a point mass with an orientation angle; each leg is a
    two-joint chain whose foot can contact the heightfield.  Contact feet
    support the body on a stiff spring-damper and convert backward foot speed
    into forward traction, so locomotion requires coordinated joint motion.
    With zero torque the walker just settles onto its springs and stays put.

    The controller is a one-hidden-layer tanh MLP whose flattened weights are
    the genome (14 inputs, 8 hidden units, 4 torque outputs -> 156 genes).
    """

    DT = 0.02
    GRAVITY = 9.81
    BODY_MASS = 1.0
    BODY_INERTIA = 0.5
    THIGH_LEN = 0.5
    SHANK_LEN = 0.5
    TORQUE_MAX = 1.0
    JOINT_GAIN = 12.0
    JOINT_DAMPING = 1.5
    JOINT_LIMIT = 1.2
    GROUND_SPRING = 200.0
    GROUND_DAMPING = 10.0
    TRACTION = 1.4
    TRACTION_MAX = 3.0
    DRAG = 0.4
    HIP_REACTION = 0.8
    UPRIGHT_SPRING = 8.0
    ANGLE_DAMPING = 1.5
    FALL_ANGLE = 1.3
    FALL_CLEARANCE = 0.25
    ARENA_LENGTH = 30.0
    SEGMENT_LEN = 2.0

    PROGRESS_REWARD = 2.5
    STABILITY_REWARD = 0.02
    TORQUE_COST = 0.008
    FALL_PENALTY = 100.0

    N_HIDDEN = 8
    N_INPUTS = 14
    N_TORQUES = 4

    CHANNELS = (
        "displacement", "body_angle",
        "hip1", "knee1", "hip2", "knee2",
        "torque_hip1", "torque_knee1", "torque_hip2", "torque_knee2",
        "torque_total", "contact1", "contact2", "airborne",
    )

    def __init__(self, episode_steps=300, obs_window=30, episodes_per_eval=5,
                 terrain_roughness=0.15):
        if episode_steps % obs_window != 0:
            raise ConfigurationError(
                f"episode_steps {episode_steps} not divisible by window {obs_window}"
            )
        self.terrain_roughness = float(terrain_roughness)
        genome_dim = (self.N_INPUTS + 1) * self.N_HIDDEN + (self.N_HIDDEN + 1) * self.N_TORQUES
        bounds = {
            "displacement": (-5.0, 25.0),
            "body_angle": (-self.FALL_ANGLE, self.FALL_ANGLE),
            "hip1": (-self.JOINT_LIMIT, self.JOINT_LIMIT),
            "knee1": (-self.JOINT_LIMIT, self.JOINT_LIMIT),
            "hip2": (-self.JOINT_LIMIT, self.JOINT_LIMIT),
            "knee2": (-self.JOINT_LIMIT, self.JOINT_LIMIT),
            "torque_hip1": (-1.0, 1.0), "torque_knee1": (-1.0, 1.0),
            "torque_hip2": (-1.0, 1.0), "torque_knee2": (-1.0, 1.0),
            "torque_total": (0.0, 4.0),
            "contact1": (0.0, 1.0), "contact2": (0.0, 1.0),
            "airborne": (0.0, 1.0),
        }
        self.definition = TaskDefinition(
            name="surrogate_walker",
            genome_dim=genome_dim,
            genome_bounds=(-1.0, 1.0),
            n_obs_channels=len(self.CHANNELS),
            n_timepoints=episode_steps // obs_window,
            obs_averaging_window=obs_window,
            episodes_per_eval=episodes_per_eval,
            fitness_bounds=(-120.0, 40.0),
            channel_names=self.CHANNELS,
            channel_fd_bounds=bounds,
        )

    def _unpack_controllers(self, genomes):
        """(batch, genome_dim) -> per-controller weight stacks."""
        n_in, n_h, n_out = self.N_INPUTS, self.N_HIDDEN, self.N_TORQUES
        b = genomes.shape[0]
        i = 0
        w1 = genomes[:, i:i + n_in * n_h].reshape(b, n_h, n_in); i += n_in * n_h
        b1 = genomes[:, i:i + n_h]; i += n_h
        w2 = genomes[:, i:i + n_h * n_out].reshape(b, n_out, n_h); i += n_h * n_out
        b2 = genomes[:, i:i + n_out]
        return w1, b1, w2, b2

    def _make_terrain(self, rng, n_episodes):
        """Per-episode piecewise-linear heightfields with bounded slope.

        The first knots (covering the start of the arena) are flat so every
        episode begins from the same stable stance.
        """
        x0 = -2.0 * self.SEGMENT_LEN
        n_knots = int((self.ARENA_LENGTH + 20.0) / self.SEGMENT_LEN) + 4
        knots_x = x0 + self.SEGMENT_LEN * np.arange(n_knots)
        steps = rng.uniform(-self.terrain_roughness, self.terrain_roughness,
                            size=(n_episodes, n_knots))
        steps[:, knots_x <= 0.0] = 0.0  # the stance at the origin starts level
        heights = np.clip(np.cumsum(steps, axis=1), -1.0, 1.0)
        return knots_x, heights

    @staticmethod
    def _terrain_height(knots_x, heights, x):
        """Heightfield lookup at x, elementwise over (batch, episodes)."""
        seg = (x - knots_x[0]) / (knots_x[1] - knots_x[0])
        idx = np.clip(seg.astype(int), 0, len(knots_x) - 2)
        frac = np.clip(seg - idx, 0.0, 1.0)
        lo = np.take_along_axis(heights, idx[..., np.newaxis], axis=-1)[..., 0]
        hi = np.take_along_axis(heights, idx[..., np.newaxis] + 1, axis=-1)[..., 0]
        return lo * (1.0 - frac) + hi * frac

    def evaluate(self, genome, seed_seq):
        return self.evaluate_many([genome], [seed_seq])[0]

    def evaluate_many(self, genomes, seed_seqs):
        """Run a batch of evaluations in lockstep.

        All dynamics are elementwise over (batch, episode) except the
        controller contractions, which are independent per batch entry, so
        the results are bit-identical however the batch is sliced (including
        one-by-one evaluation).
        """
        d = self.definition
        genomes = np.asarray(genomes, dtype=float)
        if genomes.ndim != 2 or genomes.shape[1] != d.genome_dim:
            raise StructuralError(f"genomes must be (batch, {d.genome_dim})")
        b = genomes.shape[0]
        e = d.episodes_per_eval
        w1, b1, w2, b2 = self._unpack_controllers(genomes)

        terrains = []
        knots_x = None
        for ss in seed_seqs:
            rng = np.random.Generator(np.random.PCG64(ss))
            knots_x, heights = self._make_terrain(rng, e)
            terrains.append(heights)
        terrain = np.stack(terrains)  # (batch, episodes, knots)

        # initial split stance, identical for every episode
        leg_drop = self.THIGH_LEN * math.cos(0.3) + self.SHANK_LEN * math.cos(0.3)
        x = np.zeros((b, e))
        y = np.full((b, e), leg_drop - 0.02)
        vx = np.zeros((b, e))
        vy = np.zeros((b, e))
        theta = np.zeros((b, e))
        omega = np.zeros((b, e))
        q = np.tile([0.3, 0.0, -0.3, 0.0], (b, e, 1))  # hip1, knee1, hip2, knee2
        qd = np.zeros((b, e, 4))
        alive = np.ones((b, e), dtype=bool)
        reward = np.zeros((b, e))
        contact = np.zeros((b, e, 2), dtype=bool)

        steps = d.episode_steps
        per_step = np.empty((steps, d.n_obs_channels, b, e))
        inputs = np.empty((b, e, self.N_INPUTS))

        for t in range(steps):
            inputs[..., 0] = theta
            inputs[..., 1] = 0.3 * omega
            inputs[..., 2] = 0.3 * vx
            inputs[..., 3] = 0.3 * vy
            inputs[..., 4:8] = q
            inputs[..., 8:12] = 0.1 * qd
            inputs[..., 12:14] = contact
            hidden = np.tanh(np.einsum("bei,bhi->beh", inputs, w1)
                             + b1[:, np.newaxis, :])
            torque = self.TORQUE_MAX * np.tanh(
                np.einsum("beh,boh->beo", hidden, w2) + b2[:, np.newaxis, :])
            torque = torque * alive[..., np.newaxis]

            qdd = self.JOINT_GAIN * torque - self.JOINT_DAMPING * qd
            qd_new = qd + self.DT * qdd
            q_unclipped = q + self.DT * qd_new
            q_new = np.clip(q_unclipped, -self.JOINT_LIMIT, self.JOINT_LIMIT)
            qd_new = np.where(q_new != q_unclipped, 0.0, qd_new)

            # forward kinematics and ground interaction per leg
            force_x = np.zeros((b, e))
            force_y = np.zeros((b, e))
            new_contact = np.zeros((b, e, 2), dtype=bool)
            for leg in range(2):
                hip, knee = q_new[..., 2 * leg], q_new[..., 2 * leg + 1]
                hip_d, knee_d = qd_new[..., 2 * leg], qd_new[..., 2 * leg + 1]
                a1 = theta + hip
                a2 = a1 + knee
                foot_x = x + self.THIGH_LEN * np.sin(a1) + self.SHANK_LEN * np.sin(a2)
                foot_y = y - self.THIGH_LEN * np.cos(a1) - self.SHANK_LEN * np.cos(a2)
                ground = self._terrain_height(knots_x, terrain, foot_x)
                pen = ground - foot_y
                touching = pen > 0.0
                new_contact[..., leg] = touching
                support = np.maximum(
                    self.GROUND_SPRING * pen - self.GROUND_DAMPING * vy, 0.0)
                force_y += np.where(touching, support, 0.0)
                foot_vx = (self.THIGH_LEN * np.cos(a1) * (omega + hip_d)
                           + self.SHANK_LEN * np.cos(a2) * (omega + hip_d + knee_d))
                traction = np.clip(-self.TRACTION * foot_vx,
                                   -self.TRACTION_MAX, self.TRACTION_MAX)
                force_x += np.where(touching, traction, 0.0)

            any_contact = new_contact.any(axis=-1)
            ax = (force_x - self.DRAG * vx) / self.BODY_MASS
            ay = force_y / self.BODY_MASS - self.GRAVITY
            vx_new = vx + self.DT * ax
            vy_new = vy + self.DT * ay
            x_new = x + self.DT * vx_new
            y_new = y + self.DT * vy_new

            body_torque = (-self.HIP_REACTION * (torque[..., 0] + torque[..., 2])
                           - self.UPRIGHT_SPRING * theta * any_contact
                           - self.ANGLE_DAMPING * omega)
            omega_new = omega + self.DT * body_torque / self.BODY_INERTIA
            theta_new = theta + self.DT * omega_new

            # frozen episodes keep their final state
            live = alive
            live4 = alive[..., np.newaxis]
            x = np.where(live, x_new, x)
            y = np.where(live, y_new, y)
            vx = np.where(live, vx_new, vx)
            vy = np.where(live, vy_new, vy)
            theta = np.where(live, theta_new, theta)
            omega = np.where(live, omega_new, omega)
            q = np.where(live4, q_new, q)
            qd = np.where(live4, qd_new, qd)
            contact = np.where(live[..., np.newaxis], new_contact, contact)

            torque_total = np.abs(torque).sum(axis=-1)
            stability = self.STABILITY_REWARD * (1.0 - np.abs(theta) / self.FALL_ANGLE)
            reward += np.where(alive,
                               self.PROGRESS_REWARD * self.DT * vx + stability
                               - self.TORQUE_COST * torque_total,
                               0.0)

            clearance = y - self._terrain_height(knots_x, terrain, x)
            fell = alive & ((np.abs(theta) > self.FALL_ANGLE)
                            | (clearance < self.FALL_CLEARANCE))
            reward -= self.FALL_PENALTY * fell
            alive &= ~fell

            airborne = alive & ~contact.any(axis=-1)
            per_step[t, 0] = x
            per_step[t, 1] = theta
            per_step[t, 2] = q[..., 0]
            per_step[t, 3] = q[..., 1]
            per_step[t, 4] = q[..., 2]
            per_step[t, 5] = q[..., 3]
            per_step[t, 6] = torque[..., 0]
            per_step[t, 7] = torque[..., 1]
            per_step[t, 8] = torque[..., 2]
            per_step[t, 9] = torque[..., 3]
            per_step[t, 10] = torque_total
            per_step[t, 11] = contact[..., 0]
            per_step[t, 12] = contact[..., 1]
            per_step[t, 13] = airborne

        window = d.obs_averaging_window
        t_pts = d.n_timepoints
        # (steps, channels, batch, episodes) -> per-eval episode means
        windows = per_step.reshape(t_pts, window, d.n_obs_channels, b, e).mean(axis=1)
        observations = windows.mean(axis=3)  # (timepoints, channels, batch)
        fitness = reward.mean(axis=1)
        return [
            Evaluation(fitness=float(fitness[i]),
                       observations=np.ascontiguousarray(observations[:, :, i].T),
                       episode_count=e)
            for i in range(b)
        ]


class RastriginToyTask(Task):
    """Two-gene analytic fixture: fitness is the negated Rastrigin value.

    Observation channels are (g1, g2, g1+g2, g1-g2) held constant over the
    timepoints, so descriptor and metric code can be checked against
    hand-computed correlation structure.
    """

    CHANNELS = ("g1", "g2", "g_sum", "g_diff")

    def __init__(self, n_timepoints=10):
        lim = 5.12
        self.definition = TaskDefinition(
            name="rastrigin_toy",
            genome_dim=2,
            genome_bounds=(-lim, lim),
            n_obs_channels=4,
            n_timepoints=n_timepoints,
            obs_averaging_window=1,
            episodes_per_eval=1,
            fitness_bounds=(-85.0, 0.0),
            channel_names=self.CHANNELS,
            channel_fd_bounds={
                "g1": (-lim, lim), "g2": (-lim, lim),
                "g_sum": (-2 * lim, 2 * lim), "g_diff": (-2 * lim, 2 * lim),
            },
        )

    def evaluate(self, genome, seed_seq):
        g = np.asarray(genome, dtype=float)
        if g.shape != (2,):
            raise StructuralError("toy task expects a 2-gene genome")
        value = 20.0 + np.sum(g ** 2 - 10.0 * np.cos(2.0 * np.pi * g))
        channels = np.array([g[0], g[1], g[0] + g[1], g[0] - g[1]])
        obs = np.repeat(channels[:, np.newaxis], self.definition.n_timepoints, axis=1)
        return Evaluation(fitness=float(-value), observations=obs, episode_count=1)


def make_task(name: str, params: dict | None = None) -> Task:
    """Instantiate a task by registry name with its namespaced parameters."""
    params = dict(params or {})
    if name == "surrogate_walker":
        return SurrogateWalkerTask(**params)
    if name == "rastrigin_toy":
        return RastriginToyTask(**params)
    raise ConfigurationError(f"unknown task {name!r}")
