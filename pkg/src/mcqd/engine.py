"""The multi-container search loop.

One engine owns a set of grid containers (each with its own descriptor
space), the depot of everything ever accepted, and optionally the
auto-encoder ensemble that defines the learned descriptor spaces.  The loop
is the usual illumination cycle: select a parent by curiosity roulette,
mutate it with bounded polynomial mutation, evaluate, and attempt insertion
either into every container (shared strategy) or into a rotating focus
container (non-shared strategy).

Determinism contract: every random decision comes from a named substream of
the master seed (init, selection, mutation, per-evaluation episodes, model
training), selection and mutation for a whole batch happen before any
evaluation, and insertions are committed in iteration order.  Evaluations
are pure functions of (genome, substream), so the thread count used to run
them cannot change any result.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import (
    ModularAutoEncoderEnsemble,
    ObservationScaler,
    TrainingConfig,
    train_ensemble,
)
from .core import (
    AddOutcome,
    ConfigurationError,
    DepotContainer,
    EmptyContainerError,
    GridContainer,
    Solution,
)
from .descriptors import HardcodedExtractor, HardcodedSpec, LearnedExtractor
from .postprocess import QuantileTransform
from .tasks import Task

# Named RNG substream keys under the master seed.
STREAM_INIT = 0
STREAM_SELECTION = 1
STREAM_MUTATION = 2
STREAM_EPISODES = 3
STREAM_TRAINING = 4


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a named substream of the master seed."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


def episode_seed_sequence(master_seed: int, eval_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(STREAM_EPISODES, eval_index))


class SharingStrategy(str, enum.Enum):
    SHARED = "shared"
    NON_SHARED = "non_shared"


class TrainingStrategy(str, enum.Enum):
    NONE = "none"
    PRE_TRAINED = "pre_trained"
    ONLINE = "online"


FD_TYPES = ("hardcoded", "ae", "ae_qt")


@dataclass
class MutationConfig:
    probability: float = 0.1
    eta: float = 20.0
    bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigurationError("mutation probability must be in [0, 1]")
        if self.eta <= 0:
            raise ConfigurationError("eta must be positive")


@dataclass
class CuriosityConfig:
    """Per-parent score bookkeeping: reward on any accepted offspring,
    penalty otherwise, clamped at a strictly positive floor so every elite
    keeps nonzero selection probability."""

    success_delta: float = 1.0
    failure_delta: float = -0.5
    floor: float = 0.01
    initial: float = 1.0


@dataclass
class ContainerSpec:
    shape: tuple[int, ...]
    fd_type: str
    hardcoded: HardcodedSpec | None = None

    def __post_init__(self):
        if self.fd_type not in FD_TYPES:
            raise ConfigurationError(f"unknown fd type {self.fd_type!r}")


def mutate_polynomial(genome: np.ndarray, cfg: MutationConfig, rng) -> np.ndarray:
    """Bounded polynomial mutation with crowding index eta.

    Each gene mutates independently with probability ``cfg.probability``;
    the perturbation follows the bounded polynomial distribution and the
    result is clipped back into bounds.  RNG consumption is constant (two
    draws per gene) so downstream draws do not depend on which genes fired.
    """
    lo, hi = cfg.bounds
    x = np.asarray(genome, dtype=float)
    span = hi - lo
    do_mut = rng.random(x.shape) < cfg.probability
    u = rng.random(x.shape)
    delta_1 = (x - lo) / span
    delta_2 = (hi - x) / span
    mut_pow = 1.0 / (cfg.eta + 1.0)

    low_side = u < 0.5
    val_low = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - delta_1) ** (cfg.eta + 1.0)
    dq_low = val_low ** mut_pow - 1.0
    val_high = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - delta_2) ** (cfg.eta + 1.0)
    dq_high = 1.0 - val_high ** mut_pow
    delta_q = np.where(low_side, dq_low, dq_high)

    mutated = np.clip(x + delta_q * span, lo, hi)
    return np.where(do_mut, mutated, x)


def select_curiosity_roulette(container: GridContainer, rng,
                              floor: float = 0.01) -> Solution:
    """Pick a stored solution with probability proportional to its curiosity."""
    solutions = container.solutions()
    if not solutions:
        raise EmptyContainerError(
            f"container {container.container_id} holds no solution")
    scores = np.array([max(s.curiosity, floor) for s in solutions])
    cumulative = np.cumsum(scores)
    draw = rng.random() * cumulative[-1]
    idx = int(np.searchsorted(cumulative, draw, side="right"))
    return solutions[min(idx, len(solutions) - 1)]


@dataclass
class BatchStats:
    batch_index: int
    planned: int
    executed: int
    adds: int = 0
    evictions: int = 0
    rejections: int = 0
    accepted_solutions: int = 0
    partial: bool = False

    @property
    def attempts(self) -> int:
        return self.adds + self.evictions + self.rejections


@dataclass
class ContainerReindex:
    container_id: int
    retained: int
    dropped: int


@dataclass
class RetrainReport:
    fired: bool
    diverged: bool = False
    message: str = ""
    final_train_loss: float = float("nan")
    final_val_loss: float = float("nan")
    reindex: list[ContainerReindex] = field(default_factory=list)


class Engine:
    """Search state plus the operations that advance it."""

    def __init__(self, task: Task, container_specs: list[ContainerSpec],
                 sharing: SharingStrategy = SharingStrategy.SHARED,
                 training_strategy: TrainingStrategy = TrainingStrategy.ONLINE,
                 mutation: MutationConfig | None = None,
                 curiosity: CuriosityConfig | None = None,
                 training: TrainingConfig | None = None,
                 init_budget: int = 1000,
                 eval_budget: int = 10000,
                 training_period: int = 5000,
                 n_quantiles: int = 1000,
                 ae_hidden: tuple[int, ...] = (16, 5),
                 ae_dropout: float = 0.2,
                 latent_dim: int = 2,
                 diversity_kind: str = "none",
                 diversity_weight: float = 1.0,
                 diversity_sign: int = -1,
                 seed: int = 0,
                 n_workers: int = 1):
        self.task = task
        self.sharing = SharingStrategy(sharing)
        self.training_strategy = TrainingStrategy(training_strategy)
        lo, hi = task.definition.genome_bounds
        self.mutation = mutation or MutationConfig(bounds=(lo, hi))
        self.curiosity = curiosity or CuriosityConfig()
        self.training = training or TrainingConfig()
        self.init_budget = int(init_budget)
        self.eval_budget = int(eval_budget)
        self.training_period = int(training_period)
        self.n_quantiles = int(n_quantiles)
        self.seed = int(seed)
        self.n_workers = int(n_workers)

        learned = [s for s in container_specs if s.fd_type != "hardcoded"]
        if learned and self.training_strategy is TrainingStrategy.NONE:
            raise ConfigurationError("learned descriptors require a training strategy")
        if not learned and self.training_strategy is not TrainingStrategy.NONE:
            raise ConfigurationError("hardcoded-only experiments must use training: none")
        if any(len(spec.shape) != latent_dim for spec in learned):
            raise ConfigurationError(
                "learned container grids must match the latent dimensionality")
        self._specs = list(container_specs)
        self.containers: list[GridContainer] = []
        self.module_index: dict[int, int] = {}  # container id -> ensemble module
        next_module = 0
        for cid, spec in enumerate(container_specs):
            container = GridContainer(cid, spec.shape)
            if spec.fd_type == "hardcoded":
                if spec.hardcoded is None:
                    raise ConfigurationError(
                        f"container {cid} is hardcoded but has no FD spec")
                if spec.hardcoded.out_dim != len(spec.shape):
                    raise ConfigurationError(
                        f"container {cid}: FD spec has {spec.hardcoded.out_dim} "
                        f"dims, grid has {len(spec.shape)}")
                container.extractor = HardcodedExtractor(
                    spec.hardcoded,
                    {n: task.definition.channel_index(n)
                     for n in task.definition.channel_names},
                )
            else:
                self.module_index[cid] = next_module
                next_module += 1
            self.containers.append(container)

        self.depot = DepotContainer()
        self.ensemble: ModularAutoEncoderEnsemble | None = None
        self.scaler: ObservationScaler | None = None
        self.quantile_transforms: dict[int, QuantileTransform] = {}
        self._ae_build = dict(hidden=tuple(ae_hidden), dropout=ae_dropout,
                              latent_dim=latent_dim,
                              diversity_kind=diversity_kind,
                              diversity_weight=diversity_weight,
                              diversity_sign=diversity_sign)

        self._rng_selection = substream(self.seed, STREAM_SELECTION)
        self._rng_mutation = substream(self.seed, STREAM_MUTATION)
        self.eval_budget_used = 0
        self.total_evaluations = 0
        self.next_solution_id = 0
        self._next_eval_index = 0
        self.focus_index = 0
        self.retrain_count = 0
        self.per_container_evals = [0] * len(self.containers)
        self.initialized = False

    # -- helpers ----------------------------------------------------------

    @property
    def learned_container_ids(self) -> list[int]:
        return sorted(self.module_index)

    def _evaluate_genomes(self, genomes):
        """Charge evaluation indices and run the task, possibly threaded.

        The batch is split into contiguous worker chunks and results are
        collected by index; evaluations are pure functions of (genome,
        substream), so the worker count cannot change any outcome.
        """
        base = self._next_eval_index
        self._next_eval_index += len(genomes)
        self.total_evaluations += len(genomes)
        seeds = [episode_seed_sequence(self.seed, base + i)
                 for i in range(len(genomes))]
        if self.n_workers <= 1 or len(genomes) < 2:
            return self.task.evaluate_many(genomes, seeds)
        bounds = np.linspace(0, len(genomes), self.n_workers + 1).astype(int)
        chunks = [(genomes[lo:hi], seeds[lo:hi])
                  for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        with ThreadPoolExecutor(max_workers=self.n_workers) as pool:
            parts = list(pool.map(lambda c: self.task.evaluate_many(*c), chunks))
        return [ev for part in parts for ev in part]

    def _new_solution(self, genome, evaluation) -> Solution:
        sol = Solution(id=self.next_solution_id, genome=genome,
                       evaluation=evaluation, curiosity=self.curiosity.initial)
        self.next_solution_id += 1
        return sol

    def _attempt(self, container: GridContainer, solution: Solution,
                 stats: BatchStats | None = None) -> bool:
        fd = container.extractor.extract(solution.evaluation.observations)
        solution.descriptors[container.container_id] = fd
        outcome, _ = container.add(solution)
        if stats is not None:
            if outcome is AddOutcome.ADDED_TO_EMPTY:
                stats.adds += 1
            elif outcome is AddOutcome.REPLACED_WEAKER:
                stats.evictions += 1
            else:
                stats.rejections += 1
        return outcome.accepted

    def _fit_and_train(self, corpus):
        """Fit scaling and train a candidate ensemble on the corpus.

        A fresh Xavier-initialized ensemble is built on the first pass; later
        passes warm-start from the current parameters.  Returns (candidate,
        scaler, scaled inputs, train report); nothing is published here.
        """
        rng = substream(self.seed, STREAM_TRAINING, self.retrain_count)
        scaler = ObservationScaler.fit(corpus)
        inputs = scaler.transform(corpus)
        if self.ensemble is None:
            candidate = ModularAutoEncoderEnsemble.build(
                input_dim=inputs.shape[1],
                n_modules=len(self.module_index),
                rng=rng,
                **self._ae_build,
            )
        else:
            candidate = self.ensemble.clone()
        report = train_ensemble(candidate, inputs, self.training, rng)
        return candidate, scaler, inputs, report

    def _publish_models(self, ensemble, scaler, inputs) -> None:
        self.ensemble = ensemble
        self.scaler = scaler
        self.quantile_transforms = {}
        for cid in self.learned_container_ids:
            spec = self._specs[cid]
            qt = None
            if spec.fd_type == "ae_qt":
                latents = ensemble.encode(inputs, self.module_index[cid])
                qt = QuantileTransform.fit(
                    latents, min(self.n_quantiles, latents.shape[0]))
                self.quantile_transforms[cid] = qt
            self.containers[cid].extractor = LearnedExtractor(
                ensemble, self.module_index[cid], scaler, qt)

    # -- lifecycle --------------------------------------------------------

    def initialize(self) -> None:
        """Draw and evaluate the initial collection, train the initial
        descriptor models on it, then seed every container from it."""
        if self.initialized:
            raise RuntimeError("engine already initialized")
        lo, hi = self.task.definition.genome_bounds
        rng = substream(self.seed, STREAM_INIT)
        genomes = rng.uniform(lo, hi,
                              (self.init_budget, self.task.definition.genome_dim))
        evaluations = self._evaluate_genomes(list(genomes))
        if self.module_index:
            corpus = np.stack([ev.observations for ev in evaluations])
            candidate, scaler, inputs, report = self._fit_and_train(corpus)
            if report.diverged:
                raise RuntimeError(
                    f"initial descriptor training diverged: {report.message}")
            self.retrain_count += 1
            self._publish_models(candidate, scaler, inputs)
        for genome, evaluation in zip(genomes, evaluations):
            sol = self._new_solution(genome, evaluation)
            accepted = False
            for container in self.containers:
                accepted |= self._attempt(container, sol)
            if accepted:
                self.depot.record(sol)
        self.depot.reset_training_counter()
        self.initialized = True

    def _plan_iterations(self, n: int) -> list[int]:
        """Container index for each of the n iterations of a batch."""
        m = len(self.containers)
        if self.sharing is SharingStrategy.SHARED:
            return [int(self._rng_selection.integers(m)) for _ in range(n)]
        base, rem = divmod(n, m)
        plan = []
        for c in range(m):
            size = base + (1 if c < rem else 0)
            plan.extend([(self.focus_index + c) % m] * size)
        self.focus_index = (self.focus_index + rem) % m
        return plan

    def run_batch(self, batch_size: int, batch_index: int = 0) -> BatchStats:
        """One batch of select -> mutate -> evaluate -> insert iterations.

        Selection and mutation are planned up front against the batch-start
        container state; evaluations may run on a thread pool; insertions,
        curiosity updates and depot records are committed in iteration order.
        A batch that would overrun the evaluation budget is truncated and
        flagged partial.
        """
        if not self.initialized:
            raise RuntimeError("initialize() must run before run_batch()")
        remaining = self.eval_budget - self.eval_budget_used
        n = min(batch_size, remaining)
        stats = BatchStats(batch_index=batch_index, planned=batch_size,
                           executed=n, partial=n < batch_size)
        if n <= 0:
            return stats

        lo, hi = self.task.definition.genome_bounds
        plan = self._plan_iterations(n)
        for cidx in plan:
            self.per_container_evals[cidx] += 1
        parents: list[Solution | None] = []
        children = []
        for cidx in plan:
            container = self.containers[cidx]
            if container.occupancy > 0:
                parent = select_curiosity_roulette(container, self._rng_selection,
                                                   self.curiosity.floor)
                base = parent.genome
            else:
                parent = None
                base = self._rng_selection.uniform(
                    lo, hi, self.task.definition.genome_dim)
            parents.append(parent)
            children.append(mutate_polynomial(base, self.mutation,
                                              self._rng_mutation))

        evaluations = self._evaluate_genomes(children)
        self.eval_budget_used += n

        for cidx, parent, genome, evaluation in zip(plan, parents, children,
                                                    evaluations):
            sol = self._new_solution(genome, evaluation)
            if self.sharing is SharingStrategy.SHARED:
                attempted = self.containers
            else:
                attempted = [self.containers[cidx]]
            accepted = False
            for container in attempted:
                accepted |= self._attempt(container, sol, stats)
            if parent is not None:
                delta = (self.curiosity.success_delta if accepted
                         else self.curiosity.failure_delta)
                parent.curiosity = max(parent.curiosity + delta,
                                       self.curiosity.floor)
            if accepted:
                self.depot.record(sol)
                stats.accepted_solutions += 1
        return stats

    def maybe_retrain(self) -> RetrainReport | None:
        """Retrain descriptors when the depot grew enough; None means no-op.

        The pre-trained strategy never retrains after initialization.  On
        training divergence the previous models are kept, the report is
        flagged, and the depot counter is left untouched.
        """
        if self.training_strategy is not TrainingStrategy.ONLINE:
            return None
        if self.depot.added_since_last_training < self.training_period:
            return None
        corpus = self.depot.observation_corpus()
        candidate, scaler, inputs, report = self._fit_and_train(corpus)
        if report.diverged:
            return RetrainReport(fired=True, diverged=True, message=report.message)
        self.retrain_count += 1
        self._publish_models(candidate, scaler, inputs)
        reindex = self.reindex_all()
        self.depot.reset_training_counter()
        return RetrainReport(
            fired=True,
            final_train_loss=report.train_losses[-1] if report.train_losses else float("nan"),
            final_val_loss=report.val_losses[-1] if report.val_losses else float("nan"),
            reindex=reindex,
        )

    def reindex_all(self) -> list[ContainerReindex]:
        """Recompute learned FDs and rebuild each learned container.

        Elites are drained, their descriptors recomputed under the freshly
        published extractor, and re-inserted in descending fitness order
        (ties by insertion id) so collisions deterministically keep the best
        solution.  Dropped elites stay in the depot.
        """
        reports = []
        for cid in self.learned_container_ids:
            container = self.containers[cid]
            elites = container.solutions()
            container.cells.clear()
            order = sorted(elites, key=lambda s: (-s.fitness, s.id))
            for sol in order:
                self._attempt(container, sol)
            retained = container.occupancy
            reports.append(ContainerReindex(container_id=cid, retained=retained,
                                            dropped=len(elites) - retained))
        return reports
