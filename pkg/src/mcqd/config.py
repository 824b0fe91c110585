"""Experiment configuration: strict YAML schema, validation, named presets.

Configs are plain YAML with named sections.  Unknown keys are hard errors
(silent hyper-parameter typos have ruined enough experiments), and
diagnostics carry the line number of the offending section.  Every preset of
the case matrix is available at full scale and at a desk scale that divides
the budgets by ten and shrinks each grid to 10x10.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .core import ConfigurationError

_REQUIRED = object()


class _LineLoader(yaml.SafeLoader):
    """SafeLoader that records the source line of every mapping."""


def _mapping_with_line(loader, node, deep=False):
    mapping = yaml.SafeLoader.construct_mapping(loader, node, deep=deep)
    mapping["__line__"] = node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping_with_line)


def _strip_lines(data):
    """Drop the line markers the loader injects into nested mappings."""
    if isinstance(data, dict):
        return {k: _strip_lines(v) for k, v in data.items() if k != "__line__"}
    if isinstance(data, list):
        return [_strip_lines(v) for v in data]
    return data


class _Section:
    """Strict view over one mapping: every key must be consumed."""

    def __init__(self, data, name, line=0):
        if not isinstance(data, dict):
            raise ConfigurationError(f"line {line}: section {name!r} must be a mapping")
        self._data = dict(data)
        self.name = name
        self.line = self._data.pop("__line__", line)

    def take(self, key, default=_REQUIRED):
        if key in self._data:
            return self._data.pop(key)
        if default is _REQUIRED:
            raise ConfigurationError(
                f"line {self.line}: missing key {key!r} in section {self.name!r}")
        return default

    def subsection(self, key, default=_REQUIRED):
        value = self.take(key, default)
        return _Section(value or {}, f"{self.name}.{key}", self.line)

    def finish(self):
        leftovers = [k for k in self._data if k != "__line__"]
        if leftovers:
            raise ConfigurationError(
                f"line {self.line}: unknown key(s) {leftovers} in section {self.name!r}")


@dataclass
class GridSpec:
    shape: tuple[int, ...]
    fd: str  # hardcoded | ae | ae_qt

    @property
    def capacity(self) -> int:
        cap = 1
        for s in self.shape:
            cap *= s
        return cap


@dataclass
class TaskSection:
    name: str = "surrogate_walker"
    params: dict = field(default_factory=dict)


@dataclass
class SearchSection:
    sharing: str = "shared"
    initialization_budget: int = 1000
    evaluation_budget: int = 10000
    batch_size: int = 100
    n_workers: int = 1
    mutation_probability: float = 0.1
    mutation_eta: float = 20.0
    curiosity_success: float = 1.0
    curiosity_failure: float = -0.5
    curiosity_floor: float = 0.01
    curiosity_initial: float = 1.0


@dataclass
class DiversitySection:
    kind: str = "none"  # none | outputs | cov | cmd
    weight: float = 1.0
    sign: int = -1


@dataclass
class TrainingSection:
    strategy: str = "online"  # none | pre_trained | online
    period: int = 5000
    epochs: int = 200
    learning_rate: float = 0.01
    batch_size: int = 1024
    validation_split: float = 0.25
    latent_dim: int = 2
    hidden: tuple[int, ...] = (16, 5)
    dropout: float = 0.2
    quantiles: int = 1000
    diversity: DiversitySection = field(default_factory=DiversitySection)


@dataclass
class ExperimentConfig:
    case: str
    seed: int = 0
    replicates: int = 1
    output_dir: str | None = None
    bin_budget: int = 2500
    grids: list[GridSpec] = field(default_factory=list)
    task: TaskSection = field(default_factory=TaskSection)
    search: SearchSection = field(default_factory=SearchSection)
    training: TrainingSection = field(default_factory=TrainingSection)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.load(text, Loader=_LineLoader)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark
            line = mark.line + 1 if mark else 0
            raise ConfigurationError(f"line {line}: invalid YAML: {exc.problem}")
        if not isinstance(data, dict):
            raise ConfigurationError("line 1: config must be a YAML mapping")
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_yaml(fh.read())

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        root = _Section(data, "config")
        case = str(root.take("case"))
        seed = int(root.take("seed", 0))
        replicates = int(root.take("replicates", 1))
        output_dir = root.take("output_dir", None)

        task_sec = root.subsection("task", {})
        task = TaskSection(
            name=str(task_sec.take("name", "surrogate_walker")),
            params=_strip_lines(dict(task_sec.take("params", {}) or {})),
        )
        task_sec.finish()

        cont_sec = root.subsection("containers")
        bin_budget = int(cont_sec.take("bin_budget"))
        grids = []
        raw_grids = cont_sec.take("grids")
        if not isinstance(raw_grids, list) or not raw_grids:
            raise ConfigurationError(
                f"line {cont_sec.line}: containers.grids must be a non-empty list")
        for g in raw_grids:
            gsec = _Section(g, "containers.grids[]", cont_sec.line)
            shape = tuple(int(s) for s in gsec.take("shape"))
            fd = str(gsec.take("fd"))
            count = int(gsec.take("count", 1))
            gsec.finish()
            grids.extend(GridSpec(shape=shape, fd=fd) for _ in range(count))
        cont_sec.finish()

        search_sec = root.subsection("search", {})
        mut = search_sec.subsection("mutation", {})
        cur = search_sec.subsection("curiosity", {})
        search = SearchSection(
            sharing=str(search_sec.take("sharing", "shared")),
            initialization_budget=int(search_sec.take("initialization_budget", 1000)),
            evaluation_budget=int(search_sec.take("evaluation_budget", 10000)),
            batch_size=int(search_sec.take("batch_size", 100)),
            n_workers=int(search_sec.take("n_workers", 1)),
            mutation_probability=float(mut.take("probability", 0.1)),
            mutation_eta=float(mut.take("eta", 20.0)),
            curiosity_success=float(cur.take("success_delta", 1.0)),
            curiosity_failure=float(cur.take("failure_delta", -0.5)),
            curiosity_floor=float(cur.take("floor", 0.01)),
            curiosity_initial=float(cur.take("initial", 1.0)),
        )
        mut.finish()
        cur.finish()
        search_sec.finish()

        train_sec = root.subsection("training", {})
        div = train_sec.subsection("diversity", {})
        training = TrainingSection(
            strategy=str(train_sec.take("strategy", "online")),
            period=int(train_sec.take("period", 5000)),
            epochs=int(train_sec.take("epochs", 200)),
            learning_rate=float(train_sec.take("learning_rate", 0.01)),
            batch_size=int(train_sec.take("batch_size", 1024)),
            validation_split=float(train_sec.take("validation_split", 0.25)),
            latent_dim=int(train_sec.take("latent_dim", 2)),
            hidden=tuple(int(h) for h in train_sec.take("hidden", (16, 5))),
            dropout=float(train_sec.take("dropout", 0.2)),
            quantiles=int(train_sec.take("quantiles", 1000)),
            diversity=DiversitySection(
                kind=str(div.take("kind", "none")),
                weight=float(div.take("weight", 1.0)),
                sign=int(div.take("sign", -1)),
            ),
        )
        div.finish()
        train_sec.finish()
        root.finish()

        config = cls(case=case, seed=seed, replicates=replicates,
                     output_dir=output_dir, bin_budget=bin_budget, grids=grids,
                     task=task, search=search, training=training)
        config.validate()
        return config

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "seed": self.seed,
            "replicates": self.replicates,
            "output_dir": self.output_dir,
            "containers": {
                "bin_budget": self.bin_budget,
                "grids": [{"shape": list(g.shape), "fd": g.fd} for g in self.grids],
            },
            "task": {"name": self.task.name, "params": dict(self.task.params)},
            "search": {
                "sharing": self.search.sharing,
                "initialization_budget": self.search.initialization_budget,
                "evaluation_budget": self.search.evaluation_budget,
                "batch_size": self.search.batch_size,
                "n_workers": self.search.n_workers,
                "mutation": {
                    "probability": self.search.mutation_probability,
                    "eta": self.search.mutation_eta,
                },
                "curiosity": {
                    "success_delta": self.search.curiosity_success,
                    "failure_delta": self.search.curiosity_failure,
                    "floor": self.search.curiosity_floor,
                    "initial": self.search.curiosity_initial,
                },
            },
            "training": {
                "strategy": self.training.strategy,
                "period": self.training.period,
                "epochs": self.training.epochs,
                "learning_rate": self.training.learning_rate,
                "batch_size": self.training.batch_size,
                "validation_split": self.training.validation_split,
                "latent_dim": self.training.latent_dim,
                "hidden": list(self.training.hidden),
                "dropout": self.training.dropout,
                "quantiles": self.training.quantiles,
                "diversity": {
                    "kind": self.training.diversity.kind,
                    "weight": self.training.diversity.weight,
                    "sign": self.training.diversity.sign,
                },
            },
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def hash(self) -> str:
        """Identity hash of the experiment; the evaluation worker count is an
        execution knob and deliberately excluded (results never depend on it)."""
        d = self.to_dict()
        d["search"].pop("n_workers")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        capacities = sum(g.capacity for g in self.grids)
        if capacities != self.bin_budget:
            raise ConfigurationError(
                f"grid capacities sum to {capacities}, bin budget is {self.bin_budget}")
        if self.search.sharing not in ("shared", "non_shared"):
            raise ConfigurationError(f"unknown sharing {self.search.sharing!r}")
        if self.training.strategy not in ("none", "pre_trained", "online"):
            raise ConfigurationError(f"unknown training strategy {self.training.strategy!r}")
        if self.training.diversity.kind not in ("none", "outputs", "cov", "cmd"):
            raise ConfigurationError(
                f"unknown diversity kind {self.training.diversity.kind!r}")
        if self.training.diversity.sign not in (1, -1):
            raise ConfigurationError("diversity sign must be +1 or -1")
        kinds = {g.fd for g in self.grids}
        unknown = kinds - {"hardcoded", "ae", "ae_qt"}
        if unknown:
            raise ConfigurationError(f"unknown fd type(s) {sorted(unknown)}")
        learned = kinds & {"ae", "ae_qt"}
        if learned and self.training.strategy == "none":
            raise ConfigurationError("learned descriptors need training strategy != none")
        if not learned and self.training.strategy != "none":
            raise ConfigurationError("hardcoded descriptors require training strategy none")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be >= 1")
        for name, value in (("initialization_budget", self.search.initialization_budget),
                            ("evaluation_budget", self.search.evaluation_budget),
                            ("batch_size", self.search.batch_size)):
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1")


# ---------------------------------------------------------------------------
# Presets: the standard case matrix
# ---------------------------------------------------------------------------

# name -> (fd type, sharing, training strategy, diversity kind/weight/sign,
#          grid layout).  Grid layout is a list of (count, shape).
# Diversity signs follow the combined-loss convention
# recons + sign*weight*term: the outputs/cmd cases and covmin maximize their
# diversity term (sign -1); covmax penalizes the covariance term (sign +1).
_PRESET_ROWS = {
    "hardcoded-4": ("hardcoded", "shared", "none", ("none", 1.0, -1), [(4, (25, 25))]),
    "hardcoded-4-ns": ("hardcoded", "non_shared", "none", ("none", 1.0, -1), [(4, (25, 25))]),
    "pt-reco-4": ("ae", "shared", "pre_trained", ("none", 1.0, -1), [(4, (25, 25))]),
    "reco-4": ("ae", "shared", "online", ("none", 1.0, -1), [(4, (25, 25))]),
    "qt-reco-4": ("ae_qt", "shared", "online", ("none", 1.0, -1), [(4, (25, 25))]),
    "qt-reco-4-ns": ("ae_qt", "non_shared", "online", ("none", 1.0, -1), [(4, (25, 25))]),
    "hardcoded-1": ("hardcoded", "shared", "none", ("none", 1.0, -1), [(1, (50, 50))]),
    "qt-reco-1": ("ae_qt", "shared", "online", ("none", 1.0, -1), [(1, (50, 50))]),
    "qt-reco-6-ns": ("ae_qt", "non_shared", "online", ("none", 1.0, -1),
                     [(5, (20, 20)), (1, (20, 25))]),
    "qt-reco-9-ns": ("ae_qt", "non_shared", "online", ("none", 1.0, -1),
                     [(8, (17, 16)), (1, (18, 18))]),
    "qt-reco-25-ns": ("ae_qt", "non_shared", "online", ("none", 1.0, -1),
                      [(25, (10, 10))]),
    "qt-outputs-4-ns": ("ae_qt", "non_shared", "online", ("outputs", 1.0, -1),
                        [(4, (25, 25))]),
    "qt-covmin-4-ns": ("ae_qt", "non_shared", "online", ("cov", 1.0, -1),
                       [(4, (25, 25))]),
    "qt-covmax-4-ns": ("ae_qt", "non_shared", "online", ("cov", 1.0, 1),
                       [(4, (25, 25))]),
    "qt-cmd-4-ns": ("ae_qt", "non_shared", "online", ("cmd", 1.0, -1),
                    [(4, (25, 25))]),
}

DESK_SCALE = 10  # budgets divided by this factor; desk grids are 10x10


def preset_names() -> list[str]:
    return list(_PRESET_ROWS)


def build_preset(name: str, desk: bool = False, seed: int = 0,
                 replicates: int = 1, output_dir: str | None = None) -> ExperimentConfig:
    """One row of the case matrix as a ready-to-run config.

    ``desk`` keeps every categorical field and divides the budgets by ten,
    with one 10x10 grid per container and a shorter episode; the desk
    learning rate drops to 0.01, which keeps Adam stable on the small dense
    topology.
    """
    if name not in _PRESET_ROWS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(_PRESET_ROWS)}")
    fd, sharing, strategy, (div_kind, div_weight, div_sign), layout = _PRESET_ROWS[name]

    if desk:
        grids = [GridSpec(shape=(10, 10), fd=fd)
                 for count, _ in layout for _ in range(count)]
        task_params = {"episode_steps": 150, "obs_window": 15, "episodes_per_eval": 5}
        init_budget, eval_budget = 1000, 10000
        batch, period = 100, 500
        lr, epochs = 0.01, 50
    else:
        grids = [GridSpec(shape=shape, fd=fd)
                 for count, shape in layout for _ in range(count)]
        task_params = {"episode_steps": 300, "obs_window": 30, "episodes_per_eval": 5}
        init_budget, eval_budget = 10000, 100000
        batch, period = 1000, 5000
        lr, epochs = 0.1, 200

    return ExperimentConfig(
        case=name,
        seed=seed,
        replicates=replicates,
        output_dir=output_dir,
        bin_budget=sum(g.capacity for g in grids),
        grids=grids,
        task=TaskSection(name="surrogate_walker", params=task_params),
        search=SearchSection(
            sharing=sharing,
            initialization_budget=init_budget,
            evaluation_budget=eval_budget,
            batch_size=batch,
        ),
        training=TrainingSection(
            strategy=strategy,
            period=period,
            epochs=epochs,
            learning_rate=lr,
            diversity=DiversitySection(kind=div_kind, weight=div_weight, sign=div_sign),
        ),
    )
