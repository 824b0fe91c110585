"""Descriptor extraction: observation matrix -> per-container FD vector.

Two kinds share one contract (pure function, output components in the closed
unit interval): hardcoded task descriptors built from channel reductions, and
learned descriptors read off an encoder's latent space, optionally pushed
through a quantile transform.  Extractors are immutable snapshots; the engine
swaps new ones in atomically when the ensemble is retrained.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, StructuralError

REDUCTION_KINDS = ("mean", "final", "mean_abs", "frac_above")


@dataclass(frozen=True)
class ChannelReduction:
    """One FD component: reduce a named channel over time, then normalize.

    ``bounds`` are the task-declared normalization interval; the reduced
    value is min-max mapped into [0, 1] and clamped.  ``threshold`` only
    applies to the ``frac_above`` kind.
    """

    channel: str
    kind: str
    bounds: tuple[float, float]
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in REDUCTION_KINDS:
            raise ConfigurationError(f"unknown reduction kind {self.kind!r}")
        lo, hi = self.bounds
        if not hi > lo:
            raise ConfigurationError(f"degenerate normalization bounds {self.bounds}")


@dataclass(frozen=True)
class HardcodedSpec:
    """A fixed FD definition: one reduction per grid dimension."""

    reductions: tuple[ChannelReduction, ...]

    @property
    def out_dim(self) -> int:
        return len(self.reductions)


class DescriptorExtractor:
    """Base contract: extract() maps one observation matrix to an FD vector."""

    out_dim: int

    def extract(self, observations: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def extract_many(self, observation_list) -> np.ndarray:
        """Vectorized-where-possible batch variant; returns (n, out_dim)."""
        return np.array([self.extract(obs) for obs in observation_list])


class HardcodedExtractor(DescriptorExtractor):
    def __init__(self, spec: HardcodedSpec, channel_index: dict[str, int]):
        self.spec = spec
        self.out_dim = spec.out_dim
        self._rows = []
        for red in spec.reductions:
            if red.channel not in channel_index:
                raise ConfigurationError(f"task has no channel named {red.channel!r}")
            self._rows.append(channel_index[red.channel])

    def extract(self, observations: np.ndarray) -> np.ndarray:
        obs = np.asarray(observations, dtype=float)
        fd = np.empty(self.out_dim)
        for k, (red, row) in enumerate(zip(self.spec.reductions, self._rows)):
            series = obs[row]
            if red.kind == "mean":
                value = series.mean()
            elif red.kind == "final":
                value = series[-1]
            elif red.kind == "mean_abs":
                value = np.abs(series).mean()
            else:  # frac_above
                value = np.mean(series > red.threshold)
            lo, hi = red.bounds
            fd[k] = np.clip((value - lo) / (hi - lo), 0.0, 1.0)
        return fd


class LearnedExtractor(DescriptorExtractor):
    """Encoder latent of one ensemble module, with optional quantile transform.

    Observations are scaled exactly as during training, flattened
    channel-major, and encoded with dropout disabled; without a transform the
    raw sigmoid latents land in the open (0, 1).
    """

    def __init__(self, ensemble, module_index: int, scaler, quantile_transform=None):
        self.ensemble = ensemble
        self.module_index = int(module_index)
        self.scaler = scaler
        self.quantile_transform = quantile_transform
        self.out_dim = ensemble.latent_dim

    def extract(self, observations: np.ndarray) -> np.ndarray:
        return self.extract_many([observations])[0]

    def extract_many(self, observation_list) -> np.ndarray:
        obs = np.asarray(observation_list, dtype=float)
        if obs.ndim != 3:
            raise StructuralError("expected a sequence of (channels, timepoints)")
        flat = self.scaler.transform(obs)
        z = self.ensemble.encode(flat, self.module_index)
        if self.quantile_transform is not None:
            return self.quantile_transform.apply(z)
        return z


# Default hardcoded FD pairs for the locomotion surrogate, mirroring the
# usual hand-designed characterization: how far and how upright the walker
# went, how hard it worked and how much it jumped, and the two legs' joint
# postures.
_WALKER_PAIRS = (
    (("displacement", "final"), ("body_angle", "mean")),
    (("torque_total", "mean_abs"), ("airborne", "mean")),
    (("hip1", "mean"), ("knee1", "mean")),
    (("hip2", "mean"), ("knee2", "mean")),
)


def fd_pairs_default(task) -> list[HardcodedSpec]:
    """The four 2-D hardcoded FD specs for a walker-style task."""
    specs = []
    catalog = task.definition.channel_fd_bounds
    for pair in _WALKER_PAIRS:
        reductions = []
        for channel, kind in pair:
            if channel not in catalog:
                raise ConfigurationError(
                    f"task {task.definition.name!r} lacks channel {channel!r} "
                    "needed by the default FD pairs"
                )
            reductions.append(ChannelReduction(channel, kind, catalog[channel]))
        specs.append(HardcodedSpec(tuple(reductions)))
    return specs
