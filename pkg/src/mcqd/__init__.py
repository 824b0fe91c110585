"""mcqd: multi-container quality-diversity search with learned descriptors.

Several grid archives are illuminated at once, each with its own feature
descriptor space; the learned spaces are the latent codes of a modular
auto-encoder ensemble trained online on everything the search has accepted,
optionally uniformized with a quantile transform.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    AddOutcome,
    ConfigurationError,
    DepotContainer,
    EmptyContainerError,
    Evaluation,
    GridContainer,
    InvalidValueError,
    Solution,
    StructuralError,
    bin_index,
)
from .engine import (  # noqa: F401
    ContainerSpec,
    CuriosityConfig,
    Engine,
    MutationConfig,
    SharingStrategy,
    TrainingStrategy,
    mutate_polynomial,
    select_curiosity_roulette,
)
from .config import ExperimentConfig, build_preset, preset_names  # noqa: F401
from .postprocess import QuantileTransform  # noqa: F401
from .tasks import make_task  # noqa: F401
