"""Multi-fidelity latent-space active learning for sequence design."""

from .autodiff import Adam, AdamState, NumericalError, ShapeError, Tensor
from .config import ConfigError, RunConfig, build_environment, load_config
from .controller import ActiveLearningRun, BudgetError, MultiFidelityDataset
from .generation import GenObjectiveConfig, MixtureParams, generate_high_scoring
from .latent import LatentGaussian, LatentHierarchy
from .model import ModelConfig, MultiFidelityModel
from .oracles import (
    OracleFailure,
    QueryRecord,
    SyntheticEnvConfig,
    SyntheticEnvironment,
    external_command_oracle,
)
from .report import RunResult, build_result, emit_run_report
from .sequences import Alphabet, Sequence, fingerprint_similarity
from .surrogate import SurrogatePosterior, SvgpSurrogate

__version__ = "0.1.0"

__all__ = [
    "ActiveLearningRun",
    "Adam",
    "AdamState",
    "Alphabet",
    "BudgetError",
    "ConfigError",
    "GenObjectiveConfig",
    "LatentGaussian",
    "LatentHierarchy",
    "MixtureParams",
    "ModelConfig",
    "MultiFidelityDataset",
    "MultiFidelityModel",
    "NumericalError",
    "OracleFailure",
    "QueryRecord",
    "RunConfig",
    "RunResult",
    "Sequence",
    "ShapeError",
    "SurrogatePosterior",
    "SvgpSurrogate",
    "SyntheticEnvConfig",
    "SyntheticEnvironment",
    "Tensor",
    "build_environment",
    "build_result",
    "emit_run_report",
    "external_command_oracle",
    "fingerprint_similarity",
    "generate_high_scoring",
    "load_config",
]
