"""Entropy-corrected discrete choice models with a tri-partite RBM."""
__version__ = "0.1.0"

from .choice import choice_probabilities, predict, relative_beta, utilities
from .data import Dataset, EncodingSchema, VariableSpec, decode, encode, fit_schema, split
from .diagnostics import activation_stats, beta_sensitivity, empirical_kl, maxent, maxent_report, mutual_information
from .energy import ModelParams, entropy_term, free_energy, joint_energy, latent_posterior
from .errors import ConfigError, GenchoiceError, IngestionError, NumericalError, SchemaError
from .generator import distribution_report, generate, impute
from .trainer import TrainConfig, TrainState, train, validation_nll
