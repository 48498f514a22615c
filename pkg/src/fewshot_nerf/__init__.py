"""Few-shot neural radiance fields with frequency-aligned rendering-loss regularization."""

from .config import TrainConfig, load_config
from .errors import ConfigError, DataError, DivergenceError

__all__ = ["TrainConfig", "load_config", "ConfigError", "DataError", "DivergenceError"]
__version__ = "0.1.0"
