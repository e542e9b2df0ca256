"""Training, checkpointing, export and the command-line interface."""
from .config import TrainConfig, from_dict, load_config
from .export import export_embeddings, read_embeddings
from .model import Batch, S4RecModel, Streams
from .trainer import Trainer, fit, load_trained

__all__ = ["TrainConfig", "from_dict", "load_config", "export_embeddings", "read_embeddings",
           "Batch", "S4RecModel", "Streams", "Trainer", "fit", "load_trained"]
