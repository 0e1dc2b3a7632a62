from .base import Box, Discrete, Environment, EpisodeFinished, argmax_action
from .cartpole import CartPoleEnv, CartPolePhysics, cartpole_dynamics
from .classify import accuracy, classify_episode, classify_logits
from .idx import IdxFormatError, ImageDataset, load_dataset, load_idx, write_idx
from .memory import MemoryLengthEnv, success_rate

__all__ = [
    "Box", "Discrete", "Environment", "EpisodeFinished", "argmax_action",
    "CartPoleEnv", "CartPolePhysics", "cartpole_dynamics",
    "accuracy", "classify_episode", "classify_logits",
    "IdxFormatError", "ImageDataset", "load_dataset", "load_idx", "write_idx",
    "MemoryLengthEnv", "success_rate",
]
