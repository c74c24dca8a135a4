from .net import CheckpointError, EpisodeSample, NetConfig, PolicyValueNet

__all__ = ["CheckpointError", "EpisodeSample", "NetConfig", "PolicyValueNet"]
