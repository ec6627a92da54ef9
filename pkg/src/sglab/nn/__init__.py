from .checkpoint import load_checkpoint, save_checkpoint
from .graph import ValueGraph, backward
from .losses import CFM, DSM, RF_LOSS, Draws, cfm_target, draw, dsm_loss, dsm_loss_from_draws, flow_loss, flow_loss_from_draws, rf_target
from .net import EPS, SCORE, VELOCITY, NetField, ScoreNet, net_forward, time_embedding
from .optim import AdamState, adam_update
from .train import TrainConfig, TrainingDiverged, train

__all__ = [
    "CFM", "DSM", "EPS", "RF_LOSS", "SCORE", "VELOCITY",
    "AdamState", "Draws", "NetField", "ScoreNet", "TrainConfig", "TrainingDiverged", "ValueGraph",
    "adam_update", "backward", "cfm_target", "draw", "dsm_loss", "dsm_loss_from_draws",
    "flow_loss", "flow_loss_from_draws", "load_checkpoint", "net_forward", "rf_target",
    "save_checkpoint", "time_embedding", "train",
]
