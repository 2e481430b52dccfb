from simic.training.optim import Adam, adam_step
from simic.training.trainer import TrainConfig, TrainLog, TrainResult, train
