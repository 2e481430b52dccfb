from simic.model.config import ModelConfig
from simic.model.normalizer import Normalizer
from simic.model.simic import ForwardOutput, SimicModel, add_coord_channels, build
