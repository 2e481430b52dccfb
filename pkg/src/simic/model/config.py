#!/usr/bin/env python
# std-lib imports
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List

BACKBONES = ("residual", "compound", "depthwise")
ATTENTIONS = ("none", "additive", "mha")
MODES = ("full", "half")

# command-line names of the backbone families
BACKBONE_ALIASES = {"resnet": "residual", "effnet": "compound", "mobile": "depthwise"}

# compound-scaling constants of the EfficientNet family: depth and width bases
COMPOUND_DEPTH_BASE = 1.2
COMPOUND_WIDTH_BASE = 1.1

DOWNSAMPLING = 8


@dataclass
class ModelConfig:
    """
    Fully determines the architecture and its initial weights.

    `backbone` is one of residual, compound or depthwise; `attention` one of
    none, additive or mha; `mode` is full (predict width, height and radius)
    or half (width and height are inputs, radius is predicted).
    """

    backbone: str = "residual"
    attention: str = "none"
    mode: str = "full"
    embed_dim: int = 64
    heads: int = 4
    coord_channels: bool = True
    widths: List[int] = field(default_factory=lambda: [16, 32, 64])
    input_size: int = 64
    compound_phi: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.backbone = BACKBONE_ALIASES.get(self.backbone, self.backbone)
        self.widths = [int(w) for w in self.widths]
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.attention not in ATTENTIONS:
            raise ValueError(f"attention must be one of {ATTENTIONS}, got {self.attention!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.embed_dim < 1 or self.heads < 1:
            raise ValueError("embed_dim and heads must be positive")
        if self.attention == "mha" and self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if len(self.widths) != 3 or any(w < 1 for w in self.widths):
            raise ValueError(f"widths must list three positive stage widths, got {self.widths}")
        if self.input_size < DOWNSAMPLING:
            raise ValueError(f"input_size must be at least {DOWNSAMPLING}, got {self.input_size}")
        if self.compound_phi < 0:
            raise ValueError(f"compound_phi must be non-negative, got {self.compound_phi}")

    @property
    def outputs(self) -> int:
        return 3 if self.mode == "full" else 1

    @property
    def attention_heads(self) -> int:
        """Number of attention maps a forward pass produces."""
        if self.attention == "none":
            return 0
        return self.heads if self.attention == "mha" else 1

    @property
    def feature_size(self) -> int:
        return self.input_size // DOWNSAMPLING

    @property
    def name(self) -> str:
        return f"{self.backbone}/{self.attention}/{self.mode}"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown model config field(s): {', '.join(unknown)}")
        return cls(**values)

    def differing_fields(self, other: "ModelConfig") -> List[str]:
        mine, theirs = self.to_dict(), other.to_dict()
        return [name for name in mine if mine[name] != theirs[name]]
