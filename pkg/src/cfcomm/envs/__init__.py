from .particle import ParticleState, ParticleWorld
from .digits import (
    DigitDataset,
    DigitGame,
    DigitGameState,
    OracleAnswerer,
    load_idx_digits,
    parse_idx_images,
    parse_idx_labels,
    serialize_idx_images,
    serialize_idx_labels,
    synthetic_digits,
)

__all__ = [
    "ParticleState", "ParticleWorld", "DigitDataset", "DigitGame",
    "DigitGameState", "OracleAnswerer", "load_idx_digits", "parse_idx_images",
    "parse_idx_labels", "serialize_idx_images", "serialize_idx_labels",
    "synthetic_digits",
]
