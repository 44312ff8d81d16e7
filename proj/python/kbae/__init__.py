"""Knowledge-base autoencoder for RIS phase-shift feedback.

Thin wrapper over the compiled ``_kbae`` extension. Phase matrices are numpy
arrays; datasets have shape ``(count, M, M)`` with normalized values in [0, 1).
"""

from ._kbae import (
    ConfigError,
    DomainError,
    Error,
    FilesystemError,
    FormatError,
    Model,
    NumericError,
    RangeError,
    ShapeError,
    StateError,
    cascaded_gain,
    channel,
    cli,
    compression_stats,
    cosine_lr,
    decode_bits,
    encode_bits,
    generate_dataset,
    nearest_index,
    nmse,
    optimal_phase,
    train,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "Error",
    "FilesystemError",
    "FormatError",
    "Model",
    "NumericError",
    "RangeError",
    "ShapeError",
    "StateError",
    "cascaded_gain",
    "channel",
    "cli",
    "compression_stats",
    "cosine_lr",
    "decode_bits",
    "encode_bits",
    "generate_dataset",
    "nearest_index",
    "nmse",
    "optimal_phase",
    "train",
]
