"""Class-incremental learning on a data diet: warm-up, coreset selection, learning."""

from dietcl.errors import (
    ConfigError,
    ContractError,
    DietError,
    InputError,
    ParseError,
    ProtocolError,
    RefusalError,
    SchemaError,
    ShapeError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DietError",
    "InputError",
    "ParseError",
    "ProtocolError",
    "RefusalError",
    "SchemaError",
    "ShapeError",
    "TrainingError",
]
